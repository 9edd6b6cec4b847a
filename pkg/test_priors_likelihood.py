"""
Tests for priors, transforms, likelihoods and ProbModel.
"""
import math

import numpy as np
import pytest
from scipy import stats

from inference.likelihood import (
    FID_NAMES,
    NM_NAMES,
    NmDataset,
    fid_loglike_grad,
    fid_loglike_vector,
    fid_mean,
    fid_params_to_vector,
    log_likelihood_fid,
    log_likelihood_nm,
    nm_loglike_vector,
    nm_params_to_vector,
)
from inference.model import ProbModel
from inference.pipeline import build_fid_model, build_nm_model
from inference.priors import (
    PriorEntry,
    PriorSpec,
    default_fid_priors,
    default_nm_priors,
    log_prior,
    log_prior_unconstrained,
)
from models.oracle import expected_magnitude, simulate_ramsey
from models.spin import (
    ContrastModel,
    DephasingEnvelope,
    FidModelParams,
    HyperfineCoupling,
    NmModelParams,
    PopulationModel,
)
from models.trace import CoherenceTrace
from utils.errors import DomainError

FID_TRUTH = FidModelParams(
    envelope=DephasingEnvelope.gaussian(22.262),
    p=0.972,
    phi=0.191,
    coupling=HyperfineCoupling.from_mhz(2.143),
    sigma=0.018,
)
NM_TRUTH = NmModelParams(
    contrast=ContrastModel(c_a=0.046, c_nu=1.030, c_b=0.261),
    population=PopulationModel(p_a=0.034, p_nu=1.738, p_b=0.102, p_phi=-0.528),
    coupling=HyperfineCoupling.from_mhz(2.169),
    sigma_coh=0.018,
    sigma_nm=0.018,
)


def fid_times():
    return np.concatenate([np.linspace(0.0, 1.5, 30), np.linspace(2.0, 45.0, 30)])


@pytest.fixture
def fid_trace():
    return simulate_ramsey(FID_TRUTH, fid_times(), seed=20180701, channels="magnitude")


@pytest.fixture
def nm_data():
    times = np.linspace(0.0, 1.226, 20)
    coh_sets = []
    points = []
    for i, phi in enumerate(np.linspace(0.0, 2 * math.pi, 6)):
        trace = simulate_ramsey(NM_TRUTH, times, seed=100 + i, phi=float(phi))
        coh_sets.append((float(phi), trace))
        points.append((float(phi), float(trace.magnitude[-1] - trace.magnitude[0])))
    return coh_sets, points


# Priors


def test_prior_densities_match_scipy():
    normal = PriorEntry.normal(1.0, 0.3)
    half = PriorEntry.half_normal(0.5)
    uniform = PriorEntry.uniform(-1.0, 3.0)
    for x in (-0.4, 0.2, 1.7):
        assert normal.log_density(x) == pytest.approx(stats.norm(1.0, 0.3).logpdf(x), rel=1e-12)
        assert uniform.log_density(x) == pytest.approx(stats.uniform(-1.0, 4.0).logpdf(x), rel=1e-12)
    for x in (0.01, 0.5, 2.0):
        assert half.log_density(x) == pytest.approx(stats.halfnorm(scale=0.5).logpdf(x), rel=1e-12)
    assert half.log_density(-0.1) == -math.inf
    assert uniform.log_density(3.5) == -math.inf


def test_prior_entry_validation():
    with pytest.raises(ValueError):
        PriorEntry.normal(0.0, 0.0)
    with pytest.raises(ValueError):
        PriorEntry.uniform(1.0, 1.0)
    with pytest.raises(ValueError):
        PriorEntry.half_normal(1.0, transform="identity")
    with pytest.raises(ValueError):
        PriorEntry.uniform(0.0, 1.0, init=2.0)


@pytest.mark.parametrize(
    "entry, theta",
    [
        (PriorEntry.normal(0.5, 2.0), -1.3),
        (PriorEntry.half_normal(0.1), 0.07),
        (PriorEntry.uniform(0.0, 1.0), 0.83),
        (PriorEntry.uniform(-2.0, 5.0), 4.0),
    ],
)
def test_transform_round_trip_and_jacobian(entry, theta):
    z = entry.to_unconstrained(theta)
    assert entry.to_constrained(z) == pytest.approx(theta, rel=1e-12)
    h = 1e-6
    numeric = (entry.to_constrained(z + h) - entry.to_constrained(z - h)) / (2 * h)
    assert entry.dtheta_dz(z) == pytest.approx(numeric, rel=1e-6)
    assert entry.log_jacobian(z) == pytest.approx(math.log(abs(numeric)), abs=1e-6)
    assert entry.log_jacobian_theta(theta) == pytest.approx(entry.log_jacobian(z), abs=1e-9)


def test_log_prior_with_and_without_jacobian():
    spec = PriorSpec(entries={"a": PriorEntry.normal(0.0, 1.0), "s": PriorEntry.half_normal(2.0)})
    theta = {"a": 0.3, "s": 0.5}
    plain = log_prior(theta, spec, include_jacobian=False)
    assert plain == pytest.approx(stats.norm.logpdf(0.3) + stats.halfnorm(scale=2.0).logpdf(0.5), rel=1e-12)
    assert log_prior(theta, spec) == pytest.approx(plain + math.log(0.5), rel=1e-12)
    z = spec.to_unconstrained(spec.as_vector(theta))
    assert log_prior_unconstrained(z, spec) == pytest.approx(log_prior(theta, spec), rel=1e-12)
    assert log_prior({"a": 0.3, "s": -1.0}, spec) == -math.inf


def test_log_prior_dimension_mismatch():
    spec = default_fid_priors()
    with pytest.raises(DomainError):
        log_prior(np.zeros(spec.dim - 1), spec)
    with pytest.raises(DomainError):
        log_prior({"a0": 0.1}, spec)


def test_prior_overrides():
    spec = default_fid_priors().merged({"sigma": PriorEntry.half_normal(0.05, init=0.02)})
    assert spec["sigma"].sigma == 0.05
    assert spec.names == list(FID_NAMES)
    with pytest.raises(DomainError):
        default_fid_priors().merged({"T2": PriorEntry.half_normal(1.0)})


def test_default_priors_cover_layouts():
    assert default_fid_priors().names == list(FID_NAMES)
    assert default_nm_priors().names == list(NM_NAMES)
    for spec in (default_fid_priors(), default_nm_priors()):
        assert np.all(np.isfinite(spec.initial_unconstrained()))



def test_phi_prior_is_symmetric_unless_folded():
    phi = default_fid_priors()["phi"]
    assert (phi.kind, phi.transform, phi.mu) == ("normal", "identity", 0.0)
    assert phi.log_density(-0.4) == pytest.approx(phi.log_density(0.4))
    folded = default_fid_priors(fold_phi=True)["phi"]
    assert (folded.kind, folded.transform) == ("half_normal", "log")
    assert folded.sigma == phi.sigma
    assert default_fid_priors(fold_phi=True).names == list(FID_NAMES)


# Likelihoods


def test_fid_likelihood_matches_direct_sum(fid_trace):
    value = log_likelihood_fid(FID_TRUTH, fid_trace)
    mean = fid_mean(fid_params_to_vector(FID_TRUTH), fid_trace.times)
    direct = float(np.sum(stats.norm(mean, 0.018).logpdf(fid_trace.magnitude)))
    assert value == pytest.approx(direct, rel=1e-10)


def test_fid_likelihood_prefers_truth(fid_trace):
    truth = log_likelihood_fid(FID_TRUTH, fid_trace)
    shifted = FID_TRUTH.model_copy(update={"coupling": HyperfineCoupling.from_mhz(2.3)})
    assert truth > log_likelihood_fid(shifted, fid_trace)


def test_fid_likelihood_invalid_sigma(fid_trace):
    values = fid_params_to_vector(FID_TRUTH)
    values[-1] = 0.0
    assert fid_loglike_vector(values, fid_trace.times, fid_trace.magnitude) == -math.inf


def test_fid_analytic_gradient_matches_finite_differences(fid_trace):
    values = fid_params_to_vector(FID_TRUTH)
    values[0] = 1e-3
    values[1] = 2e-4
    analytic = fid_loglike_grad(values, fid_trace.times, fid_trace.magnitude)
    t_max = float(fid_trace.times[-1])
    for i in range(values.size):
        # Envelope coefficients multiply t^i, so their steps shrink with the time span
        h = 1e-6 / t_max ** i if i < 6 else 1e-7 * max(1.0, abs(values[i]))
        up, down = values.copy(), values.copy()
        up[i] += h
        down[i] -= h
        numeric = (
            fid_loglike_vector(up, fid_trace.times, fid_trace.magnitude)
            - fid_loglike_vector(down, fid_trace.times, fid_trace.magnitude)
        ) / (2 * h)
        assert abs(analytic[i] - numeric) <= 1e-3 * max(1.0, abs(analytic[i])), FID_NAMES[i]


def test_nm_likelihood_prefers_truth(nm_data):
    coh_sets, points = nm_data
    truth = log_likelihood_nm(NM_TRUTH, coh_sets, points)
    wrong = NM_TRUTH.model_copy(update={"contrast": ContrastModel(c_a=0.046, c_nu=1.030, c_b=0.3)})
    assert np.isfinite(truth)
    assert truth > log_likelihood_nm(wrong, coh_sets, points)


def test_fid_likelihood_at_the_mean_with_unit_noise():
    truth = FID_TRUTH.model_copy(update={"sigma": 1.0})
    times = fid_times()
    trace = CoherenceTrace(times=times, x_channel=fid_mean(fid_params_to_vector(truth), times))
    expected = -times.size * 0.5 * math.log(2 * math.pi)
    assert log_likelihood_fid(truth, trace) == pytest.approx(expected, rel=1e-12)


def test_fid_likelihood_invariant_under_common_offset(fid_trace):
    delta = 0.037
    shifted_trace = CoherenceTrace(times=fid_trace.times, x_channel=fid_trace.magnitude + delta)
    shifted_params = FID_TRUTH.model_copy(update={"bias_d": FID_TRUTH.bias_d + delta})
    assert log_likelihood_fid(shifted_params, shifted_trace) == pytest.approx(
        log_likelihood_fid(FID_TRUTH, fid_trace), rel=1e-10
    )


def test_nm_likelihood_without_points_is_the_coherence_term(nm_data):
    coh_sets, _ = nm_data
    direct = sum(
        float(np.sum(stats.norm(expected_magnitude(NM_TRUTH, phi, trace.times), NM_TRUTH.sigma_coh)
                     .logpdf(trace.magnitude)))
        for phi, trace in coh_sets
    )
    assert log_likelihood_nm(NM_TRUTH, coh_sets, []) == pytest.approx(direct, rel=1e-10)


def test_nm_dataset_horizon_and_shapes(nm_data):
    coh_sets, points = nm_data
    dataset = NmDataset.build(coh_sets, points)
    assert dataset.horizon == pytest.approx(1.226)
    assert dataset.n_traces == 6
    assert dataset.times.size == dataset.values.size == 6 * 20
    with pytest.raises(DomainError):
        NmDataset.build([], [])
    with pytest.raises(DomainError):
        NmDataset.build([], points)


def test_nm_likelihood_rejects_structural_violations(nm_data):
    coh_sets, points = nm_data
    dataset = NmDataset.build(coh_sets, points)
    values = nm_params_to_vector(NM_TRUTH)
    values[0] = 0.5  # |c_a| > c_b
    assert nm_loglike_vector(values, dataset) == -math.inf


# ProbModel


def test_prob_model_invariance_under_constant_shift(fid_trace):
    base = build_fid_model(fid_trace)
    shifted = ProbModel(base.priors, lambda theta: base.loglike(theta) + 123.0, name="shifted")
    z = base.initial_point()
    assert shifted.log_posterior(z) - base.log_posterior(z) == pytest.approx(123.0, rel=1e-9)


def test_prob_model_gradient_matches_finite_differences(fid_trace):
    model = build_fid_model(fid_trace)
    assert model.has_analytic_gradient
    z = model.initial_point()
    analytic = model.grad_log_posterior(z)
    numeric = model.fd_grad_log_posterior(z, step=1e-7)
    for i in range(model.dim):
        assert abs(analytic[i] - numeric[i]) <= 1e-3 * max(1.0, abs(analytic[i])), model.names[i]


def test_prob_model_rejects_wrong_dimension(fid_trace):
    model = build_fid_model(fid_trace)
    with pytest.raises(DomainError):
        model.log_posterior(np.zeros(3))


def test_map_improves_on_start(fid_trace):
    model = build_fid_model(fid_trace)
    start = model.initial_point()
    best = model.find_map(max_iter=500)
    assert model.log_posterior(best) >= model.log_posterior(start)


def test_predictors(fid_trace, nm_data):
    fid = build_fid_model(fid_trace)
    theta = fid_params_to_vector(FID_TRUTH)
    np.testing.assert_allclose(fid.predict("envelope", theta, np.array([22.262])), [math.exp(-1.0)], rtol=1e-12)
    with pytest.raises(DomainError):
        fid.predict("unknown", theta, np.array([0.0]))

    coh_sets, points = nm_data
    nm = build_nm_model(coh_sets, points)
    values = nm_params_to_vector(NM_TRUTH)
    assert nm.predict("population", values, np.array([0.0]))[0] == pytest.approx(0.915, abs=5e-4)
    assert nm.predict("contrast", values, np.array([0.0]))[0] == pytest.approx(0.307, abs=1e-12)
    assert np.all(nm.predict("nm", values, np.linspace(0, 2 * math.pi, 30)) <= 0)
