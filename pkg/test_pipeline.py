"""
Tests for the inference pipelines: fits, summaries and posterior-predictive bands.
"""
import math

import numpy as np
import pytest

import inference.pipeline as pipeline
from inference.likelihood import FID_NAMES, NM_NAMES, fid_params_to_vector, nm_params_to_vector
from inference.pipeline import (
    build_fid_model,
    build_nm_model,
    build_nm_predictive_model,
    fid_params_from_vector,
    fit_fid,
    fit_nm,
    initial_contrast_guess,
    nm_params_from_vector,
    nm_predictors,
    posterior_predictive,
)
from inference.samplers import PosteriorSamples, SamplerConfig, chain_seeds
from models.oracle import simulate_ramsey
from models.spin import (
    ContrastModel,
    DephasingEnvelope,
    FidModelParams,
    HyperfineCoupling,
    NmModelParams,
    PopulationModel,
    bloch_length_phi,
    population_eval,
)
from utils.errors import ConvergenceError, DomainError

SEED = 20180701
HORIZON = 1.226
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


def fid_trace(sigma=0.018, seed=SEED):
    truth = FID_TRUTH.model_copy(update={"sigma": sigma})
    return simulate_ramsey(truth, fid_times(), seed=seed, channels="magnitude")


def nm_dataset(n_phis=14, n_times=50, seed=SEED):
    times = np.linspace(0.0, HORIZON, n_times)
    coh_sets, points = [], []
    for phi, chain_seed in zip(np.linspace(0.0, 2 * math.pi, n_phis), chain_seeds(seed, n_phis)):
        trace = simulate_ramsey(NM_TRUTH, times, seed=chain_seed, phi=float(phi))
        coh_sets.append((float(phi), trace))
        points.append((float(phi), float(trace.magnitude[-1] - trace.magnitude[0])))
    return coh_sets, points


def stub_samples(names, center, n_chains=2, n_draws=200, offset=None, seed=0):
    """Gaussian draws around center; offset shifts every chain after the first."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    scale = 1e-3 * np.maximum(np.abs(center), 1e-6)
    draws = center + scale * rng.standard_normal((n_chains, n_draws, center.size))
    if offset is not None:
        draws[1:] += offset
    return PosteriorSamples.from_draws(list(names), draws)


# Round trips


@pytest.mark.slow
def test_fid_round_trip():
    result = fit_fid(fid_trace(), config=SamplerConfig(chains=4, iters=50_000, seed=SEED))
    summaries = result.summaries
    truth = {
        "p": 0.972,
        "phi": 0.191,
        "a_par": FID_TRUTH.coupling.a_par,
        "d": 0.0,
        "sigma": 0.018,
        "t2_star": 22.262,
    }
    for name, value in truth.items():
        summary = summaries[name]
        assert summary.hpd_lo <= value <= summary.hpd_hi, (name, summary)
    assert all(s.rhat < 1.05 for s in summaries.values() if not s.derived)
    width = summaries["t2_star"].hpd_hi - summaries["t2_star"].hpd_lo
    assert 0.99 / 3 <= width <= 0.99 * 3
    assert result.diagnostics.converged


@pytest.mark.slow
def test_fid_hpd_narrows_with_generator_noise():
    widths = []
    for sigma in (0.04, 0.018, 0.005):
        result = fit_fid(fid_trace(sigma), config=SamplerConfig(chains=2, iters=8000, seed=SEED), force=True)
        summary = result.summaries["a_par"]
        widths.append(summary.hpd_hi - summary.hpd_lo)
    assert widths[0] > widths[1] > widths[2]


@pytest.fixture(scope="module")
def nm_fit():
    coh_sets, points = nm_dataset()
    result = fit_nm(coh_sets, points, config=SamplerConfig(chains=4, iters=20_000, seed=SEED), force=True)
    return result, points


@pytest.mark.slow
def test_nm_round_trip(nm_fit):
    result, _ = nm_fit
    summaries = result.summaries
    assert summaries["c_b"].median == pytest.approx(0.261, rel=0.05)
    assert summaries["a_par"].median == pytest.approx(NM_TRUTH.coupling.a_par, rel=0.05)
    assert 0.891 - 0.02 <= summaries["p_at_zero"].median <= 0.943 + 0.02
    medians = np.array([summaries[name].median for name in NM_NAMES])
    p_zero = population_eval(nm_params_from_vector(medians).population, 0.0)
    assert 0.871 <= p_zero <= 0.963
    assert result.extras["horizon"] == pytest.approx(HORIZON)


@pytest.mark.slow
def test_nm_predictive_band_covers_observations(nm_fit):
    result, points = nm_fit
    phis = np.array([phi for phi, _ in points])
    observed = np.array([value for _, value in points])
    band = posterior_predictive(result.samples, result.model, phis, curve="nm", include_noise=True)
    inside = np.abs(observed - band.mean) <= 2 * band.predictive_std
    assert int(inside.sum()) >= 12
    assert np.all(band.mean <= 0)


# Fits and summaries


def test_fit_fid_summaries():
    result = fit_fid(fid_trace(), config=SamplerConfig(chains=2, iters=1000, seed=SEED), force=True)
    assert list(result.summaries)[: len(FID_NAMES)] == list(FID_NAMES)
    t2 = result.summaries["t2_star"]
    assert t2.derived and t2.unit == "us"
    assert t2.hpd_lo <= t2.median <= t2.hpd_hi
    assert result.summaries["a_par"].unit == "rad/us"
    assert result.diagnostics.chains == 2
    assert result.diagnostics.draws_per_chain == 500
    assert result.samples.draws.shape == (2, 500, len(FID_NAMES))


def test_fit_fid_with_hmc():
    config = SamplerConfig(chains=2, iters=300, seed=SEED, max_divergence_rate=1.0)
    result = fit_fid(fid_trace(), config=config, sampler="hmc", force=True)
    assert result.diagnostics.sampler == "hmc"
    assert len(result.diagnostics.divergences) == 2


def test_fit_rejects_unknown_sampler():
    with pytest.raises(DomainError):
        fit_fid(fid_trace(), config=SamplerConfig(chains=1, iters=10), sampler="gibbs")


def test_unconverged_chains_raise_unless_forced(monkeypatch):
    center = fid_params_to_vector(FID_TRUTH)
    offset = np.zeros(center.size)
    offset[FID_NAMES.index("a_par")] = 1.0
    split = stub_samples(FID_NAMES, center, offset=offset)
    monkeypatch.setattr(pipeline, "sample_mh", lambda model, config: split)

    with pytest.raises(ConvergenceError) as info:
        fit_fid(fid_trace())
    assert "a_par" in info.value.details["rhat"]

    result = fit_fid(fid_trace(), force=True)
    assert result.diagnostics.forced
    assert not result.diagnostics.converged
    assert result.diagnostics.max_rhat > 1.1


def test_fit_nm_small_run():
    coh_sets, points = nm_dataset(n_phis=6, n_times=20)
    result = fit_nm(coh_sets, points, config=SamplerConfig(chains=2, iters=600, seed=SEED), force=True)
    assert "p_at_zero" in result.summaries
    assert result.extras["horizon"] == pytest.approx(HORIZON)
    assert set(result.model.predictors) == {"nm", "population", "contrast", "nm_ideal"}


def test_initial_contrast_guess():
    coh_sets, _ = nm_dataset(n_phis=14, n_times=5)
    noiseless = [
        (phi, simulate_ramsey(NM_TRUTH, trace.times, seed=1, phi=phi, noise=0.0)) for phi, trace in coh_sets
    ]
    c_a, c_nu, c_b = initial_contrast_guess(noiseless)
    assert c_b == pytest.approx(0.261, abs=0.02)
    assert abs(c_a) <= c_b
    assert initial_contrast_guess(noiseless[:2]) is None


def test_nm_model_starts_from_contrast_guess():
    coh_sets, points = nm_dataset(n_phis=14, n_times=20)
    model = build_nm_model(coh_sets, points)
    assert model.priors["c_b"].init == pytest.approx(0.261, abs=0.05)
    assert np.isfinite(model.log_posterior(model.initial_point()))


def test_parameter_vectors_round_trip():
    fid = fid_params_from_vector(fid_params_to_vector(FID_TRUTH))
    assert fid.coupling.a_par == FID_TRUTH.coupling.a_par
    assert fid.envelope.coeffs == FID_TRUTH.envelope.coeffs
    nm = nm_params_from_vector(nm_params_to_vector(NM_TRUTH))
    assert nm == NM_TRUTH


# Posterior predictive


def test_predictive_band_with_few_draws():
    model = build_fid_model(fid_trace())
    samples = stub_samples(FID_NAMES, fid_params_to_vector(FID_TRUTH), n_chains=1, n_draws=50)
    grid = np.linspace(0.0, 45.0, 25)
    band = posterior_predictive(samples, model, grid, include_noise=True)
    assert band.curve == "coherence"
    assert band.n_draws == 50
    np.testing.assert_array_equal(band.lo, np.min([model.predict("coherence", th, grid) for th in samples.flat()], axis=0))
    assert np.all(band.lo <= band.mean) and np.all(band.mean <= band.hi)
    np.testing.assert_allclose(band.predictive_std ** 2, band.std ** 2 + np.mean(samples.marginal("sigma") ** 2))


def test_predictive_band_thins_to_max_draws():
    model = build_fid_model(fid_trace())
    samples = stub_samples(FID_NAMES, fid_params_to_vector(FID_TRUTH), n_chains=2, n_draws=500)
    band = posterior_predictive(samples, model, np.linspace(0.0, 10.0, 5), max_draws=200)
    assert band.n_draws == 200
    assert band.predictive_std is None
    assert np.all(band.lo <= band.hi)


def test_predictive_noise_needs_a_noise_parameter():
    model = build_fid_model(fid_trace())
    samples = stub_samples(FID_NAMES, fid_params_to_vector(FID_TRUTH), n_chains=1, n_draws=20)
    with pytest.raises(DomainError):
        posterior_predictive(samples, model, [1.0], curve="envelope", include_noise=True)


def test_nm_predictors():
    theta = nm_params_to_vector(NM_TRUTH)
    curves = nm_predictors(HORIZON)
    phis = np.linspace(0.0, 2 * math.pi, 100)
    assert np.all(curves["nm"](theta, phis) <= 0)
    ideal = curves["nm_ideal"](theta, np.array([math.pi / 2]))[0]
    expected = 0.261 * (abs(math.cos(NM_TRUTH.coupling.a_par * HORIZON / 2)) - 1.0)
    assert ideal == pytest.approx(expected, abs=1e-12)
    assert ideal == pytest.approx(0.261 * (bloch_length_phi(1.0, math.pi / 2, NM_TRUTH.coupling, HORIZON) - 1.0))
    with pytest.raises(DomainError):
        nm_predictors(0.0)


def test_nm_predictive_model_pushes_given_draws():
    model = build_nm_predictive_model(HORIZON)
    samples = PosteriorSamples.from_draws(list(NM_NAMES), nm_params_to_vector(NM_TRUTH)[None, :])
    band = posterior_predictive(samples, model, [0.0, math.pi], curve="population")
    np.testing.assert_allclose(band.mean, population_eval(NM_TRUTH.population, np.array([0.0, math.pi])))
    assert band.n_draws == 1
    assert np.all(band.std == 0)


def test_nm_predictive_mean_is_smooth_between_measured_angles():
    model = build_nm_predictive_model(HORIZON)
    samples = stub_samples(NM_NAMES, nm_params_to_vector(NM_TRUTH), n_draws=100)
    step = 40
    fine_grid = np.linspace(0.0, 2 * math.pi, 13 * step + 1)
    fine = posterior_predictive(samples, model, fine_grid, curve="nm").mean
    coarse = posterior_predictive(samples, model, fine_grid[::2], curve="nm").mean
    np.testing.assert_allclose(fine[::2], coarse, atol=1e-12)

    fine_curvature = np.abs(np.diff(fine, 2)).max()
    coarse_curvature = np.abs(np.diff(coarse, 2)).max()
    assert fine_curvature < 0.01
    assert 3.0 < coarse_curvature / fine_curvature < 5.0

    # Midpoints of the 14 measured angles stay within the interpolation bound h^2 f''/8
    h = fine_grid[1] - fine_grid[0]
    max_second_derivative = fine_curvature / h ** 2
    measured, midpoints = fine[::step], fine[step // 2 :: step]
    deviation = np.abs(midpoints - 0.5 * (measured[:-1] + measured[1:]))
    bound = (step * h) ** 2 / 8 * max_second_derivative
    assert np.all(deviation <= 1.5 * bound)
