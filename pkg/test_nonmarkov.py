"""
Tests for the non-Markovianity measures.
"""
import math

import numpy as np
import pytest

import models.nonmarkov as nonmarkov
from models.nonmarkov import (
    AnalyticTrajectory,
    SampledTrajectory,
    default_eps,
    detect_monotone_intervals,
    estimate_noise_std,
    measure_exact,
    measure_modified,
    measure_modified_from_data,
)
from models.oracle import simulate_ramsey
from models.spin import (
    ContrastModel,
    DephasingEnvelope,
    HyperfineCoupling,
    NmModelParams,
    PopulationModel,
    bloch_length_phi,
    contrast_eval,
)
from models.trace import CoherenceTrace
from utils.errors import DomainError

COUPLING = HyperfineCoupling.from_mhz(2.143)
NM_TRUTH = NmModelParams(
    contrast=ContrastModel(c_a=0.046, c_nu=1.030, c_b=0.261),
    population=PopulationModel(p_a=0.034, p_nu=1.738, p_b=0.102, p_phi=-0.528),
    coupling=HyperfineCoupling.from_mhz(2.169),
    sigma_coh=0.018,
    sigma_nm=0.018,
)


def test_markovian_baseline_is_zero():
    analytic = AnalyticTrajectory(
        p=1.0, phi=math.pi, coupling=COUPLING, envelope=DephasingEnvelope.gaussian(22.262), horizon=45.0
    )
    report = measure_exact(analytic)
    assert report.value == 0.0
    assert report.intervals == []

    times = np.linspace(0.0, 45.0, 10_000)
    values = analytic.evaluate(times)
    assert np.all(np.diff(values) < 0)
    assert measure_exact(SampledTrajectory(times=times, values=values), eps=0.0).value == 0.0


def test_half_angle_revivals():
    horizon = 1.226
    analytic = AnalyticTrajectory(p=1.0, phi=math.pi / 2, coupling=COUPLING, horizon=horizon)
    report = measure_exact(analytic)
    # Two full revivals from zero, then a partial rise up to the horizon
    expected = 2.0 + abs(math.cos(COUPLING.a_par * horizon / 2))
    assert report.value == pytest.approx(expected, abs=1e-6)
    assert len(report.intervals) == 3
    first = report.intervals[0]
    assert first.start == pytest.approx(COUPLING.period / 2, abs=1e-6)
    assert first.end == pytest.approx(COUPLING.period, abs=1e-6)
    assert all(interval.gain > 0 for interval in report.intervals)


def test_detect_monotone_intervals_matches_report():
    analytic = AnalyticTrajectory(p=0.9, phi=1.2, coupling=COUPLING, horizon=2.0)
    pairs = detect_monotone_intervals(analytic)
    report = measure_exact(analytic)
    assert pairs == [(iv.start, iv.end) for iv in report.intervals]
    assert all(a < b for a, b in pairs)


def test_grid_convergence():
    analytic = AnalyticTrajectory(
        p=0.95, phi=0.7, coupling=COUPLING, envelope=DephasingEnvelope.gaussian(5.0), horizon=3.0
    )
    coarse = measure_exact(analytic, grid_points=2001).value
    fine = measure_exact(analytic, grid_points=40001).value
    assert coarse > 0
    assert coarse == pytest.approx(fine, abs=1e-6)


def brute_force_measure(p, phi, coupling, horizon, points=10 ** 6):
    """Sum of positive increments of r on a dense uniform grid."""
    values = bloch_length_phi(p, phi, coupling, np.linspace(0.0, horizon, points))
    return float(np.sum(np.clip(np.diff(values), 0.0, None)))


@pytest.mark.parametrize(
    "p, phi, coupling, horizon",
    [
        (0.915, math.pi, HyperfineCoupling.from_mhz(2.169), 1.226),
        (0.3, 2.0, COUPLING, 2.5),
        (0.7, 0.9, COUPLING, 1.7),
        (0.95, 4.0, COUPLING, 3.0),
        (0.5, 5.5, COUPLING, 0.8),
        (0.2, 1.2, COUPLING, 2.2),
    ],
)
def test_exact_measure_matches_dense_grid_sum(p, phi, coupling, horizon):
    analytic = AnalyticTrajectory(p=p, phi=phi, coupling=coupling, horizon=horizon)
    report = measure_exact(analytic, eps=0.0)
    assert report.value > 0
    assert report.value == pytest.approx(brute_force_measure(p, phi, coupling, horizon), abs=1e-6)
    pairs = detect_monotone_intervals(analytic, eps=0.0)
    assert pairs == [(iv.start, iv.end) for iv in report.intervals]


def test_rises_far_below_refinement_precision_still_count():
    # p = 1 with a tiny mixing angle: r dips to cos(phi) at half a period and recovers by T
    phi = 2e-5
    analytic = AnalyticTrajectory(p=1.0, phi=phi, coupling=COUPLING, horizon=COUPLING.period)
    report = measure_exact(analytic, eps=0.0)
    assert report.value == pytest.approx(1.0 - math.cos(phi), rel=1e-3)
    assert report.value < 1e-9
    assert len(report.intervals) == 1


def test_sampled_trajectory_measure():
    times = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    values = np.array([1.0, 0.2, 0.9, 0.1, 0.5])
    report = measure_exact(SampledTrajectory(times=times, values=values), eps=0.0)
    assert report.value == pytest.approx(0.7 + 0.4)
    assert [(iv.start, iv.end) for iv in report.intervals] == [(1.0, 2.0), (3.0, 4.0)]


def test_eps_suppresses_small_rises():
    times = np.arange(6, dtype=float)
    values = np.array([1.0, 0.8, 0.81, 0.6, 0.61, 0.4])
    trajectory = SampledTrajectory(times=times, values=values)
    assert measure_exact(trajectory, eps=0.0).value == pytest.approx(0.02)
    assert measure_exact(trajectory, eps=0.05).value == 0.0


def test_noise_estimate_and_default_eps():
    rng = np.random.default_rng(4)
    times = np.linspace(0.0, 10.0, 5000)
    values = np.exp(-times / 5.0) + 0.01 * rng.standard_normal(times.size)
    assert estimate_noise_std(values) == pytest.approx(0.01, rel=0.1)
    trajectory = SampledTrajectory(times=times, values=values)
    assert default_eps(trajectory) == pytest.approx(2 * estimate_noise_std(values))
    assert default_eps(AnalyticTrajectory(p=1.0, phi=0.0, coupling=COUPLING, horizon=1.0)) == 0.0


def test_measure_errors():
    with pytest.raises(DomainError):
        measure_exact(SampledTrajectory(times=[0.0, 1.0], values=[1.0, 0.5]), eps=-1.0)
    with pytest.raises(DomainError):
        measure_exact(SampledTrajectory(times=[0.0], values=[1.0]), eps=0.0)
    with pytest.raises(DomainError):
        measure_modified(NM_TRUTH, 0.3, 0.0)


def test_modified_measure_is_non_positive():
    for phi in np.linspace(0, 2 * math.pi, 14):
        report = measure_modified(NM_TRUTH, float(phi), 1.226)
        assert report.value <= 0.0
        assert report.kind == "modified"


def test_telescoping_identity_on_noiseless_data():
    times = np.linspace(0.0, 1.226, 50)
    for phi in np.linspace(0, 2 * math.pi, 14):
        trace = simulate_ramsey(NM_TRUTH, times, seed=1, phi=float(phi), noise=0.0)
        contrast = float(contrast_eval(NM_TRUTH.contrast, phi))
        full = trace.rescaled(contrast)
        from_data = measure_modified_from_data(full, contrast)
        increments = contrast * float(np.sum(np.diff(full.magnitude)))
        assert from_data.value == pytest.approx(increments, abs=1e-12)
        assert from_data.value == pytest.approx(measure_modified(NM_TRUTH, float(phi), 1.226).value, abs=1e-12)


def test_modified_measure_from_data_on_recorded_trace():
    trace = CoherenceTrace(times=[0.0, 0.5, 1.0], x_channel=[1.0, 0.4, 0.8], phi=0.2)
    report = measure_modified_from_data(trace, 0.3)
    assert report.value == pytest.approx(0.3 * (0.8 - 1.0))
    assert report.phi == 0.2


def test_modified_measure_from_noisy_data_is_unbiased():
    phi, horizon = 1.3, 1.226
    times = np.linspace(0.0, horizon, 10)
    contrast = float(contrast_eval(NM_TRUTH.contrast, phi))
    values = np.array([
        measure_modified_from_data(
            simulate_ramsey(NM_TRUTH, times, seed=seed, phi=phi, channels="magnitude").rescaled(contrast),
            contrast,
        ).value
        for seed in range(1000)
    ])
    expected = measure_modified(NM_TRUTH, phi, horizon).value
    assert abs(values.mean() - expected) <= 3 * values.std(ddof=1) / math.sqrt(values.size)
    # Two independent endpoint samples, each with std sigma_coh
    assert values.std(ddof=1) == pytest.approx(math.sqrt(2) * 0.018, rel=0.1)


def test_modified_measure_is_smooth_in_phi():
    def curve(points):
        phis = np.linspace(0.0, 2 * math.pi, points)
        return np.array([measure_modified(NM_TRUTH, float(phi), 1.226).value for phi in phis])

    coarse, fine = curve(201), curve(401)
    np.testing.assert_allclose(fine[::2], coarse, atol=1e-12)
    second_coarse = np.max(np.abs(np.diff(coarse, 2)))
    second_fine = np.max(np.abs(np.diff(fine, 2)))
    assert second_coarse < 0.02
    # Halving the step quarters the second differences of a smooth curve
    assert 3.0 < second_coarse / second_fine < 5.0


def test_positive_modified_measure_is_rejected(monkeypatch):
    monkeypatch.setattr(nonmarkov, "nm_measure_closed_form", lambda *args: 1e-6)
    with pytest.raises(DomainError):
        measure_modified(NM_TRUTH, 0.3, 1.226)
    monkeypatch.setattr(nonmarkov, "nm_measure_closed_form", lambda *args: 5e-14)
    assert measure_modified(NM_TRUTH, 0.3, 1.226).value == 0.0
