"""
Tests for the closed-form spin model.
"""
import math

import numpy as np
import pytest

from models.spin import (
    ContrastModel,
    DephasingEnvelope,
    HyperfineCoupling,
    NitrogenState,
    PopulationModel,
    bloch_length,
    bloch_length_phi,
    contrast_eval,
    envelope_eval,
    nitrogen_populations,
    nm_measure_closed_form,
    population_eval,
    revival_times,
)
from utils.errors import DomainError

TABLE_CONTRAST = ContrastModel(c_a=0.046, c_nu=1.030, c_b=0.261)
TABLE_POPULATION = PopulationModel(p_a=0.034, p_nu=1.738, p_b=0.102, p_phi=-0.528)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_nitrogen_populations_limits():
    assert nitrogen_populations(1.0, 0.0).as_tuple() == pytest.approx((1.0, 0.0, 0.0))
    assert nitrogen_populations(1.0, math.pi).as_tuple() == pytest.approx((0.0, 1.0, 0.0), abs=1e-15)


def test_nitrogen_populations_fid_point():
    state = nitrogen_populations(0.972, 0.191)
    assert state.p1 == pytest.approx(0.972 * math.cos(0.0955) ** 2, abs=1e-15)
    assert state.p1 == pytest.approx(0.9632, abs=1e-4)
    assert state.p0 == pytest.approx(0.0088, abs=1e-4)
    assert state.pm1 == pytest.approx(0.028, abs=1e-15)
    assert sum(state.as_tuple()) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("p", [-0.01, 1.01])
def test_nitrogen_populations_rejects_p(p):
    with pytest.raises(DomainError):
        nitrogen_populations(p, 0.3)


def test_invalid_state_rejected():
    with pytest.raises(ValueError):
        NitrogenState(p1=0.5, p0=0.5, pm1=0.5)


def test_envelope_values():
    assert envelope_eval(DephasingEnvelope.unit(), 5.0) == 1.0
    assert envelope_eval(DephasingEnvelope.gaussian(22.262), 22.262) == pytest.approx(math.exp(-1.0), rel=1e-14)
    env = DephasingEnvelope.polynomial([0.0, 0.0, 0.002])
    assert envelope_eval(env, 10.0) == pytest.approx(math.exp(-0.2), rel=1e-14)


def test_envelope_rejects_negative_time():
    with pytest.raises(DomainError):
        envelope_eval(DephasingEnvelope.unit(), -1.0)


def test_bloch_length_single_population_follows_envelope():
    env = DephasingEnvelope.gaussian(5.0)
    state = NitrogenState(p1=0.0, p0=1.0, pm1=0.0)
    times = np.linspace(0.0, 10.0, 101)
    np.testing.assert_allclose(
        bloch_length(state, HyperfineCoupling.from_mhz(2.143), env, times), envelope_eval(env, times), atol=1e-15
    )


def test_bloch_length_collapse_point():
    coupling = HyperfineCoupling(a_par=3.0)
    state = NitrogenState(p1=0.5, p0=0.0, pm1=0.5)
    assert bloch_length(state, coupling, DephasingEnvelope.unit(), math.pi / (2 * 3.0)) == pytest.approx(0.0, abs=1e-8)


def test_bloch_length_phi_closed_forms():
    coupling = HyperfineCoupling.from_mhz(2.143)
    times = np.linspace(0.0, 3.0, 50)
    np.testing.assert_allclose(bloch_length_phi(1.0, 0.0, coupling, times), 1.0, atol=1e-12)
    np.testing.assert_allclose(
        bloch_length_phi(1.0, math.pi / 2, coupling, times), np.abs(np.cos(coupling.a_par * times / 2)), atol=1e-12
    )


def test_parametrisation_consistency(rng):
    for _ in range(1000):
        p, phi = rng.uniform(0, 1), rng.uniform(-2 * math.pi, 4 * math.pi)
        coupling = HyperfineCoupling(a_par=rng.uniform(0.5, 5.0) * 2 * math.pi)
        t = rng.uniform(0, 3)
        direct = bloch_length_phi(p, phi, coupling, t)
        composed = bloch_length(nitrogen_populations(p, phi), coupling, DephasingEnvelope.unit(), t)
        assert abs(direct - composed) < 1e-12


def test_normalisation_and_periodicity(rng):
    coupling = HyperfineCoupling.from_mhz(2.143)
    grid = np.linspace(0.0, 2.0, 400)
    for _ in range(50):
        state = nitrogen_populations(rng.uniform(0, 1), rng.uniform(0, 2 * math.pi))
        r = np.asarray(bloch_length(state, coupling, DephasingEnvelope.unit(), grid))
        assert r[0] == pytest.approx(1.0, abs=1e-12)
        assert np.all(r >= 0) and np.all(r <= 1 + 1e-12)
        shifted = np.asarray(bloch_length(state, coupling, DephasingEnvelope.unit(), grid + coupling.period))
        np.testing.assert_allclose(shifted, r, atol=1e-12)


def test_plus_minus_one_symmetry(rng):
    coupling = HyperfineCoupling.from_mhz(2.169)
    env = DephasingEnvelope.gaussian(22.262)
    grid = np.linspace(0.0, 5.0, 200)
    for _ in range(50):
        weights = rng.dirichlet([1.0, 1.0, 1.0])
        state = NitrogenState(p1=weights[0], p0=weights[1], pm1=1.0 - weights[0] - weights[1])
        np.testing.assert_allclose(
            bloch_length(state.swapped(), coupling, env, grid), bloch_length(state, coupling, env, grid), atol=1e-14
        )


def test_gaussian_single_population_is_strictly_decreasing():
    state = NitrogenState(p1=0.0, p0=1.0, pm1=0.0)
    r = np.asarray(
        bloch_length(state, HyperfineCoupling.from_mhz(2.143), DephasingEnvelope.gaussian(22.262), np.linspace(0, 40, 10_000))
    )
    assert np.all(np.diff(r) < 0)


def test_contrast_eval():
    assert contrast_eval(TABLE_CONTRAST, 0.0) == pytest.approx(0.307, abs=1e-12)
    assert contrast_eval(ContrastModel(c_a=0.0, c_nu=1.3, c_b=0.2), np.linspace(0, 6, 5)) == pytest.approx(0.2)
    assert contrast_eval(TABLE_CONTRAST, math.pi / (2 * 1.030)) == pytest.approx(0.261, abs=1e-12)


def test_population_eval():
    assert population_eval(TABLE_POPULATION, 0.0) == pytest.approx(0.915, abs=5e-4)
    flat = PopulationModel(p_a=0.0, p_nu=1.0, p_b=0.1, p_phi=0.0)
    assert population_eval(flat, np.array([0.0, 2.0])) == pytest.approx(0.9)
    sweep = np.asarray(population_eval(TABLE_POPULATION, np.linspace(0, 2 * math.pi, 100_001)))
    assert sweep.min() == pytest.approx(1 - 0.102 - 0.034, abs=1e-8)
    assert sweep.max() == pytest.approx(1 - 0.102 + 0.034, abs=1e-8)


def test_population_model_rejects_out_of_range():
    with pytest.raises(ValueError):
        PopulationModel(p_a=0.5, p_nu=1.0, p_b=0.6, p_phi=0.0)


def test_revival_times():
    assert revival_times(HyperfineCoupling(a_par=2 * math.pi), 2.5) == pytest.approx([1.0, 2.0])
    assert revival_times(HyperfineCoupling(a_par=2 * math.pi), 0.5) == []
    coupling = HyperfineCoupling.from_mhz(2.143)
    times = revival_times(coupling, 1.226)
    assert len(times) == 2
    for t in times:
        assert abs(bloch_length_phi(0.7, 1.1, coupling, t) - 1.0) < 1e-12


def test_revival_times_rejects_horizon():
    with pytest.raises(DomainError):
        revival_times(HyperfineCoupling(a_par=1.0), 0.0)


def test_modified_measure_closed_form_is_non_positive():
    coupling = HyperfineCoupling.from_mhz(2.169)
    values = np.asarray(
        nm_measure_closed_form(TABLE_CONTRAST, TABLE_POPULATION, coupling, np.linspace(0, 2 * math.pi, 100), 1.226)
    )
    assert np.all(values <= 1e-15)
    assert values.min() < -0.01
