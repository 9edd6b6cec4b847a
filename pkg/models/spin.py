"""
Closed-form physics of the electron-nitrogen dephasing pair.

The electron coherence of an NV centre whose nitrogen nuclear spin starts in a
diagonal population state (p1, p0, pm1) is modulated by the longitudinal
hyperfine coupling A_par and damped by a scalar bath envelope L(t):

    r(t) = sqrt(p0^2 + p1^2 + pm1^2 + 2 p0 (p1 + pm1) cos(A t) + 2 p1 pm1 cos(2 A t)) * |L(t)|

Units: time in microseconds, couplings as angular frequency in rad/us.
All values are immutable and every function here is pure.
"""
import math
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as npoly
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import DomainError

ArrayLike = Union[float, np.ndarray]

TWO_PI = 2.0 * math.pi
ENVELOPE_DEGREE = 5
POPULATION_TOL = 1e-12


def _as_output(values: np.ndarray) -> ArrayLike:
    """Return a Python float for 0-d results and the array otherwise."""
    if np.ndim(values) == 0:
        return float(values)
    return values


def _check_times(t: ArrayLike) -> np.ndarray:
    times = np.asarray(t, dtype=np.float64)
    if np.any(times < 0):
        raise DomainError("Times must be non-negative", {"min_time": float(np.min(times))})
    return times


def _check_probability(p: float, name: str = "p") -> float:
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise DomainError(f"{name} must lie in [0, 1], got {p}", {name: p})
    return float(p)


class NitrogenState(BaseModel):
    """Initial populations of the nitrogen nuclear spin in the m_I = +1, 0, -1 states."""

    model_config = ConfigDict(frozen=True)

    p1: float
    p0: float
    pm1: float

    @model_validator(mode="after")
    def _check_normalised(self) -> "NitrogenState":
        for name in ("p1", "p0", "pm1"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"population {name}={value} outside [0, 1]")
        total = self.p1 + self.p0 + self.pm1
        if abs(total - 1.0) > POPULATION_TOL:
            raise ValueError(f"populations sum to {total!r}, expected 1")
        return self

    def swapped(self) -> "NitrogenState":
        """Exchange the m_I = +1 and m_I = -1 populations (r(t) is invariant under this)."""
        return NitrogenState(p1=self.pm1, p0=self.p0, pm1=self.p1)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.p1, self.p0, self.pm1)


class DephasingEnvelope(BaseModel):
    """
    Bath decay factor L(t) = exp(-sum_i a_i t^i), i = 0..5.

    Attributes:
        coeffs: a_0..a_5 in us^-i, all non-negative.
        kind: "polynomial" for the general exponent, "gaussian" for exp(-(t/T2*)^2).
        t2_star: Gaussian decay time in us, only set for kind "gaussian".
    """

    model_config = ConfigDict(frozen=True)

    coeffs: Tuple[float, float, float, float, float, float] = (0.0,) * (ENVELOPE_DEGREE + 1)
    kind: Literal["polynomial", "gaussian"] = "polynomial"
    t2_star: Optional[float] = None

    @field_validator("coeffs")
    @classmethod
    def _check_coeffs(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not math.isfinite(a) or a < 0 for a in value):
            raise ValueError(f"envelope coefficients must be finite and non-negative, got {value}")
        return value

    @model_validator(mode="after")
    def _check_kind(self) -> "DephasingEnvelope":
        if self.kind == "gaussian":
            if self.t2_star is None or self.t2_star <= 0:
                raise ValueError("gaussian envelope requires t2_star > 0")
            expected = (0.0, 0.0, 1.0 / self.t2_star ** 2, 0.0, 0.0, 0.0)
            if self.coeffs != expected:
                raise ValueError("gaussian envelope must have a2 = 1/T2*^2 and all other a_i = 0")
        return self

    @classmethod
    def gaussian(cls, t2_star: float) -> "DephasingEnvelope":
        """Build the Gaussian envelope exp(-(t/T2*)^2)."""
        if t2_star <= 0:
            raise DomainError(f"t2_star must be positive, got {t2_star}")
        return cls(coeffs=(0.0, 0.0, 1.0 / t2_star ** 2, 0.0, 0.0, 0.0), kind="gaussian", t2_star=t2_star)

    @classmethod
    def polynomial(cls, coeffs) -> "DephasingEnvelope":
        """Build the general envelope from up to six coefficients a_0..a_5 (missing ones are 0)."""
        values = [float(a) for a in coeffs]
        if len(values) > ENVELOPE_DEGREE + 1:
            raise DomainError(f"at most {ENVELOPE_DEGREE + 1} envelope coefficients, got {len(values)}")
        values += [0.0] * (ENVELOPE_DEGREE + 1 - len(values))
        return cls(coeffs=tuple(values))

    @classmethod
    def unit(cls) -> "DephasingEnvelope":
        """L(t) = 1 for all t."""
        return cls()

    @property
    def is_unit(self) -> bool:
        return all(a == 0.0 for a in self.coeffs)


class HyperfineCoupling(BaseModel):
    """Longitudinal hyperfine coupling A_par stored as angular frequency (rad/us)."""

    model_config = ConfigDict(frozen=True)

    a_par: float = Field(gt=0)

    @classmethod
    def from_mhz(cls, frequency_mhz: float) -> "HyperfineCoupling":
        """Convert a coupling quoted in MHz into rad/us."""
        return cls(a_par=TWO_PI * frequency_mhz)

    @property
    def period(self) -> float:
        """Revival period 2 pi / A_par in us."""
        return TWO_PI / self.a_par


class ContrastModel(BaseModel):
    """Angle-dependent readout contrast C(phi) = c_a cos(c_nu phi) + c_b."""

    model_config = ConfigDict(frozen=True)

    c_a: float
    c_nu: float
    c_b: float

    @model_validator(mode="after")
    def _check_non_negative(self) -> "ContrastModel":
        if self.c_b - abs(self.c_a) < 0:
            raise ValueError(f"contrast can turn negative: c_b={self.c_b} < |c_a|={abs(self.c_a)}")
        return self


class PopulationModel(BaseModel):
    """Population left in the m_I = 0, 1 subspace, p(phi) = 1 - [p_b + p_a sin(p_nu phi + p_phi)]."""

    model_config = ConfigDict(frozen=True)

    p_a: float
    p_nu: float
    p_b: float
    p_phi: float

    @model_validator(mode="after")
    def _check_range(self) -> "PopulationModel":
        lo = self.p_b - abs(self.p_a)
        hi = self.p_b + abs(self.p_a)
        if lo < 0 or hi > 1:
            raise ValueError(f"p(phi) leaves [0, 1]: p_b={self.p_b}, p_a={self.p_a}")
        return self


class FidModelParams(BaseModel):
    """Parameters of the free-induction-decay likelihood: mean r(t) + d, noise std sigma."""

    model_config = ConfigDict(frozen=True)

    envelope: DephasingEnvelope
    p: float = Field(ge=0, le=1)
    phi: float
    coupling: HyperfineCoupling
    bias_d: float = 0.0
    sigma: float = Field(gt=0)

    @property
    def state(self) -> NitrogenState:
        return nitrogen_populations(self.p, self.phi)


class NmModelParams(BaseModel):
    """Parameters of the joint coherence / non-Markovianity model."""

    model_config = ConfigDict(frozen=True)

    contrast: ContrastModel
    population: PopulationModel
    coupling: HyperfineCoupling
    sigma_coh: float = Field(gt=0)
    sigma_nm: float = Field(gt=0)


def nitrogen_populations(p: float, phi: float) -> NitrogenState:
    """
    Populations after rotating a fraction p of the nitrogen spin by the mixing angle phi.

    Args:
        p: Population in the m_I = 0, 1 subspace, in [0, 1].
        phi: Mixing angle in radians; not wrapped.

    Returns:
        NitrogenState with p1 = p cos^2(phi/2), p0 = p sin^2(phi/2), pm1 = 1 - p.

    Raises:
        DomainError: If p is outside [0, 1].
    """
    p = _check_probability(p)
    half = 0.5 * phi
    return NitrogenState(p1=p * math.cos(half) ** 2, p0=p * math.sin(half) ** 2, pm1=1.0 - p)


def envelope_eval(env: DephasingEnvelope, t: ArrayLike) -> ArrayLike:
    """Evaluate L(t) = exp(-sum a_i t^i) for t >= 0."""
    times = _check_times(t)
    return _as_output(np.exp(-npoly.polyval(times, env.coeffs)))


def _bracket_from_populations(p1, p0, pm1, a_par: float, t: np.ndarray) -> np.ndarray:
    phase = a_par * t
    inner = (
        p0 * p0 + p1 * p1 + pm1 * pm1
        + 2.0 * p0 * (p1 + pm1) * np.cos(phase)
        + 2.0 * p1 * pm1 * np.cos(2.0 * phase)
    )
    return np.sqrt(np.maximum(inner, 0.0))


def _bracket_from_angle(p, phi, a_par: float, t: np.ndarray) -> np.ndarray:
    """Expanded r(t, phi) in terms of (p, phi) with a unit envelope."""
    phase = a_par * t
    cos_half_sq = np.cos(0.5 * phi) ** 2
    sin_half_sq = np.sin(0.5 * phi) ** 2
    inner = (
        2.0 * (1.0 - p) * p * np.cos(2.0 * phase) * cos_half_sq
        + (4.0 - p * (8.0 - 7.0 * p) + p * p * np.cos(2.0 * phi)) / 4.0
        + p * np.cos(phase) * (2.0 - p + p * np.cos(phi)) * sin_half_sq
    )
    return np.sqrt(np.maximum(inner, 0.0))


def bloch_length(
    state: NitrogenState,
    coupling: HyperfineCoupling,
    env: DephasingEnvelope,
    t: ArrayLike,
) -> ArrayLike:
    """
    Length of the electron Bloch vector r(t).

    Args:
        state: Initial nitrogen populations.
        coupling: Hyperfine coupling A_par.
        env: Bath envelope L(t).
        t: Time(s) in us, non-negative.

    Returns:
        r(t) in [0, 1], a float for scalar t and an array otherwise.
    """
    times = _check_times(t)
    bracket = _bracket_from_populations(state.p1, state.p0, state.pm1, coupling.a_par, times)
    return _as_output(bracket * np.exp(-npoly.polyval(times, env.coeffs)))


def bloch_length_phi(p: float, phi: float, coupling: HyperfineCoupling, t: ArrayLike) -> ArrayLike:
    """
    r(t, phi) for the (p, phi) parametrisation with a unit envelope.

    Raises:
        DomainError: If p is outside [0, 1].
    """
    p = _check_probability(p)
    times = _check_times(t)
    return _as_output(_bracket_from_angle(p, phi, coupling.a_par, times))


def contrast_eval(model: ContrastModel, phi: ArrayLike) -> ArrayLike:
    """C(phi) = c_a cos(c_nu phi) + c_b."""
    angles = np.asarray(phi, dtype=np.float64)
    return _as_output(model.c_a * np.cos(model.c_nu * angles) + model.c_b)


def population_eval(model: PopulationModel, phi: ArrayLike) -> ArrayLike:
    """p(phi) = 1 - [p_b + p_a sin(p_nu phi + p_phi)]."""
    angles = np.asarray(phi, dtype=np.float64)
    return _as_output(1.0 - (model.p_b + model.p_a * np.sin(model.p_nu * angles + model.p_phi)))


def revival_times(coupling: HyperfineCoupling, horizon: float) -> List[float]:
    """
    Full-revival times t_k = k 2 pi / A_par, k >= 1, up to the horizon.

    At every returned time the electron and nitrogen spins are in a product
    state, so r(t_k) equals the envelope value.

    Raises:
        DomainError: If the horizon is not positive.
    """
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    period = coupling.period
    count = int(math.floor(horizon / period * (1.0 + 1e-12)))
    return [k * period for k in range(1, count + 1) if k * period <= horizon * (1.0 + 1e-12)]


def nm_measure_closed_form(
    contrast: ContrastModel,
    population: PopulationModel,
    coupling: HyperfineCoupling,
    phi: ArrayLike,
    horizon: float,
) -> ArrayLike:
    """
    Modified non-Markovianity C(phi) [r(T, phi, p(phi)) - 1], vectorised over phi.

    Population values are clipped to [0, 1] so the formula stays total during inference.
    """
    angles = np.asarray(phi, dtype=np.float64)
    p = np.clip(population_eval(population, angles), 0.0, 1.0)
    r_end = _bracket_from_angle(p, angles, coupling.a_par, np.float64(horizon))
    return _as_output(contrast_eval(contrast, angles) * (r_end - 1.0))
