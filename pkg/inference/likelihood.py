"""
Likelihoods of the FID and joint non-Markovianity models.

Both models fit the Bloch-vector length: magnitude data |x + iy| for quadrature
traces, the stored r channel for magnitude-only traces. Each function comes in a
typed form taking the parameter value objects, and a vector form used on the
sampler hot path.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.spin import (
    ENVELOPE_DEGREE,
    FidModelParams,
    NmModelParams,
    _bracket_from_angle,
)
from models.trace import CoherenceTrace
from utils.errors import DomainError

HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)

FID_NAMES = tuple(f"a{i}" for i in range(ENVELOPE_DEGREE + 1)) + ("p", "phi", "a_par", "d", "sigma")
NM_NAMES = ("c_a", "c_nu", "c_b", "p_a", "p_nu", "p_b", "p_phi", "a_par", "sigma_coh", "sigma_nm")

# Guard for the derivative of sqrt at the origin of the bracket
_MIN_BRACKET = 1e-300


def _normal_loglike(residuals: np.ndarray, sigma: float) -> float:
    return float(-residuals.size * (HALF_LOG_TWO_PI + math.log(sigma)) - 0.5 * np.dot(residuals, residuals) / sigma ** 2)


# FID model


def fid_params_to_vector(params: FidModelParams) -> np.ndarray:
    """Flatten FidModelParams into the FID_NAMES layout."""
    return np.array(
        list(params.envelope.coeffs)
        + [params.p, params.phi, params.coupling.a_par, params.bias_d, params.sigma],
        dtype=np.float64,
    )


def fid_mean(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Expected magnitude r(t) + d for a FID parameter vector."""
    coeffs = values[: ENVELOPE_DEGREE + 1]
    p, phi, a_par, d = values[ENVELOPE_DEGREE + 1 : ENVELOPE_DEGREE + 5]
    exponent = np.polynomial.polynomial.polyval(times, coeffs)
    return _bracket_from_angle(p, phi, a_par, times) * np.exp(-exponent) + d


def fid_loglike_vector(values: np.ndarray, times: np.ndarray, data: np.ndarray) -> float:
    """Vector-form FID log-likelihood; -inf when sigma <= 0 or p leaves [0, 1]."""
    p, sigma = values[ENVELOPE_DEGREE + 1], values[-1]
    if not sigma > 0 or not 0.0 <= p <= 1.0:
        return -math.inf
    return _normal_loglike(data - fid_mean(values, times), sigma)


def fid_loglike_grad(values: np.ndarray, times: np.ndarray, data: np.ndarray) -> np.ndarray:
    """
    Analytic gradient of fid_loglike_vector with respect to the FID_NAMES layout.

    With p1 = p cos^2(phi/2), p0 = p sin^2(phi/2), pm1 = 1 - p and Q the bracket
    under the square root, r = sqrt(Q) L and each partial follows from dr/dx = L dQ/dx / (2 sqrt(Q)).
    """
    n_env = ENVELOPE_DEGREE + 1
    coeffs = values[:n_env]
    p, phi, a_par, d, sigma = values[n_env:]

    cos_half_sq = math.cos(0.5 * phi) ** 2
    sin_half_sq = math.sin(0.5 * phi) ** 2
    p1, p0, pm1 = p * cos_half_sq, p * sin_half_sq, 1.0 - p

    phase = a_par * times
    c1, c2 = np.cos(phase), np.cos(2.0 * phase)
    s1, s2 = np.sin(phase), np.sin(2.0 * phase)

    q = p0 ** 2 + p1 ** 2 + pm1 ** 2 + 2.0 * p0 * (p1 + pm1) * c1 + 2.0 * p1 * pm1 * c2
    q = np.maximum(q, 0.0)
    root = np.sqrt(q)
    envelope = np.exp(-np.polynomial.polynomial.polyval(times, coeffs))
    r = root * envelope

    residual = data - (r + d)
    weight = residual / sigma ** 2
    dr_dq = envelope / (2.0 * np.maximum(root, _MIN_BRACKET))

    dq_dp1 = 2.0 * p1 + 2.0 * p0 * c1 + 2.0 * pm1 * c2
    dq_dp0 = 2.0 * p0 + 2.0 * (p1 + pm1) * c1
    dq_dpm1 = 2.0 * pm1 + 2.0 * p0 * c1 + 2.0 * p1 * c2

    dq_dp = dq_dp1 * cos_half_sq + dq_dp0 * sin_half_sq - dq_dpm1
    dq_dphi = 0.5 * p * math.sin(phi) * (dq_dp0 - dq_dp1)
    dq_da = -2.0 * p0 * (p1 + pm1) * times * s1 - 4.0 * p1 * pm1 * times * s2

    grad = np.empty(values.size)
    for i in range(n_env):
        grad[i] = -np.dot(weight, r * times ** i)
    grad[n_env] = np.dot(weight, dr_dq * dq_dp)
    grad[n_env + 1] = np.dot(weight, dr_dq * dq_dphi)
    grad[n_env + 2] = np.dot(weight, dr_dq * dq_da)
    grad[n_env + 3] = np.sum(weight)
    grad[n_env + 4] = -residual.size / sigma + np.dot(residual, residual) / sigma ** 3
    return grad


def log_likelihood_fid(theta: FidModelParams, data: CoherenceTrace) -> float:
    """
    Gaussian log-likelihood of a FID record with mean r(t) + d and std sigma.

    Args:
        theta: FID model parameters.
        data: Trace whose magnitude is fitted.

    Returns:
        sum_j log N(x_j | r(t_j) + d, sigma^2).

    Raises:
        DomainError: If sigma is not positive or the trace is empty.
    """
    if not theta.sigma > 0:
        raise DomainError(f"sigma must be positive, got {theta.sigma}")
    if len(data) == 0:
        raise DomainError("cannot evaluate a likelihood on an empty trace")
    return fid_loglike_vector(fid_params_to_vector(theta), data.times, data.magnitude)


# Joint NM model


@dataclass(frozen=True)
class NmDataset:
    """
    Coherence traces and modified-measure points flattened for vectorised evaluation.

    Attributes:
        times: Concatenated time grids of all traces.
        phis: Mixing angle of each concatenated sample.
        values: Concatenated magnitudes.
        nm_phis: Angles of the modified-measure points.
        nm_values: Observed modified-measure values.
        horizon: Total evolution time T used for the modified measure.
    """

    times: np.ndarray
    phis: np.ndarray
    values: np.ndarray
    nm_phis: np.ndarray
    nm_values: np.ndarray
    horizon: float

    @property
    def n_traces(self) -> int:
        return int(np.unique(self.phis).size) if self.phis.size else 0

    @classmethod
    def build(
        cls,
        coh_sets: Sequence[Tuple[float, CoherenceTrace]],
        nm_points: Sequence[Tuple[float, float]],
        horizon: Optional[float] = None,
    ) -> "NmDataset":
        """
        Flatten (phi, trace) pairs and (phi, value) points.

        The horizon defaults to the latest time over all traces.

        Raises:
            DomainError: If there is no data at all or the horizon cannot be determined.
        """
        if not coh_sets and not nm_points:
            raise DomainError("the NM likelihood needs at least one coherence trace or N' point")
        times: List[np.ndarray] = []
        phis: List[np.ndarray] = []
        values: List[np.ndarray] = []
        for phi, trace in coh_sets:
            times.append(trace.times)
            phis.append(np.full(len(trace), float(phi)))
            values.append(trace.magnitude)
        if horizon is None:
            if not coh_sets:
                raise DomainError("a horizon is required when no coherence traces are given")
            horizon = max(float(trace.times[-1]) for _, trace in coh_sets)
        if horizon <= 0:
            raise DomainError(f"horizon must be positive, got {horizon}")
        empty = np.empty(0)
        return cls(
            times=np.concatenate(times) if times else empty,
            phis=np.concatenate(phis) if phis else empty,
            values=np.concatenate(values) if values else empty,
            nm_phis=np.array([float(phi) for phi, _ in nm_points]),
            nm_values=np.array([float(value) for _, value in nm_points]),
            horizon=float(horizon),
        )


def nm_params_to_vector(params: NmModelParams) -> np.ndarray:
    """Flatten NmModelParams into the NM_NAMES layout."""
    c, pop = params.contrast, params.population
    return np.array(
        [c.c_a, c.c_nu, c.c_b, pop.p_a, pop.p_nu, pop.p_b, pop.p_phi,
         params.coupling.a_par, params.sigma_coh, params.sigma_nm],
        dtype=np.float64,
    )


def nm_contrast(values: np.ndarray, phi) -> np.ndarray:
    c_a, c_nu, c_b = values[0], values[1], values[2]
    return c_a * np.cos(c_nu * np.asarray(phi, dtype=np.float64)) + c_b


def nm_population(values: np.ndarray, phi) -> np.ndarray:
    p_a, p_nu, p_b, p_phi = values[3], values[4], values[5], values[6]
    return 1.0 - (p_b + p_a * np.sin(p_nu * np.asarray(phi, dtype=np.float64) + p_phi))


def nm_measure(values: np.ndarray, phi, horizon: float) -> np.ndarray:
    """Modified measure C(phi) [r(T, phi, p(phi)) - 1] for an NM parameter vector."""
    angles = np.asarray(phi, dtype=np.float64)
    p = np.clip(nm_population(values, angles), 0.0, 1.0)
    return nm_contrast(values, angles) * (_bracket_from_angle(p, angles, values[7], np.float64(horizon)) - 1.0)


def nm_structurally_valid(values: np.ndarray) -> bool:
    """Contrast non-negative and p(phi) inside [0, 1] for every angle."""
    c_a, c_b, p_a, p_b = values[0], values[2], values[3], values[5]
    return c_b - abs(c_a) >= 0 and p_b - abs(p_a) >= 0 and p_b + abs(p_a) <= 1


def nm_loglike_vector(values: np.ndarray, dataset: NmDataset) -> float:
    """Vector-form joint log-likelihood; -inf outside the structural constraints."""
    sigma_coh, sigma_nm = values[8], values[9]
    if not (sigma_coh > 0 and sigma_nm > 0) or not nm_structurally_valid(values):
        return -math.inf
    total = 0.0
    if dataset.times.size:
        p = nm_population(values, dataset.phis)
        mean = nm_contrast(values, dataset.phis) * _bracket_from_angle(p, dataset.phis, values[7], dataset.times)
        total += _normal_loglike(dataset.values - mean, sigma_coh)
    if dataset.nm_values.size:
        total += _normal_loglike(dataset.nm_values - nm_measure(values, dataset.nm_phis, dataset.horizon), sigma_nm)
    return float(total)


def log_likelihood_nm(
    theta: NmModelParams,
    coh_sets: Sequence[Tuple[float, CoherenceTrace]],
    nm_points: Sequence[Tuple[float, float]],
    horizon: Optional[float] = None,
) -> float:
    """
    Joint log-likelihood of contrast-scaled coherence traces and modified-measure points.

    The coherence term has mean C(phi) r(t, phi, p(phi)) and std sigma_coh per sample;
    the N' term has mean C(phi) [r(T, phi, p(phi)) - 1] and std sigma_nm per point.

    Args:
        theta: Joint model parameters.
        coh_sets: (phi, trace) pairs in contrast units.
        nm_points: (phi, N') observations.
        horizon: T of the N' points; defaults to the latest trace time.

    Returns:
        The summed log-likelihood.

    Raises:
        DomainError: If a noise std is not positive or there is no data.
    """
    if not theta.sigma_coh > 0 or not theta.sigma_nm > 0:
        raise DomainError("sigma_coh and sigma_nm must be positive")
    dataset = NmDataset.build(coh_sets, nm_points, horizon)
    return nm_loglike_vector(nm_params_to_vector(theta), dataset)

