"""
Brute-force reference for the analytic coherence model, and synthetic Ramsey data.

The nitrogen spin is propagated explicitly with the conditional Hamiltonians of
the two electron branches (m_s = 0 and m_s = -1) in the {|+1>, |0>, |-1>} basis,
and the electron coherence is read off as

    c(t) = L(t) Tr[rho_N U_msm1(t)^dagger]

which must agree in magnitude with models.spin.bloch_length.

Synthetic data use numpy's Philox counter-based bit generator so that a seed
reproduces the same trace on every platform.
"""
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.linalg import expm

from models.spin import (
    DephasingEnvelope,
    FidModelParams,
    HyperfineCoupling,
    NmModelParams,
    NitrogenState,
    _bracket_from_angle,
    contrast_eval,
    envelope_eval,
    nitrogen_populations,
    population_eval,
)
from models.trace import CoherenceTrace, Normalization
from utils.errors import DomainError
from utils.logging_utils import setup_logger

# Configure logging
logger = setup_logger("oracle", "oracle.log")

# Nuclear spin-1 I_z in the {|+1>, |0>, |-1>} basis
I_Z = np.diag([1.0, 0.0, -1.0]).astype(np.complex128)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

Branch = Literal["ms0", "msm1"]


def make_rng(seed: int) -> np.random.Generator:
    """Seeded Philox generator used for every synthetic draw."""
    return np.random.Generator(np.random.Philox(int(seed)))


class NuclearDensityMatrix(BaseModel):
    """3x3 density matrix of the nitrogen spin in the {|+1>, |0>, |-1>} basis."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def _check_matrix(cls, value) -> np.ndarray:
        rho = np.array(value, dtype=np.complex128, copy=True)
        if rho.shape != (3, 3):
            raise ValueError(f"density matrix must be 3x3, got shape {rho.shape}")
        if not np.allclose(rho, rho.conj().T, atol=HERMITIAN_TOL, rtol=0.0):
            raise ValueError("density matrix is not Hermitian")
        trace = np.trace(rho)
        if abs(trace - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix trace is {trace}, expected 1")
        eigenvalues = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
        if eigenvalues.min() < -PSD_TOL:
            raise ValueError(f"density matrix is not positive semidefinite (min eigenvalue {eigenvalues.min()})")
        rho.setflags(write=False)
        return rho

    @classmethod
    def from_state(cls, state: NitrogenState) -> "NuclearDensityMatrix":
        """Diagonal density matrix diag(p1, p0, pm1)."""
        return cls(matrix=np.diag([state.p1, state.p0, state.pm1]))

    @property
    def populations(self) -> NitrogenState:
        diagonal = np.real(np.diag(self.matrix))
        return NitrogenState(p1=float(diagonal[0]), p0=float(diagonal[1]), pm1=float(diagonal[2]))


def conditional_propagator(coupling: HyperfineCoupling, t: float, branch: Branch) -> np.ndarray:
    """
    Nitrogen propagator conditioned on the electron branch.

    The nitrogen part of the secular Hamiltonian is 0 for m_s = 0 and -A_par I_z for
    m_s = -1; the unitary is exp(-i H t), obtained by matrix exponentiation.

    Args:
        coupling: Hyperfine coupling A_par.
        t: Evolution time in us, non-negative.
        branch: "ms0" or "msm1".

    Returns:
        A 3x3 complex unitary.
    """
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if branch == "ms0":
        hamiltonian = np.zeros((3, 3), dtype=np.complex128)
    elif branch == "msm1":
        hamiltonian = -coupling.a_par * I_Z
    else:
        raise DomainError(f"unknown electron branch '{branch}'")
    return expm(-1j * t * hamiltonian)


def coherence_trace(
    rho_n: NuclearDensityMatrix,
    coupling: HyperfineCoupling,
    env: DephasingEnvelope,
    t: float,
) -> complex:
    """
    Electron coherence Tr[U_ms0 rho_N U_msm1^dagger] damped by the bath envelope.

    Returns:
        Complex coherence whose magnitude is the Bloch-vector length.
    """
    u0 = conditional_propagator(coupling, t, "ms0")
    u1 = conditional_propagator(coupling, t, "msm1")
    value = np.trace(u0 @ rho_n.matrix @ u1.conj().T)
    return complex(envelope_eval(env, t) * value)


def _coherence_quadratures(state: NitrogenState, a_par: float, times: np.ndarray):
    """Closed-form Re/Im of Tr[rho_N U_msm1^dagger] for a diagonal rho_N (unit envelope)."""
    phase = a_par * times
    real = state.p0 + (state.p1 + state.pm1) * np.cos(phase)
    imag = (state.pm1 - state.p1) * np.sin(phase)
    return real, imag


def simulate_ramsey(
    params: Union[FidModelParams, NmModelParams],
    times,
    seed: int,
    phi: Optional[float] = None,
    channels: Literal["quadrature", "magnitude"] = "quadrature",
    noise: Optional[float] = None,
) -> CoherenceTrace:
    """
    Generate a synthetic Ramsey record.

    FID parameters give the coherence of nitrogen_populations(p, phi) damped by the
    envelope, shifted radially by bias_d. NM parameters (phi required) give the
    coherence of nitrogen_populations(p(phi), phi) with a unit envelope, scaled by the
    readout contrast C(phi). Each channel receives independent zero-mean Gaussian noise.

    Args:
        params: FidModelParams or NmModelParams.
        times: Strictly increasing time grid in us.
        seed: Seed of the Philox stream.
        phi: Mixing angle, required for NM parameters.
        channels: "quadrature" for x/y channels, "magnitude" for r only (stored in x).
        noise: Noise std override; defaults to params.sigma (FID) or params.sigma_coh (NM).

    Returns:
        CoherenceTrace labelled with phi and seed.
    """
    grid = np.asarray(times, dtype=np.float64)
    if np.any(grid < 0):
        raise DomainError("times must be non-negative")

    if isinstance(params, FidModelParams):
        state = params.state
        scale = np.asarray(envelope_eval(params.envelope, grid), dtype=np.float64)
        bias = params.bias_d
        sigma = params.sigma if noise is None else noise
        label = params.phi if phi is None else phi
    elif isinstance(params, NmModelParams):
        if phi is None:
            raise DomainError("phi is required to simulate the NM model")
        p = float(np.clip(population_eval(params.population, phi), 0.0, 1.0))
        state = nitrogen_populations(p, phi)
        scale = np.full(grid.shape, float(contrast_eval(params.contrast, phi)))
        bias = 0.0
        sigma = params.sigma_coh if noise is None else noise
        label = phi
    else:
        raise DomainError(f"cannot simulate parameters of type {type(params).__name__}")
    if sigma < 0:
        raise DomainError(f"noise std must be non-negative, got {sigma}")

    logger.debug(f"Simulating {type(params).__name__} trace: {grid.size} points, phi={label:.4f}, noise={sigma:.3g}, seed={seed}")
    rng = make_rng(seed)
    real, imag = _coherence_quadratures(state, params.coupling.a_par, grid)
    real, imag = scale * real, scale * imag

    if channels == "magnitude":
        x = np.hypot(real, imag) + bias + sigma * rng.standard_normal(grid.size)
        return CoherenceTrace(times=grid, x_channel=x, phi=label, seed=seed, normalization=Normalization())

    if bias != 0.0:
        radius = np.hypot(real, imag)
        safe = np.where(radius > 0, radius, 1.0)
        direction_re = np.where(radius > 0, real / safe, 1.0)
        direction_im = np.where(radius > 0, imag / safe, 0.0)
        real = real + bias * direction_re
        imag = imag + bias * direction_im
    x = real + sigma * rng.standard_normal(grid.size)
    y = imag + sigma * rng.standard_normal(grid.size)
    return CoherenceTrace(times=grid, x_channel=x, y_channel=y, phi=label, seed=seed)


def expected_magnitude(params: NmModelParams, phi: float, times) -> np.ndarray:
    """Noise-free contrast-scaled magnitude C(phi) r(t, phi) used by the NM generator."""
    grid = np.asarray(times, dtype=np.float64)
    p = float(np.clip(population_eval(params.population, phi), 0.0, 1.0))
    return float(contrast_eval(params.contrast, phi)) * _bracket_from_angle(p, phi, params.coupling.a_par, grid)
