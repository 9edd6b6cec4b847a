"""
Prior specification and parameter transforms.

Each parameter carries an independent prior and a transform to the unconstrained
space the samplers move in:

    normal(mu, sigma)     support R         identity
    half_normal(sigma)    support [0, inf)  log    (identity allowed)
    uniform(lo, hi)       support [lo, hi]  logit  (identity allowed)
"""
import math
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import special

from utils.errors import DomainError

PriorKind = Literal["normal", "half_normal", "uniform"]
Transform = Literal["identity", "log", "logit"]

_DEFAULT_TRANSFORM = {"normal": "identity", "half_normal": "log", "uniform": "logit"}
_ALLOWED_TRANSFORMS = {
    "normal": {"identity"},
    "half_normal": {"log", "identity"},
    "uniform": {"logit", "identity"},
}

_HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)
_HALF_LOG_TWO_OVER_PI = 0.5 * math.log(2.0 / math.pi)
_MAX_EXP = 700.0


def _safe_exp(z: float) -> float:
    return math.exp(z) if z < _MAX_EXP else math.inf


class PriorEntry(BaseModel):
    """
    Prior of one parameter.

    Attributes:
        kind: Distribution family.
        mu: Mean of a normal prior.
        sigma: Scale of a normal or half-normal prior.
        lo: Lower bound of a uniform prior.
        hi: Upper bound of a uniform prior.
        transform: Map to unconstrained space; defaults to the family's natural one.
        unit: Unit label used in output headers.
        init: Constrained starting value for samplers; defaults to a central value of the prior.
    """

    model_config = ConfigDict(frozen=True)

    kind: PriorKind
    mu: float = 0.0
    sigma: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    transform: Optional[Transform] = None
    unit: str = "1"
    init: Optional[float] = None

    @model_validator(mode="after")
    def _check(self) -> "PriorEntry":
        if self.kind in ("normal", "half_normal") and not self.sigma > 0:
            raise ValueError(f"{self.kind} prior needs sigma > 0, got {self.sigma}")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise ValueError(f"uniform prior needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.transform is None:
            object.__setattr__(self, "transform", _DEFAULT_TRANSFORM[self.kind])
        if self.transform not in _ALLOWED_TRANSFORMS[self.kind]:
            raise ValueError(f"transform '{self.transform}' does not match the support of a {self.kind} prior")
        if self.init is not None and not np.isfinite(self.log_density(self.init)):
            raise ValueError(f"init value {self.init} lies outside the prior support")
        return self

    @classmethod
    def normal(cls, mu: float, sigma: float, **kwargs) -> "PriorEntry":
        return cls(kind="normal", mu=mu, sigma=sigma, **kwargs)

    @classmethod
    def half_normal(cls, sigma: float, **kwargs) -> "PriorEntry":
        return cls(kind="half_normal", sigma=sigma, **kwargs)

    @classmethod
    def uniform(cls, lo: float, hi: float, **kwargs) -> "PriorEntry":
        return cls(kind="uniform", lo=lo, hi=hi, **kwargs)

    # Densities in constrained space

    def log_density(self, theta: float) -> float:
        """Closed-form log density; agrees with scipy.stats norm, halfnorm and uniform."""
        if self.kind == "normal":
            u = (theta - self.mu) / self.sigma
            return -0.5 * u * u - math.log(self.sigma) - _HALF_LOG_TWO_PI
        if self.kind == "half_normal":
            if theta < 0:
                return -math.inf
            u = theta / self.sigma
            return -0.5 * u * u - math.log(self.sigma) + _HALF_LOG_TWO_OVER_PI
        if self.lo <= theta <= self.hi:
            return -math.log(self.hi - self.lo)
        return -math.inf

    def grad_log_density(self, theta: float) -> float:
        if self.kind == "normal":
            return -(theta - self.mu) / self.sigma ** 2
        if self.kind == "half_normal":
            return -theta / self.sigma ** 2
        return 0.0

    # Transforms

    def to_unconstrained(self, theta: float) -> float:
        if self.transform == "log":
            return math.log(theta) if theta > 0 else -math.inf
        if self.transform == "logit":
            u = (theta - self.lo) / (self.hi - self.lo)
            if u <= 0.0:
                return -math.inf
            if u >= 1.0:
                return math.inf
            return float(special.logit(u))
        return float(theta)

    def to_constrained(self, z: float) -> float:
        if self.transform == "log":
            return _safe_exp(z)
        if self.transform == "logit":
            return self.lo + (self.hi - self.lo) * float(special.expit(z))
        return float(z)

    def log_jacobian(self, z: float) -> float:
        """log |d theta / d z|."""
        if self.transform == "log":
            return z
        if self.transform == "logit":
            return math.log(self.hi - self.lo) + float(special.log_expit(z) + special.log_expit(-z))
        return 0.0

    def log_jacobian_theta(self, theta: float) -> float:
        """log |d theta / d z| expressed through theta; -inf on the boundary."""
        if self.transform == "log":
            return math.log(theta) if theta > 0 else -math.inf
        if self.transform == "logit":
            inside = (theta - self.lo) * (self.hi - theta)
            return math.log(inside / (self.hi - self.lo)) if inside > 0 else -math.inf
        return 0.0

    def dtheta_dz(self, z: float) -> float:
        if self.transform == "log":
            return _safe_exp(z)
        if self.transform == "logit":
            s = float(special.expit(z))
            return (self.hi - self.lo) * s * (1.0 - s)
        return 1.0

    def grad_log_jacobian(self, z: float) -> float:
        if self.transform == "log":
            return 1.0
        if self.transform == "logit":
            return 1.0 - 2.0 * float(special.expit(z))
        return 0.0

    @property
    def unconstrained_scale(self) -> float:
        """Rough prior width in unconstrained space, used to size initial proposals."""
        if self.transform == "identity":
            if self.kind == "uniform":
                return (self.hi - self.lo) / math.sqrt(12.0)
            return self.sigma
        return 1.0

    def default_init(self) -> float:
        if self.init is not None:
            return self.init
        if self.kind == "normal":
            return self.mu
        if self.kind == "half_normal":
            return self.sigma * math.sqrt(2.0 / math.pi)
        return 0.5 * (self.lo + self.hi)


class PriorSpec(BaseModel):
    """Ordered, independent priors over a named parameter vector."""

    model_config = ConfigDict(frozen=True)

    entries: Dict[str, PriorEntry]

    @property
    def names(self) -> List[str]:
        return list(self.entries.keys())

    @property
    def dim(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> PriorEntry:
        return self.entries[name]

    def merged(self, overrides: Optional[Mapping[str, PriorEntry]]) -> "PriorSpec":
        """Replace entries by name; unknown names are rejected."""
        if not overrides:
            return self
        unknown = set(overrides) - set(self.entries)
        if unknown:
            raise DomainError(f"priors given for unknown parameters: {sorted(unknown)}")
        entries = dict(self.entries)
        entries.update(overrides)
        return PriorSpec(entries=entries)

    def as_vector(self, theta: Union[Mapping[str, float], Iterable[float]]) -> np.ndarray:
        """Coerce a mapping or sequence into the parameter vector, checking its dimension."""
        if isinstance(theta, Mapping):
            missing = [name for name in self.entries if name not in theta]
            if missing:
                raise DomainError(f"missing parameters: {missing}")
            return np.array([float(theta[name]) for name in self.entries], dtype=np.float64)
        vector = np.asarray(list(theta) if not isinstance(theta, np.ndarray) else theta, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DomainError(
                f"parameter vector has shape {vector.shape}, expected ({self.dim},)",
                {"expected": self.dim, "got": list(vector.shape)},
            )
        return vector

    def to_constrained(self, z: np.ndarray) -> np.ndarray:
        return np.array([entry.to_constrained(zi) for entry, zi in zip(self.entries.values(), z)])

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        return np.array([entry.to_unconstrained(ti) for entry, ti in zip(self.entries.values(), theta)])

    def initial_unconstrained(self) -> np.ndarray:
        return np.array([entry.to_unconstrained(entry.default_init()) for entry in self.entries.values()])

    def unconstrained_scales(self) -> np.ndarray:
        return np.array([entry.unconstrained_scale for entry in self.entries.values()])


def log_prior(theta, priors: PriorSpec, include_jacobian: bool = True) -> float:
    """
    Joint log prior density of independent parameters.

    Args:
        theta: Parameter values in constrained space (mapping by name or vector in layout order).
        priors: The prior specification.
        include_jacobian: Add log |d theta / d z| of each transform, giving the density
            of the unconstrained coordinates the samplers use.

    Returns:
        The log density, -inf outside the support.

    Raises:
        DomainError: If theta does not match the parameter layout.
    """
    vector = priors.as_vector(theta)
    total = 0.0
    for entry, value in zip(priors.entries.values(), vector):
        term = entry.log_density(value)
        if include_jacobian:
            term += entry.log_jacobian_theta(value)
        if not np.isfinite(term):
            return -math.inf
        total += term
    return float(total)


def log_prior_unconstrained(z: np.ndarray, priors: PriorSpec) -> float:
    """Log prior plus Jacobian evaluated directly at unconstrained coordinates."""
    total = 0.0
    for entry, zi in zip(priors.entries.values(), z):
        term = entry.log_density(entry.to_constrained(zi)) + entry.log_jacobian(zi)
        if not np.isfinite(term):
            return -math.inf
        total += term
    return float(total)


def grad_log_prior_unconstrained(z: np.ndarray, priors: PriorSpec) -> np.ndarray:
    """Gradient of log_prior_unconstrained with respect to z."""
    grad = np.empty(len(z))
    for i, (entry, zi) in enumerate(zip(priors.entries.values(), z)):
        theta = entry.to_constrained(zi)
        grad[i] = entry.grad_log_density(theta) * entry.dtheta_dz(zi) + entry.grad_log_jacobian(zi)
    return grad


TWO_PI = 2.0 * math.pi


def default_fid_priors(fold_phi: bool = False) -> PriorSpec:
    """
    Weakly-informative FID priors centred on the known physics.

    phi enters r only through cos^2(phi/2), so +phi and -phi are indistinguishable.
    phi carries an unwrapped normal(0, 0.5) prior on the real line.

    Args:
        fold_phi: Fold the phi prior onto phi >= 0 (half-normal(0.5), log transform),
            which removes the mirror mode at -phi.
    """
    phi = (
        PriorEntry.half_normal(0.5, unit="rad", init=0.3)
        if fold_phi
        else PriorEntry.normal(0.0, 0.5, unit="rad", init=0.3)
    )
    return PriorSpec(
        entries={
            "a0": PriorEntry.half_normal(0.1, init=1e-3),
            "a1": PriorEntry.half_normal(0.01, unit="1/us", init=1e-4),
            "a2": PriorEntry.half_normal(0.01, unit="1/us^2", init=2.5e-3),
            "a3": PriorEntry.half_normal(1e-4, unit="1/us^3", init=1e-7),
            "a4": PriorEntry.half_normal(1e-6, unit="1/us^4", init=1e-9),
            "a5": PriorEntry.half_normal(1e-8, unit="1/us^5", init=1e-11),
            "p": PriorEntry.uniform(0.0, 1.0, init=0.9),
            "phi": phi,
            "a_par": PriorEntry.normal(TWO_PI * 2.14, TWO_PI * 0.05, unit="rad/us"),
            "d": PriorEntry.normal(0.0, 0.1),
            "sigma": PriorEntry.half_normal(0.1, init=0.05),
        }
    )


def default_nm_priors() -> PriorSpec:
    """
    Priors of the joint non-Markovianity model (normal means and widths as tabulated for the experiment).

    sigma_nm is tabulated as (0, 1) and read as half-normal(1); sigma_coh is not
    tabulated and gets half-normal(0.1).
    """
    return PriorSpec(
        entries={
            "c_a": PriorEntry.normal(1.0, 0.1),
            "c_nu": PriorEntry.normal(0.3, 0.1),
            "c_b": PriorEntry.normal(1.0, 0.1),
            "p_a": PriorEntry.normal(0.02, 0.01),
            "p_nu": PriorEntry.normal(1.5, 0.1),
            "p_b": PriorEntry.normal(0.02, 0.01),
            "p_phi": PriorEntry.normal(0.0, 0.3, unit="rad"),
            "a_par": PriorEntry.normal(4.2 * math.pi, 0.5, unit="rad/us"),
            "sigma_coh": PriorEntry.half_normal(0.1, init=0.05),
            "sigma_nm": PriorEntry.half_normal(1.0, init=0.1),
        }
    )
