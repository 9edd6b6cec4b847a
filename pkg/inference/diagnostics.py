"""
Convergence diagnostics and marginal summaries of posterior draws.
"""
import math
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from inference.samplers import PosteriorSamples
from utils.errors import DomainError

MIN_HPD_DRAWS = 100
MIN_RHAT_DRAWS = 4


class HpdInterval(BaseModel):
    """Shortest interval holding a given posterior mass."""

    model_config = ConfigDict(frozen=True)

    lo: float
    hi: float
    mass: float = Field(default=0.95, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_order(self) -> "HpdInterval":
        if self.lo > self.hi:
            raise ValueError(f"HPD lower end {self.lo} exceeds upper end {self.hi}")
        return self

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def _chains(samples: Union[PosteriorSamples, np.ndarray], dim) -> np.ndarray:
    if isinstance(samples, PosteriorSamples):
        return np.asarray(samples.chains_of(dim), dtype=np.float64)
    array = np.asarray(samples, dtype=np.float64)
    if array.ndim == 3:
        return array[:, :, dim]
    if array.ndim != 2:
        raise DomainError(f"expected chains x draws, got shape {array.shape}")
    return array


def rhat(samples: Union[PosteriorSamples, np.ndarray], dim: Union[str, int] = 0) -> float:
    """
    Split-chain potential scale reduction factor.

    Each chain is halved, and the between- and within-half variances of the
    resulting 2C sequences are combined into sqrt(var_plus / W).

    Args:
        samples: PosteriorSamples, or a (chains, draws[, parameters]) array.
        dim: Parameter name or index.

    Returns:
        R-hat; 1 for converged chains, inf when the chains are constant at different values.

    Raises:
        DomainError: On fewer than two chains or four draws per chain.
    """
    chains = _chains(samples, dim)
    n_chains, n = chains.shape
    if n_chains < 2:
        raise DomainError("rhat needs at least two chains", {"chains": n_chains})
    if n < MIN_RHAT_DRAWS:
        raise DomainError(f"rhat needs at least {MIN_RHAT_DRAWS} draws per chain", {"draws": n})
    half = n // 2
    split = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)

    chain_means = split.mean(axis=1)
    between = half * chain_means.var(ddof=1)
    within = split.var(axis=1, ddof=1).mean()
    if within == 0:
        return 1.0 if between == 0 else math.inf
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row at lags 0..n-1, via FFT."""
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, n=size, axis=-1)
    return np.fft.irfft(spectrum * np.conj(spectrum), n=size, axis=-1)[..., :n] / n


def ess(samples: Union[PosteriorSamples, np.ndarray], dim: Union[str, int] = 0) -> float:
    """
    Effective sample size from the multi-chain autocorrelation.

    Autocorrelations are combined across chains and truncated with Geyer's initial
    monotone positive sequence of paired lags.

    Returns:
        ESS in (0, chains * draws].

    Raises:
        DomainError: On fewer than four draws per chain.
    """
    chains = _chains(samples, dim)
    n_chains, n = chains.shape
    total = n_chains * n
    if n < MIN_RHAT_DRAWS:
        raise DomainError(f"ess needs at least {MIN_RHAT_DRAWS} draws per chain", {"draws": n})

    acov = _autocovariance(chains)
    chain_var = acov[:, 0] * n / (n - 1)
    within = chain_var.mean()
    var_plus = within * (n - 1) / n
    if n_chains > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(total)

    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    pair_sums = []
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair_sums.append(pair)
    if not pair_sums:
        return float(total)
    # Initial monotone sequence
    monotone = np.minimum.accumulate(np.asarray(pair_sums))
    tau = -1.0 + 2.0 * monotone.sum()
    if tau <= 0:
        return float(total)
    return float(min(total / tau, total))


def hpd(draws, mass: float = 0.95) -> HpdInterval:
    """
    Highest-posterior-density interval of a 1-D marginal.

    The shortest window over the sorted draws holding ceil(mass * N) of them.

    Args:
        draws: 1-D sample array.
        mass: Probability mass in (0, 1).

    Returns:
        HpdInterval with the window ends.

    Raises:
        DomainError: On fewer than 100 draws or mass outside (0, 1).
    """
    if not 0 < mass < 1:
        raise DomainError(f"HPD mass must lie in (0, 1), got {mass}")
    values = np.sort(np.asarray(draws, dtype=np.float64).reshape(-1))
    n = values.size
    if n < MIN_HPD_DRAWS:
        raise DomainError(f"HPD needs at least {MIN_HPD_DRAWS} draws, got {n}", {"draws": n})
    count = min(n, int(math.ceil(mass * n - 1e-9)))
    widths = values[count - 1:] - values[: n - count + 1]
    start = int(np.argmin(widths))
    return HpdInterval(lo=float(values[start]), hi=float(values[start + count - 1]), mass=mass)


def point_estimate(samples: Union[PosteriorSamples, np.ndarray], dim: Union[str, int, None] = None) -> float:
    """
    Marginal median; for an even number of draws the mean of the central pair.

    Raises:
        DomainError: If there are no draws.
    """
    if isinstance(samples, PosteriorSamples):
        if dim is None:
            raise DomainError("a parameter must be named to take a point estimate of PosteriorSamples")
        values = samples.marginal(dim)
    else:
        values = np.asarray(samples, dtype=np.float64)
        if dim is not None and values.ndim == 3:
            values = values[:, :, dim]
    values = values.reshape(-1)
    if values.size == 0:
        raise DomainError("cannot take a point estimate of zero draws")
    return float(np.median(values))
