"""
MCMC samplers over a ProbModel: adaptive random-walk Metropolis and Hamiltonian Monte Carlo.

Every chain owns a Philox stream derived from the run seed through
numpy.random.SeedSequence, so results depend only on (model, config, seed) and
not on how chains are scheduled over worker threads.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from inference.model import ProbModel
from models.oracle import make_rng
from utils.config import DEFAULT_CHAINS, DEFAULT_ITERS, DEFAULT_SEED, MAX_WORKERS
from utils.errors import DomainError, SamplingError
from utils.logging_utils import setup_logger

# Configure logging
logger = setup_logger("samplers", "samplers.log")

FIRST_WINDOW = 100
COV_JITTER = 1e-12
MIN_VARIANCE = 1e-14
START_ATTEMPTS = 20

# Dual-averaging constants for the HMC step size
DA_GAMMA = 0.05
DA_T0 = 10.0
DA_KAPPA = 0.75


class SamplerConfig(BaseModel):
    """
    Configuration shared by both samplers.

    Attributes:
        chains: Number of independent chains.
        iters: Iterations per chain, warmup included.
        warmup: Adaptation iterations discarded from the output; defaults to iters // 2.
        target_accept: Acceptance rate targeted during warmup; defaults to 0.3 (MH) or 0.8 (HMC).
        seed: Run seed from which every chain stream is derived.
        adapt_covariance: Adapt a full proposal covariance (MH) or only per-dimension scales.
        init: Start chains from the MAP point ("map") or from the prior init values ("prior").
        init_jitter: Per-chain start jitter as a fraction of each prior width.
        thin: Keep every thin-th post-warmup draw.
        max_workers: Threads used to run chains concurrently.
        step_size: Initial HMC leapfrog step size.
        leapfrog_steps: Leapfrog steps per HMC proposal.
        max_energy_error: HMC energy error above which a trajectory counts as divergent.
        max_divergence_rate: Post-warmup divergent fraction above which HMC aborts. Proposals
            rejected for leaving the support are not divergences and do not count toward it.
    """

    model_config = ConfigDict(extra="forbid")

    chains: int = Field(default=DEFAULT_CHAINS, ge=1)
    iters: int = Field(default=DEFAULT_ITERS, ge=1)
    warmup: Optional[int] = Field(default=None, ge=0)
    target_accept: Optional[float] = Field(default=None, gt=0, lt=1)
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2 ** 64)
    adapt_covariance: bool = True
    init: Literal["map", "prior"] = "map"
    init_jitter: float = Field(default=0.01, ge=0)
    thin: int = Field(default=1, ge=1)
    max_workers: int = Field(default=MAX_WORKERS, ge=1)
    step_size: float = Field(default=0.1, gt=0)
    leapfrog_steps: int = Field(default=20, ge=1)
    max_energy_error: float = Field(default=1000.0, gt=0)
    max_divergence_rate: float = Field(default=0.5, gt=0, le=1)

    @model_validator(mode="after")
    def _check_warmup(self) -> "SamplerConfig":
        if self.warmup is None:
            self.warmup = self.iters // 2
        if not self.iters > self.warmup:
            raise ValueError(f"iters ({self.iters}) must exceed warmup ({self.warmup})")
        return self

    def accept_target(self, sampler: Literal["mh", "hmc"]) -> float:
        if self.target_accept is not None:
            return self.target_accept
        return 0.3 if sampler == "mh" else 0.8


class PosteriorSamples(BaseModel):
    """
    Post-warmup draws of all chains in constrained parameter space.

    Attributes:
        names: Parameter names in layout order.
        units: Unit label per parameter.
        draws: Array of shape (chains, draws, parameters).
        log_posterior: Unnormalised log-posterior of each draw, shape (chains, draws).
        seeds: Seed of each chain's Philox stream.
        acceptance: Post-warmup acceptance rate per chain.
        warmup: Warmup iterations per chain.
        thin: Thinning interval.
        sampler: "mh" or "hmc".
        step_sizes: Final step size (HMC) or proposal scale (MH) per chain.
        divergences: Post-warmup divergent transitions per chain (HMC only).
        support_rejections: Post-warmup HMC proposals rejected because they left the support.
        energy_error: Mean absolute post-warmup energy error per chain (HMC only).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    names: List[str]
    units: List[str]
    draws: np.ndarray
    log_posterior: np.ndarray
    seeds: List[int]
    acceptance: List[float]
    warmup: int
    thin: int = 1
    sampler: Literal["mh", "hmc", "given"] = "mh"
    step_sizes: List[float] = Field(default_factory=list)
    divergences: List[int] = Field(default_factory=list)
    support_rejections: List[int] = Field(default_factory=list)
    energy_error: List[float] = Field(default_factory=list)

    @field_validator("draws", "log_posterior", mode="before")
    @classmethod
    def _to_array(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64, copy=True)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _check_shape(self) -> "PosteriorSamples":
        if self.draws.ndim != 3:
            raise ValueError(f"draws must be chains x draws x parameters, got shape {self.draws.shape}")
        chains, n, dim = self.draws.shape
        if chains < 1 or n < 1:
            raise ValueError("posterior samples need at least one chain with one draw")
        if dim != len(self.names) or len(self.units) != dim:
            raise ValueError(f"{dim} parameter columns for {len(self.names)} names")
        if self.log_posterior.shape != (chains, n):
            raise ValueError(f"log_posterior has shape {self.log_posterior.shape}, expected {(chains, n)}")
        return self

    @classmethod
    def from_draws(cls, names: List[str], draws, units: Optional[List[str]] = None) -> "PosteriorSamples":
        """Wrap externally produced draws (chains x draws x parameters)."""
        array = np.asarray(draws, dtype=np.float64)
        if array.ndim == 2:
            array = array[np.newaxis, :, :]
        chains, n, _ = array.shape
        return cls(
            names=list(names),
            units=list(units) if units is not None else ["1"] * len(names),
            draws=array,
            log_posterior=np.zeros((chains, n)),
            seeds=[0] * chains,
            acceptance=[1.0] * chains,
            warmup=0,
            sampler="given",
        )

    @property
    def n_chains(self) -> int:
        return int(self.draws.shape[0])

    @property
    def n_draws(self) -> int:
        return int(self.draws.shape[1])

    def index(self, dim: Union[str, int]) -> int:
        if isinstance(dim, str):
            if dim not in self.names:
                raise DomainError(f"unknown parameter '{dim}'")
            return self.names.index(dim)
        if not 0 <= dim < len(self.names):
            raise DomainError(f"parameter index {dim} out of range")
        return int(dim)

    def chains_of(self, dim: Union[str, int]) -> np.ndarray:
        """Draws of one parameter as a (chains, draws) array."""
        return self.draws[:, :, self.index(dim)]

    def marginal(self, dim: Union[str, int]) -> np.ndarray:
        """Pooled draws of one parameter, chains concatenated in index order."""
        return self.chains_of(dim).reshape(-1)

    def flat(self) -> np.ndarray:
        """All draws as a (chains * draws, parameters) array."""
        return self.draws.reshape(-1, self.draws.shape[2])


@dataclass
class _ChainResult:
    draws: np.ndarray
    log_posterior: np.ndarray
    acceptance: float
    step_size: float
    divergences: int = 0
    support_rejections: int = 0
    energy_error: float = 0.0


def chain_seeds(seed: int, chains: int) -> List[int]:
    """Independent 64-bit chain seeds spawned from the run seed."""
    children = np.random.SeedSequence(seed).spawn(chains)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def adaptation_windows(warmup: int, first: int = FIRST_WINDOW) -> List[int]:
    """
    End indices of doubling adaptation windows covering the warmup.

    A window is stretched to the end of warmup when the next one would not fit.
    """
    ends: List[int] = []
    start, size = 0, min(first, warmup)
    while start < warmup:
        end = start + size
        if warmup - end < 2 * size:
            end = warmup
        ends.append(end)
        start = end
        size *= 2
    return ends


def terminal_buffer(warmup: int) -> int:
    """Final warmup iterations that tune only the step size, after the last shape update."""
    return warmup // 10 if warmup >= 20 else 0


def _starting_point(model: ProbModel, config: SamplerConfig) -> np.ndarray:
    z0 = model.initial_point()
    if not np.isfinite(model.log_posterior(z0)):
        raise SamplingError(
            f"{model.name}: log-posterior is not finite at the initial point",
            {"initial_point": dict(zip(model.names, model.to_constrained(z0).tolist()))},
        )
    if config.init == "map":
        z0 = model.find_map(z0)
    return z0


def _jittered_start(model: ProbModel, z0: np.ndarray, rng: np.random.Generator, jitter: float) -> np.ndarray:
    if jitter == 0:
        return z0.copy()
    scales = jitter * model.priors.unconstrained_scales()
    for _ in range(START_ATTEMPTS):
        candidate = z0 + scales * rng.standard_normal(z0.size)
        if np.isfinite(model.log_posterior(candidate)):
            return candidate
    return z0.copy()


def _n_kept(config: SamplerConfig) -> int:
    return int(math.ceil((config.iters - config.warmup) / config.thin))


def _run_mh_chain(model: ProbModel, config: SamplerConfig, z0: np.ndarray, seed: int) -> _ChainResult:
    rng = make_rng(seed)
    dim = model.dim
    target = config.accept_target("mh")
    warmup = config.warmup
    window_ends = set(adaptation_windows(warmup - terminal_buffer(warmup)))

    z = _jittered_start(model, z0, rng, config.init_jitter)
    lp = model.log_posterior(z)
    base_scale = math.log(2.38 ** 2 / dim)
    log_lambda = base_scale
    chol = np.diag(0.1 * model.priors.unconstrained_scales())

    kept = np.empty((_n_kept(config), dim))
    kept_lp = np.empty(_n_kept(config))
    window: List[np.ndarray] = []
    window_start = 0
    window_accepts = 0
    accepted = 0
    slot = 0

    for it in range(config.iters):
        proposal = z + math.exp(0.5 * log_lambda) * (chol @ rng.standard_normal(dim))
        lp_prop = model.log_posterior(proposal)
        log_alpha = lp_prop - lp if np.isfinite(lp_prop) else -math.inf
        accept = math.log(rng.random()) < log_alpha
        if accept:
            z, lp = proposal, lp_prop

        if it < warmup:
            alpha = math.exp(min(0.0, log_alpha))
            log_lambda += (alpha - target) / (it - window_start + 1) ** 0.6
            window.append(z)
            window_accepts += accept
            if it + 1 in window_ends:
                # Re-estimate the proposal shape once the window moved enough
                if window_accepts >= 2 * dim:
                    block = np.asarray(window)
                    if config.adapt_covariance:
                        cov = np.atleast_2d(np.cov(block, rowvar=False))
                    else:
                        cov = np.diag(np.var(block, axis=0, ddof=1))
                    cov = cov + COV_JITTER * np.eye(dim)
                    cov[np.diag_indices(dim)] = np.maximum(np.diag(cov), MIN_VARIANCE)
                    try:
                        chol = np.linalg.cholesky(cov)
                        log_lambda = base_scale
                    except np.linalg.LinAlgError:
                        logger.warning(f"{model.name}: proposal covariance not positive definite, keeping previous")
                window = []
                window_start = it + 1
                window_accepts = 0
        else:
            accepted += accept
            if (it - warmup) % config.thin == 0:
                kept[slot] = model.to_constrained(z)
                kept_lp[slot] = lp
                slot += 1

    return _ChainResult(
        draws=kept,
        log_posterior=kept_lp,
        acceptance=accepted / (config.iters - warmup),
        step_size=math.exp(0.5 * log_lambda),
    )


def _leapfrog(model: ProbModel, z: np.ndarray, momentum: np.ndarray, grad: np.ndarray,
              step: float, n_steps: int, inv_mass: np.ndarray):
    momentum = momentum + 0.5 * step * grad
    for i in range(n_steps):
        z = z + step * inv_mass * momentum
        grad = model.grad_log_posterior(z)
        if not np.all(np.isfinite(grad)):
            # -inf marks a trajectory that left the support, nan a numerical breakdown inside it
            lp = model.log_posterior(z)
            return z, momentum, lp if lp == -math.inf else math.nan, grad
        if i != n_steps - 1:
            momentum = momentum + step * grad
    momentum = momentum + 0.5 * step * grad
    return z, momentum, model.log_posterior(z), grad


def _run_hmc_chain(model: ProbModel, config: SamplerConfig, z0: np.ndarray, seed: int) -> _ChainResult:
    rng = make_rng(seed)
    dim = model.dim
    target = config.accept_target("hmc")
    warmup = config.warmup
    window_ends = set(adaptation_windows(warmup - terminal_buffer(warmup)))

    z = _jittered_start(model, z0, rng, config.init_jitter)
    lp = model.log_posterior(z)
    grad = model.grad_log_posterior(z)
    inv_mass = np.ones(dim)
    step = config.step_size

    # Dual averaging state
    mu = math.log(10.0 * step)
    h_bar, log_step_bar, m = 0.0, 0.0, 0

    kept = np.empty((_n_kept(config), dim))
    kept_lp = np.empty(_n_kept(config))
    window: List[np.ndarray] = []
    accepted = 0
    divergences = 0
    support_rejections = 0
    energy_errors: List[float] = []
    slot = 0

    for it in range(config.iters):
        momentum = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = -lp + 0.5 * np.sum(inv_mass * momentum ** 2)
        z_new, p_new, lp_new, grad_new = _leapfrog(model, z, momentum, grad, step, config.leapfrog_steps, inv_mass)
        h1 = -lp_new + 0.5 * np.sum(inv_mass * p_new ** 2) if np.isfinite(lp_new) else math.inf
        energy_error = h1 - h0
        outside = lp_new == -math.inf
        divergent = not outside and (not np.isfinite(energy_error) or energy_error > config.max_energy_error)
        log_alpha = -math.inf if outside or divergent else -energy_error
        accept = math.log(rng.random()) < log_alpha
        if accept:
            z, lp, grad = z_new, lp_new, grad_new

        if it < warmup:
            m += 1
            alpha = math.exp(min(0.0, log_alpha))
            h_bar = (1.0 - 1.0 / (m + DA_T0)) * h_bar + (target - alpha) / (m + DA_T0)
            log_step = mu - math.sqrt(m) / DA_GAMMA * h_bar
            eta = m ** (-DA_KAPPA)
            log_step_bar = eta * log_step + (1.0 - eta) * log_step_bar
            step = math.exp(log_step)
            window.append(z)
            if it + 1 in window_ends:
                block = np.asarray(window)
                inv_mass = np.maximum(np.var(block, axis=0, ddof=1), MIN_VARIANCE) if len(block) > 1 else inv_mass
                window = []
                # Restart step-size search for the new metric
                mu = math.log(10.0 * step)
                h_bar, log_step_bar, m = 0.0, 0.0, 0
            if it + 1 == warmup and m > 0:
                step = math.exp(log_step_bar)
        else:
            accepted += accept
            divergences += divergent
            support_rejections += outside
            if np.isfinite(energy_error):
                energy_errors.append(abs(energy_error))
            if (it - warmup) % config.thin == 0:
                kept[slot] = model.to_constrained(z)
                kept_lp[slot] = lp
                slot += 1

    n_post = config.iters - warmup
    if divergences / n_post > config.max_divergence_rate:
        raise SamplingError(
            f"{model.name}: {divergences} of {n_post} HMC transitions diverged",
            {"divergences": divergences, "iterations": n_post, "step_size": step},
        )
    return _ChainResult(
        draws=kept,
        log_posterior=kept_lp,
        acceptance=accepted / n_post,
        step_size=step,
        divergences=divergences,
        support_rejections=support_rejections,
        energy_error=float(np.mean(energy_errors)) if energy_errors else math.inf,
    )


def _run_chains(
    model: ProbModel,
    config: SamplerConfig,
    runner: Callable[[ProbModel, SamplerConfig, np.ndarray, int], _ChainResult],
    sampler: Literal["mh", "hmc"],
) -> PosteriorSamples:
    seeds = chain_seeds(config.seed, config.chains)
    z0 = _starting_point(model, config)
    logger.info(
        f"{model.name}: {sampler.upper()} with {config.chains} chain(s) x {config.iters} iterations "
        f"(warmup {config.warmup}, seed {config.seed})"
    )

    if config.max_workers == 1 or config.chains == 1:
        results = [runner(model, config, z0, seed) for seed in seeds]
    else:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            futures = [pool.submit(runner, model, config, z0, seed) for seed in seeds]
            results = [future.result() for future in futures]

    for index, result in enumerate(results):
        logger.info(
            f"{model.name}: chain {index} acceptance {result.acceptance:.3f}, "
            f"step {result.step_size:.3g}, divergences {result.divergences}, "
            f"support rejections {result.support_rejections}"
        )

    return PosteriorSamples(
        names=model.names,
        units=[model.priors[name].unit for name in model.names],
        draws=np.stack([r.draws for r in results]),
        log_posterior=np.stack([r.log_posterior for r in results]),
        seeds=seeds,
        acceptance=[r.acceptance for r in results],
        warmup=config.warmup,
        thin=config.thin,
        sampler=sampler,
        step_sizes=[r.step_size for r in results],
        divergences=[r.divergences for r in results],
        support_rejections=[r.support_rejections for r in results] if sampler == "hmc" else [],
        energy_error=[r.energy_error for r in results] if sampler == "hmc" else [],
    )


def sample_mh(model: ProbModel, config: Optional[SamplerConfig] = None) -> PosteriorSamples:
    """
    Adaptive random-walk Metropolis.

    During warmup the global proposal scale follows a Robbins-Monro recursion toward
    target_accept and the proposal covariance is re-estimated at the end of each
    doubling window; both are frozen afterwards.

    Args:
        model: Posterior to sample.
        config: Sampler configuration; defaults to SamplerConfig().

    Returns:
        PosteriorSamples of the post-warmup draws.

    Raises:
        SamplingError: If the log-posterior is not finite at the initial point.
    """
    return _run_chains(model, config or SamplerConfig(), _run_mh_chain, "mh")


def sample_hmc(model: ProbModel, config: Optional[SamplerConfig] = None) -> PosteriorSamples:
    """
    Hamiltonian Monte Carlo with a fixed number of leapfrog steps.

    Warmup adapts a diagonal mass matrix over doubling windows and the step size by
    dual averaging toward target_accept. Gradients come from the model, analytic when
    registered and finite differences otherwise.

    Raises:
        SamplingError: If the start is not finite or more than max_divergence_rate of
            the post-warmup transitions diverge in any chain.
    """
    return _run_chains(model, config or SamplerConfig(), _run_hmc_chain, "hmc")
