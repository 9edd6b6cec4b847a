"""
End-to-end inference pipelines.

fit_fid and fit_nm bind data to a ProbModel, sample it, check convergence and
summarise every marginal by its median and 95% HPD, including derived
quantities (T2* for the FID model, the polarization p(0) for the joint model).
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from inference.diagnostics import MIN_HPD_DRAWS, hpd, point_estimate, rhat, ess
from inference.likelihood import (
    NM_NAMES,
    NmDataset,
    fid_loglike_grad,
    fid_loglike_vector,
    fid_mean,
    nm_contrast,
    nm_loglike_vector,
    nm_measure,
    nm_population,
)
from inference.model import Predictor, ProbModel
from inference.priors import PriorEntry, PriorSpec, default_fid_priors, default_nm_priors
from inference.samplers import PosteriorSamples, SamplerConfig, sample_hmc, sample_mh
from models.spin import (
    ENVELOPE_DEGREE,
    ContrastModel,
    DephasingEnvelope,
    FidModelParams,
    HyperfineCoupling,
    NmModelParams,
    PopulationModel,
    _bracket_from_angle,
)
from models.trace import CoherenceTrace
from utils.errors import ConvergenceError, DomainError
from utils.logging_utils import setup_logger

# Configure logging
logger = setup_logger("pipeline", "pipeline.log")

RHAT_LIMIT = 1.1
HPD_MASS = 0.95
MAX_PREDICTIVE_DRAWS = 2000

# Observation-noise parameter behind each predictive curve
NOISE_PARAMS = {"coherence": "sigma", "nm": "sigma_nm"}

PriorsArg = Union[PriorSpec, Mapping[str, PriorEntry], None]
SamplerName = Literal["mh", "hmc"]


class ParameterSummary(BaseModel):
    """Marginal summary of one (possibly derived) parameter."""

    model_config = ConfigDict(frozen=True)

    name: str
    unit: str = "1"
    median: float
    mean: float
    std: float
    hpd_lo: float
    hpd_hi: float
    mass: float = HPD_MASS
    rhat: Optional[float] = None
    ess: Optional[float] = None
    derived: bool = False


class FitDiagnostics(BaseModel):
    model_config = ConfigDict(frozen=True)

    sampler: str
    chains: int
    draws_per_chain: int
    warmup: int
    acceptance: List[float]
    divergences: List[int]
    max_rhat: Optional[float]
    min_ess: Optional[float]
    converged: bool
    forced: bool = False


class PredictiveBand(BaseModel):
    """
    Posterior-predictive curve over a grid of inputs.

    Attributes:
        curve: Predictor name.
        inputs: Grid (phi in rad or t in us).
        mean: Mean over retained draws.
        std: Std over retained draws of the model expectation.
        lo: Lower end of the per-input HPD band.
        hi: Upper end of the per-input HPD band.
        median_curve: Model evaluated at the per-parameter medians.
        predictive_std: Std including observation noise, if requested.
        n_draws: Number of retained draws.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    curve: str
    inputs: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    median_curve: np.ndarray
    predictive_std: Optional[np.ndarray] = None
    n_draws: int

    @field_validator("inputs", "mean", "std", "lo", "hi", "median_curve", "predictive_std", mode="before")
    @classmethod
    def _to_array(cls, value):
        if value is None:
            return None
        return np.asarray(value, dtype=np.float64)


@dataclass
class FitResult:
    model: ProbModel
    samples: PosteriorSamples
    summaries: Dict[str, ParameterSummary]
    diagnostics: FitDiagnostics
    extras: Dict[str, float] = field(default_factory=dict)


# Model construction


def _resolve_priors(priors: PriorsArg, defaults: PriorSpec) -> PriorSpec:
    if priors is None:
        return defaults
    if isinstance(priors, PriorSpec):
        if priors.names != defaults.names:
            raise DomainError(
                "priors must cover exactly the model parameters in layout order",
                {"expected": defaults.names, "got": priors.names},
            )
        return priors
    return defaults.merged(priors)


def build_fid_model(data: CoherenceTrace, priors: PriorsArg = None) -> ProbModel:
    """
    FID posterior over FID_NAMES with the analytic likelihood gradient registered.

    Raises:
        DomainError: If the trace is empty or the priors do not match the layout.
    """
    if len(data) == 0:
        raise DomainError("cannot fit an empty trace")
    spec = _resolve_priors(priors, default_fid_priors())
    times = np.array(data.times)
    values = np.array(data.magnitude)

    def envelope(theta: np.ndarray, t: np.ndarray) -> np.ndarray:
        return np.exp(-np.polynomial.polynomial.polyval(t, theta[: ENVELOPE_DEGREE + 1]))

    return ProbModel(
        priors=spec,
        loglike=lambda theta: fid_loglike_vector(theta, times, values),
        loglike_grad=lambda theta: fid_loglike_grad(theta, times, values),
        predictors={"coherence": fid_mean, "envelope": envelope},
        name="fid",
    )


def initial_contrast_guess(coh_sets: Sequence[Tuple[float, CoherenceTrace]]) -> Optional[Tuple[float, float, float]]:
    """
    Least-squares (c_a, c_nu, c_b) from the first sample of each trace, where r = 1.

    C(phi) is linear in (c_a, c_b) for fixed c_nu, so c_nu is scanned on a grid and
    the other two solved exactly. Returns None with fewer than three traces or when
    the best fit would allow a negative contrast.
    """
    if len(coh_sets) < 3:
        return None
    phis = np.array([float(phi) for phi, _ in coh_sets])
    first = np.array([float(trace.magnitude[0]) for _, trace in coh_sets])
    best = None
    for c_nu in np.linspace(0.05, 3.0, 60):
        design = np.column_stack([np.cos(c_nu * phis), np.ones_like(phis)])
        (c_a, c_b), *_ = np.linalg.lstsq(design, first, rcond=None)
        residual = float(np.sum((design @ np.array([c_a, c_b]) - first) ** 2))
        if best is None or residual < best[0]:
            best = (residual, float(c_a), float(c_nu), float(c_b))
    _, c_a, c_nu, c_b = best
    if c_b < abs(c_a):
        return None
    return c_a, c_nu, c_b


def nm_predictors(horizon: float) -> Dict[str, Predictor]:
    """
    Angle-response curves of the joint model at evolution time horizon.

    nm_ideal assumes full polarization and a phi-independent contrast c_b.
    """
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    t_end = np.float64(horizon)

    def ideal(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        return theta[2] * (_bracket_from_angle(1.0, phi, theta[7], t_end) - 1.0)

    return {
        "nm": lambda theta, phi: nm_measure(theta, phi, horizon),
        "population": nm_population,
        "contrast": nm_contrast,
        "nm_ideal": ideal,
    }


def build_nm_model(
    coh_sets: Sequence[Tuple[float, CoherenceTrace]],
    nm_points: Sequence[Tuple[float, float]],
    priors: PriorsArg = None,
    horizon: Optional[float] = None,
) -> ProbModel:
    """
    Joint posterior over NM_NAMES.

    When the contrast priors carry no explicit init, the chains start from a
    least-squares contrast fit to the first sample of each trace.

    Raises:
        DomainError: If there is no data or the priors do not match the layout.
    """
    spec = _resolve_priors(priors, default_nm_priors())
    dataset = NmDataset.build(coh_sets, nm_points, horizon)

    guess = initial_contrast_guess(coh_sets)
    if guess is not None and all(spec[name].init is None for name in ("c_a", "c_nu", "c_b")):
        logger.info(f"Contrast start from first samples: c_a={guess[0]:.4g}, c_nu={guess[1]:.4g}, c_b={guess[2]:.4g}")
        spec = spec.merged(
            {name: spec[name].model_copy(update={"init": value}) for name, value in zip(("c_a", "c_nu", "c_b"), guess)}
        )

    return ProbModel(
        priors=spec,
        loglike=lambda theta: nm_loglike_vector(theta, dataset),
        predictors=nm_predictors(dataset.horizon),
        name="nm",
    )


def build_nm_predictive_model(horizon: float, priors: PriorsArg = None) -> ProbModel:
    """Joint-model curves without data, for pushing externally obtained draws through."""
    return ProbModel(
        priors=_resolve_priors(priors, default_nm_priors()),
        loglike=lambda theta: 0.0,
        predictors=nm_predictors(horizon),
        name="nm",
    )


# Parameter conversion


def fid_params_from_vector(values: Sequence[float]) -> FidModelParams:
    """Build FidModelParams from a vector in FID_NAMES layout."""
    v = [float(x) for x in values]
    n_env = ENVELOPE_DEGREE + 1
    return FidModelParams(
        envelope=DephasingEnvelope.polynomial(v[:n_env]),
        p=v[n_env],
        phi=v[n_env + 1],
        coupling=HyperfineCoupling(a_par=v[n_env + 2]),
        bias_d=v[n_env + 3],
        sigma=v[n_env + 4],
    )


def nm_params_from_vector(values: Sequence[float]) -> NmModelParams:
    """Build NmModelParams from a vector in NM_NAMES layout."""
    v = dict(zip(NM_NAMES, (float(x) for x in values)))
    return NmModelParams(
        contrast=ContrastModel(c_a=v["c_a"], c_nu=v["c_nu"], c_b=v["c_b"]),
        population=PopulationModel(p_a=v["p_a"], p_nu=v["p_nu"], p_b=v["p_b"], p_phi=v["p_phi"]),
        coupling=HyperfineCoupling(a_par=v["a_par"]),
        sigma_coh=v["sigma_coh"],
        sigma_nm=v["sigma_nm"],
    )


# Summaries


def median_parameters(samples: PosteriorSamples) -> np.ndarray:
    return np.array([point_estimate(samples, name) for name in samples.names])


def summarize_draws(
    name: str,
    draws: np.ndarray,
    unit: str = "1",
    mass: float = HPD_MASS,
    derived: bool = False,
) -> ParameterSummary:
    """Median, mean, std and HPD of a (chains, draws) array, with rhat/ess when defined."""
    chains = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    pooled = chains.reshape(-1)
    if pooled.size >= MIN_HPD_DRAWS:
        interval = hpd(pooled, mass)
        lo, hi = interval.lo, interval.hi
    else:
        lo, hi = float(pooled.min()), float(pooled.max())
    n_chains, n = chains.shape
    return ParameterSummary(
        name=name,
        unit=unit,
        median=point_estimate(pooled),
        mean=float(pooled.mean()),
        std=float(pooled.std()),
        hpd_lo=lo,
        hpd_hi=hi,
        mass=mass,
        rhat=rhat(chains) if n_chains >= 2 and n >= 4 else None,
        ess=ess(chains) if n >= 4 else None,
        derived=derived,
    )


def summarize(
    samples: PosteriorSamples,
    derived: Optional[Mapping[str, Tuple[np.ndarray, str]]] = None,
    mass: float = HPD_MASS,
) -> Dict[str, ParameterSummary]:
    """
    Per-parameter summaries, followed by derived quantities.

    Args:
        samples: Posterior draws.
        derived: name -> ((chains, draws) array, unit) of derived quantities.
        mass: HPD mass.
    """
    summaries = {
        name: summarize_draws(name, samples.chains_of(name), unit, mass)
        for name, unit in zip(samples.names, samples.units)
    }
    for name, (values, unit) in (derived or {}).items():
        summaries[name] = summarize_draws(name, values, unit, mass, derived=True)
    return summaries


def fid_derived(samples: PosteriorSamples) -> Dict[str, Tuple[np.ndarray, str]]:
    """T2* = a2^(-1/2) per draw."""
    a2 = samples.chains_of("a2")
    with np.errstate(divide="ignore"):
        return {"t2_star": (np.where(a2 > 0, 1.0 / np.sqrt(a2), math.inf), "us")}


def nm_derived(samples: PosteriorSamples) -> Dict[str, Tuple[np.ndarray, str]]:
    """Polarization p(phi = 0) = 1 - (p_b + p_a sin(p_phi)) per draw."""
    p_a, p_b, p_phi = (samples.chains_of(name) for name in ("p_a", "p_b", "p_phi"))
    return {"p_at_zero": (1.0 - (p_b + p_a * np.sin(p_phi)), "1")}


def _diagnose(samples: PosteriorSamples, summaries: Dict[str, ParameterSummary], force: bool) -> FitDiagnostics:
    rhats = [s.rhat for name, s in summaries.items() if not s.derived and s.rhat is not None]
    esses = [s.ess for name, s in summaries.items() if not s.derived and s.ess is not None]
    max_rhat = max(rhats) if rhats else None
    converged = max_rhat is None or max_rhat <= RHAT_LIMIT
    diagnostics = FitDiagnostics(
        sampler=samples.sampler,
        chains=samples.n_chains,
        draws_per_chain=samples.n_draws,
        warmup=samples.warmup,
        acceptance=samples.acceptance,
        divergences=samples.divergences,
        max_rhat=max_rhat,
        min_ess=min(esses) if esses else None,
        converged=converged,
        forced=force and not converged,
    )
    if not converged:
        offenders = {name: s.rhat for name, s in summaries.items() if s.rhat is not None and s.rhat > RHAT_LIMIT}
        if not force:
            logger.error(f"Chains did not converge: {offenders}")
            raise ConvergenceError(f"rhat above {RHAT_LIMIT} for {sorted(offenders)}", {"rhat": offenders})
        logger.warning(f"Summarising unconverged chains on request: {offenders}")
    return diagnostics


def _sample(model: ProbModel, config: Optional[SamplerConfig], sampler: SamplerName) -> PosteriorSamples:
    if sampler == "mh":
        return sample_mh(model, config)
    if sampler == "hmc":
        return sample_hmc(model, config)
    raise DomainError(f"unknown sampler '{sampler}'")


def fit_fid(
    data: CoherenceTrace,
    priors: PriorsArg = None,
    config: Optional[SamplerConfig] = None,
    sampler: SamplerName = "mh",
    force: bool = False,
) -> FitResult:
    """
    Fit the FID model to one trace.

    Args:
        data: Ramsey record in full-coherence units.
        priors: Full PriorSpec, or overrides by name of the default FID priors.
        config: Sampler configuration.
        sampler: "mh" or "hmc".
        force: Summarise even when rhat exceeds 1.1.

    Returns:
        FitResult with parameter summaries plus t2_star.

    Raises:
        ConvergenceError: If any rhat exceeds 1.1 and force is False.
        SamplingError: Propagated from the sampler.
    """
    model = build_fid_model(data, priors)
    logger.info(f"Fitting FID model to {len(data)} points")
    samples = _sample(model, config, sampler)
    summaries = summarize(samples, fid_derived(samples))
    diagnostics = _diagnose(samples, summaries, force)
    t2 = summaries["t2_star"]
    logger.info(f"T2* = {t2.median:.4g} us (95% HPD [{t2.hpd_lo:.4g}, {t2.hpd_hi:.4g}])")
    return FitResult(model=model, samples=samples, summaries=summaries, diagnostics=diagnostics)


def fit_nm(
    coh_sets: Sequence[Tuple[float, CoherenceTrace]],
    nm_points: Sequence[Tuple[float, float]],
    priors: PriorsArg = None,
    config: Optional[SamplerConfig] = None,
    sampler: SamplerName = "mh",
    force: bool = False,
    horizon: Optional[float] = None,
) -> FitResult:
    """
    Fit the joint coherence / non-Markovianity model.

    Args:
        coh_sets: (phi, trace) pairs in contrast units.
        nm_points: (phi, N') observations.
        priors: Full PriorSpec, or overrides by name of the default NM priors.
        config: Sampler configuration.
        sampler: "mh" or "hmc".
        force: Summarise even when rhat exceeds 1.1.
        horizon: Evolution time T of the N' points; defaults to the latest trace time.

    Returns:
        FitResult with parameter summaries plus p_at_zero; extras holds the horizon.
    """
    model = build_nm_model(coh_sets, nm_points, priors, horizon)
    dataset_horizon = horizon if horizon is not None else max(float(t.times[-1]) for _, t in coh_sets)
    logger.info(f"Fitting NM model to {len(coh_sets)} trace(s) and {len(nm_points)} N' point(s)")
    samples = _sample(model, config, sampler)
    summaries = summarize(samples, nm_derived(samples))
    diagnostics = _diagnose(samples, summaries, force)
    return FitResult(
        model=model,
        samples=samples,
        summaries=summaries,
        diagnostics=diagnostics,
        extras={"horizon": float(dataset_horizon)},
    )


def posterior_predictive(
    samples: PosteriorSamples,
    model: ProbModel,
    inputs,
    curve: Optional[str] = None,
    max_draws: int = MAX_PREDICTIVE_DRAWS,
    include_noise: bool = False,
    mass: float = HPD_MASS,
) -> PredictiveBand:
    """
    Posterior-predictive band of a model curve.

    Every retained draw (pooled draws thinned to at most max_draws) is pushed through
    the curve; mean and std are taken across draws at each input.

    Args:
        samples: Posterior draws of the model.
        model: ProbModel providing the predictor.
        inputs: Grid of phi (rad) or t (us).
        curve: Predictor name; defaults to the model's first predictor.
        max_draws: Cap on retained draws.
        include_noise: Also report the std of a new observation, adding the
            posterior-mean noise variance to the spread of the expectation.
        mass: Mass of the per-input HPD band.

    Returns:
        PredictiveBand over inputs.
    """
    if not model.predictors:
        raise DomainError(f"model '{model.name}' has no predictors")
    curve = curve or next(iter(model.predictors))
    grid = np.atleast_1d(np.asarray(inputs, dtype=np.float64))
    pooled = samples.flat()
    stride = max(1, int(math.ceil(pooled.shape[0] / max_draws)))
    retained = pooled[::stride]
    curves = np.stack([model.predict(curve, theta, grid) for theta in retained])

    mean = curves.mean(axis=0)
    std = curves.std(axis=0)
    if retained.shape[0] >= MIN_HPD_DRAWS:
        bands = [hpd(curves[:, j], mass) for j in range(grid.size)]
        lo = np.array([b.lo for b in bands])
        hi = np.array([b.hi for b in bands])
    else:
        lo, hi = curves.min(axis=0), curves.max(axis=0)

    predictive_std = None
    if include_noise:
        if curve not in NOISE_PARAMS:
            raise DomainError(f"curve '{curve}' has no observation-noise parameter")
        noise = retained[:, samples.index(NOISE_PARAMS[curve])]
        predictive_std = np.sqrt(std ** 2 + np.mean(noise ** 2))

    return PredictiveBand(
        curve=curve,
        inputs=grid,
        mean=mean,
        std=std,
        lo=lo,
        hi=hi,
        median_curve=model.predict(curve, median_parameters(samples), grid),
        predictive_std=predictive_std,
        n_draws=int(retained.shape[0]),
    )
