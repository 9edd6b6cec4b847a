"""
Bayesian inference for nvdephase: priors, likelihoods, samplers and diagnostics.
"""

from inference.diagnostics import HpdInterval, ess, hpd, point_estimate, rhat
from inference.likelihood import log_likelihood_fid, log_likelihood_nm
from inference.model import ProbModel
from inference.pipeline import FitResult, ParameterSummary, PredictiveBand, fit_fid, fit_nm, posterior_predictive
from inference.priors import PriorEntry, PriorSpec, default_fid_priors, default_nm_priors, log_prior
from inference.samplers import PosteriorSamples, SamplerConfig, sample_hmc, sample_mh

__all__ = [
    "FitResult",
    "HpdInterval",
    "ParameterSummary",
    "PosteriorSamples",
    "PredictiveBand",
    "PriorEntry",
    "PriorSpec",
    "ProbModel",
    "SamplerConfig",
    "default_fid_priors",
    "default_nm_priors",
    "ess",
    "fit_fid",
    "fit_nm",
    "hpd",
    "log_likelihood_fid",
    "log_likelihood_nm",
    "log_prior",
    "point_estimate",
    "posterior_predictive",
    "rhat",
    "sample_hmc",
    "sample_mh",
]
