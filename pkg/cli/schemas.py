"""
Documents exchanged by the nvdephase command line: run configuration, results and errors.
"""
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from inference.pipeline import FitDiagnostics, ParameterSummary
from inference.priors import PriorEntry
from inference.samplers import SamplerConfig
from models.nonmarkov import NmReport
from models.spin import (
    ContrastModel,
    DephasingEnvelope,
    FidModelParams,
    HyperfineCoupling,
    NmModelParams,
    PopulationModel,
)
from models.trace import Normalization
from utils.config import DEFAULT_SEED, OUTPUT_DIR

TWO_PI = 2.0 * math.pi


class GridSegment(BaseModel):
    """Evenly spaced points on [start, stop], both ends included."""

    model_config = ConfigDict(extra="forbid")

    start: float
    stop: float
    points: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_order(self) -> "GridSegment":
        if self.points > 1 and not self.stop > self.start:
            raise ValueError(f"grid segment stop {self.stop} must exceed start {self.start}")
        return self

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


def _grid(segments: List[GridSegment]) -> np.ndarray:
    grid = np.concatenate([segment.values() for segment in segments])
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid segments must be ascending and must not overlap")
    return grid


class FidTruth(BaseModel):
    """Generating parameters of a synthetic FID (Gaussian envelope unless coefficients are given)."""

    model_config = ConfigDict(extra="forbid")

    t2_star: float = Field(default=22.262, gt=0)
    coeffs: Optional[List[float]] = None
    p: float = Field(default=0.972, ge=0, le=1)
    phi: float = 0.191
    a_par_mhz: float = Field(default=2.143, gt=0)
    d: float = 0.0
    sigma: float = Field(default=0.018, gt=0)

    def to_params(self) -> FidModelParams:
        envelope = (
            DephasingEnvelope.polynomial(self.coeffs)
            if self.coeffs is not None
            else DephasingEnvelope.gaussian(self.t2_star)
        )
        return FidModelParams(
            envelope=envelope,
            p=self.p,
            phi=self.phi,
            coupling=HyperfineCoupling.from_mhz(self.a_par_mhz),
            bias_d=self.d,
            sigma=self.sigma,
        )


class NmTruth(BaseModel):
    """Generating parameters of the joint model; defaults are the tabulated experimental values."""

    model_config = ConfigDict(extra="forbid")

    c_a: float = 0.046
    c_nu: float = 1.030
    c_b: float = 0.261
    p_a: float = 0.034
    p_nu: float = 1.738
    p_b: float = 0.102
    p_phi: float = -0.528
    a_par_mhz: float = Field(default=2.169, gt=0)
    sigma_coh: float = Field(default=0.018, gt=0)
    sigma_nm: float = Field(default=0.018, gt=0)

    def to_params(self) -> NmModelParams:
        return NmModelParams(
            contrast=ContrastModel(c_a=self.c_a, c_nu=self.c_nu, c_b=self.c_b),
            population=PopulationModel(p_a=self.p_a, p_nu=self.p_nu, p_b=self.p_b, p_phi=self.p_phi),
            coupling=HyperfineCoupling.from_mhz(self.a_par_mhz),
            sigma_coh=self.sigma_coh,
            sigma_nm=self.sigma_nm,
        )

    def to_vector(self) -> List[float]:
        """Values in the joint-model parameter layout."""
        return [
            self.c_a, self.c_nu, self.c_b, self.p_a, self.p_nu, self.p_b, self.p_phi,
            TWO_PI * self.a_par_mhz, self.sigma_coh, self.sigma_nm,
        ]


def _default_fid_grid() -> List[GridSegment]:
    return [GridSegment(start=0.0, stop=1.5, points=30), GridSegment(start=2.0, stop=45.0, points=30)]


def _default_nm_grid() -> List[GridSegment]:
    return [GridSegment(start=0.0, stop=1.226, points=50)]


def _default_phis() -> List[float]:
    return np.linspace(0.0, TWO_PI, 14).tolist()


class SimulateBlock(BaseModel):
    """
    Synthetic data generation.

    model "fid" writes one FID trace; model "nm" writes one contrast-scaled trace per
    angle plus the N' point (last minus first sample) of each.
    """

    model_config = ConfigDict(extra="forbid")

    model: Literal["fid", "nm"] = "fid"
    fid: FidTruth = Field(default_factory=FidTruth)
    nm: NmTruth = Field(default_factory=NmTruth)
    fid_times: List[GridSegment] = Field(default_factory=_default_fid_grid)
    nm_times: List[GridSegment] = Field(default_factory=_default_nm_grid)
    phis: List[float] = Field(default_factory=_default_phis, min_length=1)
    channels: Literal["quadrature", "magnitude"] = "quadrature"
    noise: Optional[float] = Field(default=None, ge=0)

    @field_validator("fid_times", "nm_times")
    @classmethod
    def _check_grid(cls, value: List[GridSegment]) -> List[GridSegment]:
        _grid(value)
        return value

    def fid_grid(self) -> np.ndarray:
        return _grid(self.fid_times)

    def nm_grid(self) -> np.ndarray:
        return _grid(self.nm_times)


class TraceRef(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: str
    phi: Optional[float] = None


class DataBlock(BaseModel):
    """
    Input datasets.

    Attributes:
        traces: Trace files; fit-fid uses the first, fit-nm all of them (phi from the
            file header unless given here).
        nm_points: CSV of (phi_rad, nm) observations for fit-nm.
        time_unit: Unit of a plain `t` column.
        calibration: Affine map to raw readout, replacing header values.
        horizon: Evolution time of the N' points in us; defaults to the latest trace time.
    """

    model_config = ConfigDict(extra="forbid")

    traces: List[TraceRef] = Field(default_factory=list)
    nm_points: Optional[str] = None
    time_unit: Optional[Literal["ns", "us", "ms", "s"]] = None
    calibration: Optional[Normalization] = None
    horizon: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_files(self) -> "DataBlock":
        missing = [ref.path for ref in self.traces if not Path(ref.path).is_file()]
        if self.nm_points is not None and not Path(self.nm_points).is_file():
            missing.append(self.nm_points)
        if missing:
            raise ValueError(f"referenced data files do not exist: {missing}")
        return self


class AnalyticMeasure(BaseModel):
    """Closed-form trajectory r(t) of a given preparation, measured on [0, horizon]."""

    model_config = ConfigDict(extra="forbid")

    p: float = Field(default=1.0, ge=0, le=1)
    phi: float = 0.0
    a_par_mhz: float = Field(default=2.143, gt=0)
    t2_star: Optional[float] = Field(default=None, gt=0)
    horizon: float = Field(default=1.226, gt=0)


class MeasureBlock(BaseModel):
    """
    Non-Markovianity measures.

    Traces from the data block get the exact measure; `analytic` entries get the exact
    measure of their closed-form trajectory; `modified_phis` get the modified measure of
    the joint model at the simulate.nm values over `horizon`.
    """

    model_config = ConfigDict(extra="forbid")

    eps: Optional[float] = Field(default=None, ge=0)
    grid_points: int = Field(default=20001, ge=3)
    analytic: List[AnalyticMeasure] = Field(default_factory=list)
    modified_phis: List[float] = Field(default_factory=list)
    horizon: float = Field(default=1.226, gt=0)


class PredictBlock(BaseModel):
    """
    Posterior-predictive curves over an angle grid.

    Attributes:
        draws: Draws CSV of a joint-model fit; without it the posterior is the single
            point of the simulate.nm values.
        phis: Angle grid.
        horizon: Evolution time T of N'.
        max_draws: Cap on draws pushed through the model.
        include_noise: Report the predictive std of a new N' observation.
    """

    model_config = ConfigDict(extra="forbid")

    draws: Optional[str] = None
    phis: GridSegment = Field(default_factory=lambda: GridSegment(start=0.0, stop=TWO_PI, points=100))
    horizon: float = Field(default=1.226, gt=0)
    max_draws: int = Field(default=2000, ge=1)
    include_noise: bool = False

    @field_validator("draws")
    @classmethod
    def _check_draws(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and not Path(value).is_file():
            raise ValueError(f"draws file does not exist: {value}")
        return value


class ReportBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bundle: Optional[str] = None


class RunConfig(BaseModel):
    """
    Full configuration of one command.

    The run seed is the single source of randomness: it is copied into the sampler
    block and recorded in every output.
    """

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2 ** 64)
    output_dir: str = OUTPUT_DIR
    format: Literal["csv", "json"] = "csv"
    sampler_kind: Literal["mh", "hmc"] = "mh"
    force: bool = False
    simulate: SimulateBlock = Field(default_factory=SimulateBlock)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    priors: Dict[str, PriorEntry] = Field(default_factory=dict)
    data: DataBlock = Field(default_factory=DataBlock)
    measure: MeasureBlock = Field(default_factory=MeasureBlock)
    predict: PredictBlock = Field(default_factory=PredictBlock)
    report: ReportBlock = Field(default_factory=ReportBlock)

    @model_validator(mode="after")
    def _sync_seed(self) -> "RunConfig":
        if self.sampler.seed != self.seed:
            self.sampler = self.sampler.model_copy(update={"seed": self.seed})
        return self


class PredictiveCurve(BaseModel):
    """Serialised posterior-predictive band."""

    curve: str
    inputs: List[float]
    mean: List[float]
    std: List[float]
    lo: List[float]
    hi: List[float]
    median_curve: List[float]
    predictive_std: Optional[List[float]] = None
    n_draws: int


class ResultsBundle(BaseModel):
    """
    Self-describing record of one command.

    Re-running with the echoed config reproduces every field except created_at.
    """

    command: str
    fingerprint: str
    seed: int
    config: Dict[str, Any]
    summaries: Dict[str, ParameterSummary] = Field(default_factory=dict)
    diagnostics: Optional[FitDiagnostics] = None
    nm_reports: List[NmReport] = Field(default_factory=list)
    predictive: Dict[str, PredictiveCurve] = Field(default_factory=dict)
    extras: Dict[str, float] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    created_at: str


class ErrorResponse(BaseModel):
    """Machine-readable error printed on stderr when a command fails."""

    error: str
    message: str
    exit_code: int
    details: Optional[Dict[str, Any]] = None
