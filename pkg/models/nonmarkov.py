"""
Non-Markovianity of the electron coherence.

For pure dephasing, the trace distance of the antipodal equatorial pair is the
Bloch-vector length r(t), and the information backflow measure is the summed
gain of r over its intervals of increase. Two quantities are provided:

* the exact measure, summing r(tau') - r(tau) over detected increase intervals of
  a sampled or analytic trajectory;
* the modified measure C(phi) [r(T) - 1], which sums every increment of the record
  (positive and negative) so point-wise noise averages out.
"""
import math
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.spin import (
    DephasingEnvelope,
    HyperfineCoupling,
    NmModelParams,
    bloch_length,
    nitrogen_populations,
    nm_measure_closed_form,
)
from models.trace import CoherenceTrace
from utils.errors import DomainError
from utils.logging_utils import setup_logger

# Configure logging
logger = setup_logger("nonmarkov", "nonmarkov.log")

DEFAULT_GRID_POINTS = 20001
REFINE_TOL = 1e-9
ROUNDING_TOL = 1e-13
POSITIVE_TOL = 1e-12
NOISE_EPS_FACTOR = 2.0


class SampledTrajectory(BaseModel):
    """r values recorded on an ascending time grid."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    values: np.ndarray

    @field_validator("times", "values", mode="before")
    @classmethod
    def _to_array(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64, copy=True).reshape(-1)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _check(self) -> "SampledTrajectory":
        if self.times.size != self.values.size:
            raise ValueError("times and values must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        return self

    @classmethod
    def from_trace(cls, trace: CoherenceTrace) -> "SampledTrajectory":
        return cls(times=trace.times, values=trace.magnitude)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


class AnalyticTrajectory(BaseModel):
    """r(t) of the closed-form model, evaluable anywhere on [0, horizon]."""

    model_config = ConfigDict(frozen=True)

    p: float = Field(ge=0, le=1)
    phi: float
    coupling: HyperfineCoupling
    envelope: DephasingEnvelope = DephasingEnvelope()
    horizon: float = Field(gt=0)

    def evaluate(self, t) -> np.ndarray:
        state = nitrogen_populations(self.p, self.phi)
        return np.asarray(bloch_length(state, self.coupling, self.envelope, t), dtype=np.float64)


Trajectory = Union[SampledTrajectory, AnalyticTrajectory]


class NmInterval(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: float
    end: float
    gain: float


class NmReport(BaseModel):
    """Value of a non-Markovianity measure with the intervals that produced it."""

    model_config = ConfigDict(frozen=True)

    value: float
    intervals: List[NmInterval] = Field(default_factory=list)
    grid_step: float
    kind: Literal["exact", "modified"]
    phi: Optional[float] = None

    @model_validator(mode="after")
    def _check_sign(self) -> "NmReport":
        if self.kind == "exact":
            if self.value < 0:
                raise ValueError(f"exact measure must be non-negative, got {self.value}")
            if any(interval.gain <= 0 for interval in self.intervals):
                raise ValueError("exact measure intervals must have positive gain")
        return self


def estimate_noise_std(values) -> float:
    """
    Robust per-point noise estimate from second differences.

    For white noise of std s, the second difference has std s sqrt(6); the median
    absolute deviation scaled by 1.4826 estimates that std.
    """
    series = np.asarray(values, dtype=np.float64)
    if series.size < 3:
        return 0.0
    second = np.diff(series, n=2)
    return float(1.4826 * np.median(np.abs(second - np.median(second))) / math.sqrt(6.0))


def default_eps(traj: Trajectory) -> float:
    """0 for analytic trajectories, twice the estimated noise std for sampled ones."""
    if isinstance(traj, AnalyticTrajectory):
        return 0.0
    return NOISE_EPS_FACTOR * estimate_noise_std(traj.values)


def _grid(traj: Trajectory, grid_points: int) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(traj, SampledTrajectory):
        return traj.times, traj.values
    times = np.linspace(0.0, traj.horizon, grid_points)
    return times, traj.evaluate(times)


def _zigzag(values: np.ndarray, eps: float) -> List[Tuple[int, int]]:
    """
    Index pairs (low, high) of increase intervals whose gain exceeds eps.

    A rise only opens once r climbs more than eps above the running minimum, and
    closes once r falls more than eps below the running maximum.
    """
    pairs: List[Tuple[int, int]] = []
    rising = False
    low = 0
    high = 0
    for i in range(1, values.size):
        v = values[i]
        if not rising:
            if v < values[low]:
                low = i
            elif v - values[low] > eps:
                rising = True
                high = i
        else:
            if v > values[high]:
                high = i
            elif values[high] - v > eps:
                pairs.append((low, high))
                rising = False
                low = i
    if rising:
        pairs.append((low, high))
    return pairs


def _refine(f: Callable[[float], float], lo: float, hi: float, maximum: bool) -> float:
    """Bisection on the sign of the central-difference slope, to REFINE_TOL."""
    h = REFINE_TOL / 4.0
    sign = 1.0 if maximum else -1.0
    while hi - lo > REFINE_TOL:
        mid = 0.5 * (lo + hi)
        slope = f(mid + h) - f(mid - h)
        if sign * slope > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _refine_index(traj: AnalyticTrajectory, times: np.ndarray, index: int, maximum: bool) -> Tuple[float, float]:
    last = times.size - 1
    if index == 0 or index == last:
        t = float(times[index])
        return t, float(traj.evaluate(t))

    def f(x: float) -> float:
        return float(traj.evaluate(min(max(x, 0.0), traj.horizon)))

    t = _refine(f, float(times[index - 1]), float(times[index + 1]), maximum)
    value = f(t)
    grid_value = float(traj.evaluate(float(times[index])))
    # Keep the grid point when refinement did not improve on it
    if (maximum and grid_value > value) or (not maximum and grid_value < value):
        return float(times[index]), grid_value
    return t, value


def detect_monotone_intervals(
    traj: Trajectory,
    eps: Optional[float] = None,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> List[Tuple[float, float]]:
    """
    Intervals (tau, tau') over which r increases by more than eps.

    Analytic trajectories are bracketed on a dense grid and each extremum refined
    by bisection on the slope sign.

    Args:
        traj: Sampled or analytic trajectory.
        eps: Minimum gain for an interval; defaults to default_eps(traj).
        grid_points: Grid size for analytic trajectories.

    Returns:
        Ascending list of (tau, tau') pairs.

    Raises:
        DomainError: On fewer than two samples or negative eps.
    """
    return [(iv.start, iv.end) for iv in _intervals(traj, eps, grid_points)[0]]


def _intervals(traj: Trajectory, eps: Optional[float], grid_points: int):
    if eps is None:
        eps = default_eps(traj)
    if eps < 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    if grid_points < 2:
        raise DomainError("at least two grid points are required")
    times, values = _grid(traj, grid_points)
    if times.size < 2:
        raise DomainError("a trajectory needs at least two samples")
    step = float(np.min(np.diff(times)))

    analytic = isinstance(traj, AnalyticTrajectory)
    # Swings below ROUNDING_TOL on an analytic r are floating-point wiggles, not rises
    threshold = max(eps, ROUNDING_TOL) if analytic else eps

    intervals: List[NmInterval] = []
    for low, high in _zigzag(values, threshold):
        if analytic:
            t_low, r_low = _refine_index(traj, times, low, maximum=False)
            t_high, r_high = _refine_index(traj, times, high, maximum=True)
        else:
            t_low, r_low = float(times[low]), float(values[low])
            t_high, r_high = float(times[high]), float(values[high])
        gain = r_high - r_low
        if gain > threshold and gain > 0:
            intervals.append(NmInterval(start=t_low, end=t_high, gain=gain))
    return intervals, step


def measure_exact(
    traj: Trajectory,
    eps: Optional[float] = None,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> NmReport:
    """
    Information-backflow measure: sum of r(tau') - r(tau) over increase intervals.

    Returns:
        NmReport of kind "exact"; value 0 exactly when no interval is found.
    """
    intervals, step = _intervals(traj, eps, grid_points)
    value = float(sum(iv.gain for iv in intervals))
    logger.debug(f"Exact measure {value:.6g} from {len(intervals)} interval(s)")
    phi = traj.phi if isinstance(traj, AnalyticTrajectory) else None
    return NmReport(value=value, intervals=intervals, grid_step=step, kind="exact", phi=phi)


def measure_modified(params: NmModelParams, phi: float, horizon: float) -> NmReport:
    """
    Modified measure C(phi) [r(T, phi, p(phi)) - 1] of the joint model.

    r(T) <= 1 makes the value non-positive; rounding residue above zero is cleared.

    Raises:
        DomainError: If the horizon is not positive, or the value exceeds zero by more
            than rounding.
    """
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    value = float(
        nm_measure_closed_form(params.contrast, params.population, params.coupling, phi, horizon)
    )
    if value > POSITIVE_TOL:
        raise DomainError(
            f"modified measure {value:.3g} is positive at phi={phi}; the model inputs are inconsistent",
            {"phi": phi, "value": value},
        )
    # Rounding residue of r(T) = 1
    value = min(value, 0.0)
    return NmReport(
        value=value,
        intervals=[NmInterval(start=0.0, end=horizon, gain=value)],
        grid_step=horizon,
        kind="modified",
        phi=phi,
    )


def measure_modified_from_data(trace: CoherenceTrace, contrast_at_phi: float) -> NmReport:
    """
    Modified measure of a recorded trace: C(phi) times the telescoped sum of all increments.

    The trace must be in full-coherence units, so that its first sample represents r = 1.

    Raises:
        DomainError: If the trace is empty.
    """
    magnitude = trace.magnitude
    if magnitude.size == 0:
        raise DomainError("cannot measure an empty trace")
    value = float(contrast_at_phi * (magnitude[-1] - magnitude[0]))
    horizon = float(trace.times[-1] - trace.times[0])
    step = float(np.min(np.diff(trace.times))) if trace.times.size > 1 else 0.0
    return NmReport(
        value=value,
        intervals=[NmInterval(start=float(trace.times[0]), end=float(trace.times[-1]), gain=value)],
        grid_step=step if horizon > 0 else 0.0,
        kind="modified",
        phi=trace.phi,
    )
