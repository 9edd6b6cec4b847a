"""
Dataset ingestion and result emission for nvdephase.

Trace CSV layout:

    # phi_rad=0.5
    # seed=20180701
    # units: t_us=us, x=1, y=1
    t_us,x,y
    0,1.0,0.0
    ...

A magnitude-only trace has a single `r` column instead of `x, y`. The time column
may be declared as t_ns, t_us, t_ms or t_s and is converted to microseconds. All
writes go to a temporary file in the target directory that is then renamed over
the destination.
"""
import hashlib
import io
import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from models.trace import CoherenceTrace, Normalization
from utils.errors import DataFormatError
from utils.logging_utils import setup_logger

# Configure logging
logger = setup_logger("io", "io.log")

PathLike = Union[str, Path]
TraceFormat = Literal["csv", "json"]

# Factor converting each declared time column to microseconds
TIME_COLUMNS = {"t_ns": 1e-3, "t_us": 1.0, "t_ms": 1e3, "t_s": 1e6}
TIME_UNITS = {"ns": 1e-3, "us": 1.0, "ms": 1e3, "s": 1e6}
FLOAT_FORMAT = "%.17g"

_META_LINE = re.compile(r"^#\s*([A-Za-z_]+)\s*[=:]\s*(.*?)\s*$")


def atomic_write_text(path: PathLike, text: str) -> Path:
    """
    Write text to path through a temporary sibling file and os.replace.

    Returns:
        The destination path.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=False) + "\n")


def fingerprint(sources: Iterable[Union[PathLike, bytes]]) -> str:
    """sha256 over the bytes of the given files (or raw byte strings), in order."""
    digest = hashlib.sha256()
    for source in sources:
        if isinstance(source, bytes):
            digest.update(source)
        else:
            digest.update(Path(source).read_bytes())
    return f"sha256:{digest.hexdigest()}"


def detect_format(path: PathLike, format: Optional[str] = None) -> TraceFormat:
    if format is not None:
        if format not in ("csv", "json"):
            raise DataFormatError(f"unsupported trace format '{format}'")
        return format  # type: ignore[return-value]
    suffix = Path(path).suffix.lower()
    if suffix == ".json":
        return "json"
    return "csv"


# CSV


def _read_table(path: PathLike) -> Tuple[Dict[str, str], pd.DataFrame, List[int]]:
    """
    Split a CSV into header metadata, a string-typed DataFrame and the file line of each data row.
    """
    text = Path(path).read_text(encoding="utf-8")
    meta: Dict[str, str] = {}
    body: List[str] = []
    lines: List[int] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            match = _META_LINE.match(stripped)
            if match:
                meta[match.group(1).lower()] = match.group(2)
            continue
        body.append(raw)
        lines.append(number)
    if not body:
        raise DataFormatError(f"{path}: no header row found", line=1)
    frame = pd.read_csv(io.StringIO("\n".join(body)), dtype=str, skipinitialspace=True, keep_default_na=False)
    frame.columns = [str(c).strip() for c in frame.columns]
    return meta, frame, lines[1:]


def _numeric_column(frame: pd.DataFrame, column: str, lines: List[int], path: PathLike) -> np.ndarray:
    raw = frame[column].astype(str).str.strip()
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataFormatError(
            f"{path}: malformed number '{raw.iloc[row]}' in column '{column}'",
            row=row,
            column=column,
            line=lines[row] if row < len(lines) else None,
        )
    # Python float parsing round-trips every %.17g value exactly
    return raw.to_numpy(dtype=object).astype(np.float64)


def _float_meta(meta: Dict[str, str], key: str, path: PathLike) -> Optional[float]:
    if key not in meta:
        return None
    try:
        return float(meta[key])
    except ValueError:
        raise DataFormatError(f"{path}: header '{key}' is not a number: '{meta[key]}'", column=key)


def _check_increasing(times: np.ndarray, column: str, lines: List[int], path: PathLike) -> None:
    steps = np.diff(times)
    if np.any(steps <= 0):
        row = int(np.argmax(steps <= 0)) + 1
        raise DataFormatError(
            f"{path}: times must be strictly increasing; row {row} repeats or precedes the previous time",
            row=row,
            column=column,
            line=lines[row] if row < len(lines) else None,
        )


def _load_trace_csv(path: PathLike, time_unit: Optional[str], calibration: Optional[Normalization]) -> CoherenceTrace:
    meta, frame, lines = _read_table(path)
    columns = list(frame.columns)

    time_column = next((c for c in columns if c in TIME_COLUMNS), None)
    if time_column is not None:
        factor = TIME_COLUMNS[time_column]
    elif "t" in columns and time_unit is not None:
        time_column, factor = "t", TIME_UNITS[time_unit]
    else:
        raise DataFormatError(
            f"{path}: missing time column (one of {sorted(TIME_COLUMNS)}, or 't' with a time-unit override)",
            line=lines[0] - 1 if lines else 1,
        )
    if len(frame) == 0:
        raise DataFormatError(f"{path}: no data rows", column=time_column)

    times = _numeric_column(frame, time_column, lines, path) * factor
    _check_increasing(times, time_column, lines, path)

    if "x" in columns and "y" in columns:
        x = _numeric_column(frame, "x", lines, path)
        y: Optional[np.ndarray] = _numeric_column(frame, "y", lines, path)
    elif "r" in columns:
        x, y = _numeric_column(frame, "r", lines, path), None
    else:
        missing = "y" if "x" in columns else ("x" if "y" in columns else "x, y (or r)")
        raise DataFormatError(f"{path}: missing column(s) {missing}", column=missing)

    seed = meta.get("seed")
    if calibration is None:
        scale = _float_meta(meta, "scale", path)
        offset = _float_meta(meta, "offset", path)
        calibration = Normalization(scale=scale if scale is not None else 1.0, offset=offset or 0.0)
    try:
        return CoherenceTrace(
            times=times,
            x_channel=x,
            y_channel=y,
            normalization=calibration,
            phi=_float_meta(meta, "phi_rad", path),
            seed=int(seed) if seed is not None and seed != "" else None,
        )
    except (ValidationError, ValueError) as e:
        raise DataFormatError(f"{path}: {e}")


def _trace_frame(trace: CoherenceTrace) -> pd.DataFrame:
    if trace.has_quadratures:
        return pd.DataFrame({"t_us": trace.times, "x": trace.x_channel, "y": trace.y_channel})
    return pd.DataFrame({"t_us": trace.times, "r": trace.x_channel})


def _save_trace_csv(trace: CoherenceTrace, path: PathLike) -> Path:
    header = []
    if trace.phi is not None:
        header.append(f"# phi_rad={trace.phi!r}")
    if trace.seed is not None:
        header.append(f"# seed={trace.seed}")
    header.append(f"# scale={trace.normalization.scale!r}")
    header.append(f"# offset={trace.normalization.offset!r}")
    channels = "x=1, y=1" if trace.has_quadratures else "r=1"
    header.append(f"# units: t_us=us, {channels}")
    body = _trace_frame(trace).to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, "\n".join(header) + "\n" + body)


# JSON


class TraceDocument(BaseModel):
    """JSON form of a CoherenceTrace."""

    model_config = ConfigDict(extra="forbid")

    times: List[float]
    x: List[float]
    y: Optional[List[float]] = None
    time_unit: Literal["ns", "us", "ms", "s"] = "us"
    phi: Optional[float] = None
    seed: Optional[int] = None
    normalization: Normalization = Field(default_factory=Normalization)


def _load_trace_json(path: PathLike, time_unit: Optional[str], calibration: Optional[Normalization]) -> CoherenceTrace:
    text = Path(path).read_text(encoding="utf-8")
    try:
        document = TraceDocument.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        location = [str(part) for part in first.get("loc", ())]
        column = location[0] if location else None
        row = int(location[1]) if len(location) > 1 and location[1].isdigit() else None
        raise DataFormatError(f"{path}: {first.get('msg', 'invalid trace document')}", row=row, column=column)
    unit = time_unit or document.time_unit
    times = np.asarray(document.times, dtype=np.float64) * TIME_UNITS[unit]
    if times.size == 0:
        raise DataFormatError(f"{path}: no data rows", column="times")
    _check_increasing(times, "times", [], path)
    for column, values in (("x", document.x), ("y", document.y)):
        if values is None:
            continue
        bad = ~np.isfinite(np.asarray(values, dtype=np.float64))
        if bad.any():
            row = int(np.argmax(bad))
            raise DataFormatError(f"{path}: {column} value at row {row} is not finite", row=row, column=column)
    try:
        return CoherenceTrace(
            times=times,
            x_channel=document.x,
            y_channel=document.y,
            normalization=calibration or document.normalization,
            phi=document.phi,
            seed=document.seed,
        )
    except (ValidationError, ValueError) as e:
        raise DataFormatError(f"{path}: {e}")


def _save_trace_json(trace: CoherenceTrace, path: PathLike) -> Path:
    document = TraceDocument(
        times=trace.times.tolist(),
        x=trace.x_channel.tolist(),
        y=trace.y_channel.tolist() if trace.y_channel is not None else None,
        phi=trace.phi,
        seed=trace.seed,
        normalization=trace.normalization,
    )
    return atomic_write_text(path, document.model_dump_json(indent=2) + "\n")


def load_trace(
    path: PathLike,
    format: Optional[TraceFormat] = None,
    time_unit: Optional[str] = None,
    calibration: Optional[Normalization] = None,
) -> CoherenceTrace:
    """
    Load a CoherenceTrace from CSV or JSON.

    Args:
        path: Source file.
        format: "csv" or "json"; inferred from the suffix when omitted.
        time_unit: Unit of a plain `t` column (CSV) or override of the document unit (JSON).
        calibration: Affine map to raw readout, replacing any header values.

    Returns:
        The validated trace with times in microseconds.

    Raises:
        DataFormatError: On missing columns, malformed numbers or non-increasing times,
            with the offending row, column and line where known.
        OSError: If the file cannot be read.
    """
    if time_unit is not None and time_unit not in TIME_UNITS:
        raise DataFormatError(f"unknown time unit '{time_unit}' (expected one of {sorted(TIME_UNITS)})")
    kind = detect_format(path, format)
    trace = _load_trace_json(path, time_unit, calibration) if kind == "json" else _load_trace_csv(path, time_unit, calibration)
    logger.debug(f"Loaded {len(trace)} samples from {path}")
    return trace


def save_trace(trace: CoherenceTrace, path: PathLike, format: Optional[TraceFormat] = None) -> Path:
    """Write a trace as CSV or JSON so that load_trace reproduces it exactly."""
    kind = detect_format(path, format)
    return _save_trace_json(trace, path) if kind == "json" else _save_trace_csv(trace, path)


# Modified-measure points


def load_nm_points(path: PathLike) -> List[Tuple[float, float]]:
    """
    Read (phi, N') pairs from a CSV with columns phi_rad and nm.

    Raises:
        DataFormatError: On missing columns or malformed numbers.
    """
    _, frame, lines = _read_table(path)
    for column in ("phi_rad", "nm"):
        if column not in frame.columns:
            raise DataFormatError(f"{path}: missing column '{column}'", column=column)
    phis = _numeric_column(frame, "phi_rad", lines, path)
    values = _numeric_column(frame, "nm", lines, path)
    return list(zip(phis.tolist(), values.tolist()))


def save_nm_points(points: Sequence[Tuple[float, float]], path: PathLike) -> Path:
    frame = pd.DataFrame({"phi_rad": [p for p, _ in points], "nm": [v for _, v in points]})
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, "# units: phi_rad=rad, nm=1\n" + body)


# Posterior draws and curves


def write_draws_csv(samples, path: PathLike) -> Path:
    """
    One row per retained draw: chain, iteration, then one column per parameter
    labelled name[unit].
    """
    chains, n, _ = samples.draws.shape
    iterations = samples.warmup + samples.thin * np.arange(n)
    columns: Dict[str, Any] = {
        "chain": np.repeat(np.arange(chains), n),
        "iteration": np.tile(iterations, chains),
    }
    for index, (name, unit) in enumerate(zip(samples.names, samples.units)):
        columns[f"{name}[{unit}]"] = samples.draws[:, :, index].reshape(-1)
    columns["log_posterior[1]"] = samples.log_posterior.reshape(-1)
    header = (
        f"# sampler={samples.sampler}\n# warmup={samples.warmup}\n# thin={samples.thin}\n"
        f"# seeds={' '.join(str(s) for s in samples.seeds)}\n"
    )
    body = pd.DataFrame(columns).to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, header + body)


_LABELLED = re.compile(r"^(?P<name>[^\[]+)\[(?P<unit>[^\]]*)\]$")


def load_draws_csv(path: PathLike):
    """
    Read a draws CSV back into PosteriorSamples.

    Raises:
        DataFormatError: On missing chain/iteration columns or malformed numbers.
    """
    from inference.samplers import PosteriorSamples

    meta, frame, lines = _read_table(path)
    for column in ("chain", "iteration"):
        if column not in frame.columns:
            raise DataFormatError(f"{path}: missing column '{column}'", column=column)
    chain = _numeric_column(frame, "chain", lines, path).astype(int)
    names, units, blocks = [], [], []
    log_post = None
    for column in frame.columns:
        match = _LABELLED.match(column)
        if not match:
            continue
        values = _numeric_column(frame, column, lines, path)
        if match.group("name") == "log_posterior":
            log_post = values
            continue
        names.append(match.group("name"))
        units.append(match.group("unit"))
        blocks.append(values)
    if not names:
        raise DataFormatError(f"{path}: no parameter columns")
    n_chains = int(chain.max()) + 1
    counts = np.bincount(chain, minlength=n_chains)
    if np.any(counts != counts[0]):
        raise DataFormatError(f"{path}: chains have unequal numbers of draws", column="chain")
    order = np.argsort(chain, kind="stable")
    draws = np.column_stack(blocks)[order].reshape(n_chains, counts[0], len(names))
    log_post = np.zeros(chain.size) if log_post is None else log_post
    seeds = [int(s) for s in meta.get("seeds", "").split()] or [0] * n_chains
    return PosteriorSamples(
        names=names,
        units=units,
        draws=draws,
        log_posterior=log_post[order].reshape(n_chains, counts[0]),
        seeds=seeds,
        acceptance=[float("nan")] * n_chains,
        warmup=int(meta.get("warmup", 0)),
        thin=int(meta.get("thin", 1)),
        sampler=meta.get("sampler", "given") if meta.get("sampler") in ("mh", "hmc") else "given",
    )


def write_curves_csv(
    input_column: str,
    inputs: np.ndarray,
    columns: Dict[str, np.ndarray],
    path: PathLike,
) -> Path:
    """
    Write plot-ready curves: the input grid followed by labelled value columns.

    Args:
        input_column: Labelled name of the grid column, e.g. "phi[rad]".
        inputs: Grid values.
        columns: Labelled column name -> values on the grid.
        path: Destination.
    """
    frame = pd.DataFrame({input_column: np.asarray(inputs, dtype=np.float64)})
    for name, values in columns.items():
        frame[name] = np.asarray(values, dtype=np.float64)
    units = ", ".join(
        f"{m.group('name')}={m.group('unit')}" for m in (_LABELLED.match(c) for c in frame.columns) if m
    )
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, f"# units: {units}\n" + body)


def write_reports_csv(reports, path: PathLike) -> Path:
    """One row per NmReport: kind, angle, value and the number of contributing intervals."""
    frame = pd.DataFrame(
        {
            "kind": [r.kind for r in reports],
            "phi[rad]": [np.nan if r.phi is None else r.phi for r in reports],
            "value[1]": [r.value for r in reports],
            "intervals": [len(r.intervals) for r in reports],
            "grid_step[us]": [r.grid_step for r in reports],
        }
    )
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, "# units: phi=rad, value=1, grid_step=us\n" + body)
