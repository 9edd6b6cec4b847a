"""
nvdephase command line

Implements the simulate, fit-fid, fit-nm, measure, predict and report commands.
Every command writes its outputs atomically into the output directory together with
a ResultsBundle JSON, and exits with 0 on success, 1 on validation failures, 2 on
sampling failures and 3 on I/O failures. Failures print an ErrorResponse JSON on stderr.
"""
import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from cli.schemas import ErrorResponse, PredictiveCurve, ResultsBundle, RunConfig
from inference.likelihood import NM_NAMES
from inference.pipeline import (
    PredictiveBand,
    build_nm_predictive_model,
    fit_fid,
    fit_nm,
    posterior_predictive,
)
from inference.priors import default_nm_priors
from inference.samplers import PosteriorSamples, chain_seeds
from models.nonmarkov import (
    AnalyticTrajectory,
    NmReport,
    SampledTrajectory,
    measure_exact,
    measure_modified,
)
from models.oracle import simulate_ramsey
from models.spin import DephasingEnvelope, HyperfineCoupling
from models.trace import CoherenceTrace
from utils.config import DEFAULT_CHAINS, DEFAULT_ITERS, DEFAULT_SEED, ENVIRONMENT, OUTPUT_DIR
from utils.errors import EXIT_OK, EXIT_VALIDATION, ConfigError, exit_code_for
from utils.io_utils import (
    atomic_write_text,
    fingerprint,
    load_draws_csv,
    load_nm_points,
    load_trace,
    save_nm_points,
    save_trace,
    write_curves_csv,
    write_draws_csv,
    write_json,
    write_reports_csv,
)
from utils.logging_utils import setup_logger
from utils.report_templates import (
    DIAGNOSTICS_BLOCK,
    NM_TABLE_HEADER,
    NM_TABLE_ROW,
    OUTPUT_ROW,
    OUTPUTS_HEADER,
    PARAMETER_TABLE_HEADER,
    PARAMETER_TABLE_ROW,
    PREDICTIVE_ROW,
    REPORT_HEADER,
)

# Configure logging
logger = setup_logger("cli", "cli.log")

NM_CURVES = ("nm", "population", "contrast", "nm_ideal")
FID_TRACE = "fid_trace"
NM_TRACE_PREFIX = "nm_trace_"
NM_POINTS = "nm_points.csv"
REPORT_SOURCES = ("fit_fid.json", "fit_nm.json", "predict.json", "measure.json", "simulate.json")


# Configuration


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--seed", type=int, help=f"run seed (default NVDEPH_SEED or {DEFAULT_SEED})")
    common.add_argument("--out", help=f"output directory (default NVDEPH_OUTPUT_DIR or '{OUTPUT_DIR}')")
    common.add_argument("--chains", type=int, help=f"number of chains (default NVDEPH_CHAINS or {DEFAULT_CHAINS})")
    common.add_argument("--iters", type=int, help=f"iterations per chain (default NVDEPH_ITERS or {DEFAULT_ITERS})")
    common.add_argument("--format", choices=("csv", "json"), help="trace format written by simulate / report format")
    common.add_argument("--sampler", choices=("mh", "hmc"), help="posterior sampler (default mh)")
    common.add_argument("--force", action="store_true", help="summarise chains even when rhat exceeds 1.1")

    parser = argparse.ArgumentParser(
        prog="nvdephase",
        description="Non-Markovian dephasing of an NV electron spin: simulation, Bayesian fits and measures.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="write synthetic Ramsey traces")
    commands.add_parser("fit-fid", parents=[common], help="fit the free-induction-decay model to one trace")
    commands.add_parser("fit-nm", parents=[common], help="fit the joint coherence / non-Markovianity model")
    commands.add_parser("measure", parents=[common], help="non-Markovianity measures of traces or closed forms")
    commands.add_parser("predict", parents=[common], help="posterior-predictive curves over an angle grid")
    commands.add_parser("report", parents=[common], help="render the summary table of a results bundle")
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge the config file (if any) with command-line overrides.

    Raises:
        OSError: If the config file cannot be read.
        ValidationError: If the merged document is not a valid RunConfig.
    """
    document: Dict = {}
    if args.config:
        document = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(document, dict):
            raise ConfigError(f"{args.config}: a run configuration must be a JSON object")
    if args.seed is not None:
        document["seed"] = args.seed
    if args.out is not None:
        document["output_dir"] = args.out
    if args.format is not None:
        document["format"] = args.format
    if args.sampler is not None:
        document["sampler_kind"] = args.sampler
    if args.force:
        document["force"] = True
    if args.chains is not None or args.iters is not None:
        sampler = dict(document.get("sampler") or {})
        if args.chains is not None:
            sampler["chains"] = args.chains
        if args.iters is not None:
            sampler["iters"] = args.iters
            sampler.pop("warmup", None)
        document["sampler"] = sampler
    return RunConfig.model_validate(document)


def _echo(config: RunConfig) -> Dict:
    return config.model_dump(mode="json")


def _config_bytes(config: RunConfig) -> bytes:
    return json.dumps(_echo(config), sort_keys=True).encode("utf-8")


def _bundle(command: str, config: RunConfig, sources: List, **fields) -> ResultsBundle:
    return ResultsBundle(
        command=command,
        fingerprint=fingerprint(sources),
        seed=config.seed,
        config=_echo(config),
        created_at=datetime.now(timezone.utc).isoformat(),
        **fields,
    )


def _write_bundle(bundle: ResultsBundle, path: Path) -> Path:
    bundle.outputs["bundle"] = str(path)
    atomic_write_text(path, bundle.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote {path}")
    return path


def _curve_payload(band: PredictiveBand) -> PredictiveCurve:
    return PredictiveCurve(
        curve=band.curve,
        inputs=band.inputs.tolist(),
        mean=band.mean.tolist(),
        std=band.std.tolist(),
        lo=band.lo.tolist(),
        hi=band.hi.tolist(),
        median_curve=band.median_curve.tolist(),
        predictive_std=None if band.predictive_std is None else band.predictive_std.tolist(),
        n_draws=band.n_draws,
    )


def _band_columns(bands: Sequence[PredictiveBand], unit: str = "1") -> Dict[str, np.ndarray]:
    columns: Dict[str, np.ndarray] = {}
    for band in bands:
        columns[f"{band.curve}_mean[{unit}]"] = band.mean
        columns[f"{band.curve}_std[{unit}]"] = band.std
        columns[f"{band.curve}_hpd_lo[{unit}]"] = band.lo
        columns[f"{band.curve}_hpd_hi[{unit}]"] = band.hi
        columns[f"{band.curve}_median[{unit}]"] = band.median_curve
        if band.predictive_std is not None:
            columns[f"{band.curve}_predictive_std[{unit}]"] = band.predictive_std
    return columns


# Data resolution


def _trace_paths(config: RunConfig, prefix: str) -> List[Tuple[Path, Optional[float]]]:
    if config.data.traces:
        return [(Path(ref.path), ref.phi) for ref in config.data.traces]
    out = Path(config.output_dir)
    paths = sorted(out.glob(f"{prefix}*.{config.format}"))
    if not paths:
        raise FileNotFoundError(f"no trace files matching {out / (prefix + '*.' + config.format)}")
    return [(path, None) for path in paths]


def _load(path: Path, config: RunConfig) -> CoherenceTrace:
    return load_trace(path, time_unit=config.data.time_unit, calibration=config.data.calibration)


# Commands


def run_simulate(config: RunConfig) -> ResultsBundle:
    """Write synthetic traces (and N' points for the joint model) into the output directory."""
    block = config.simulate
    out = Path(config.output_dir)
    outputs: Dict[str, str] = {}

    if block.model == "fid":
        trace = simulate_ramsey(
            block.fid.to_params(), block.fid_grid(), seed=config.seed, channels=block.channels, noise=block.noise
        )
        outputs["trace"] = str(save_trace(trace, out / f"{FID_TRACE}.{config.format}", config.format))
        logger.info(f"Simulated FID trace with {len(trace)} points")
    else:
        params = block.nm.to_params()
        grid = block.nm_grid()
        seeds = chain_seeds(config.seed, len(block.phis))
        points = []
        for index, (phi, seed) in enumerate(zip(block.phis, seeds)):
            trace = simulate_ramsey(params, grid, seed=seed, phi=phi, channels=block.channels, noise=block.noise)
            path = save_trace(trace, out / f"{NM_TRACE_PREFIX}{index:02d}.{config.format}", config.format)
            outputs[f"trace_{index:02d}"] = str(path)
            magnitude = trace.magnitude
            points.append((float(phi), float(magnitude[-1] - magnitude[0])))
        outputs["nm_points"] = str(save_nm_points(points, out / NM_POINTS))
        logger.info(f"Simulated {len(points)} coherence traces on {grid.size} points each")

    bundle = _bundle("simulate", config, [_config_bytes(config)], outputs=outputs)
    _write_bundle(bundle, out / "simulate.json")
    return bundle


def run_fit_fid(config: RunConfig) -> ResultsBundle:
    """Fit the FID model to the first configured trace (or the simulated one)."""
    out = Path(config.output_dir)
    if config.data.traces:
        path = Path(config.data.traces[0].path)
    else:
        path = out / f"{FID_TRACE}.{config.format}"
    trace = _load(path, config)

    result = fit_fid(
        trace, priors=config.priors or None, config=config.sampler, sampler=config.sampler_kind, force=config.force
    )
    band = posterior_predictive(result.samples, result.model, trace.times, "coherence", include_noise=True)

    outputs = {
        "draws": str(write_draws_csv(result.samples, out / "fit_fid_draws.csv")),
        "curves": str(write_curves_csv("t[us]", trace.times, _band_columns([band]), out / "fit_fid_curves.csv")),
    }
    bundle = _bundle(
        "fit-fid",
        config,
        [path],
        summaries=result.summaries,
        diagnostics=result.diagnostics,
        predictive={band.curve: _curve_payload(band)},
        outputs=outputs,
    )
    _write_bundle(bundle, out / "fit_fid.json")
    return bundle


def run_fit_nm(config: RunConfig) -> ResultsBundle:
    """Fit the joint model to all configured traces plus the N' points."""
    out = Path(config.output_dir)
    coh_sets = []
    sources: List = []
    for path, phi in _trace_paths(config, NM_TRACE_PREFIX):
        trace = _load(path, config)
        label = phi if phi is not None else trace.phi
        if label is None:
            raise ConfigError(f"{path}: no mixing angle in the file header or the data block")
        coh_sets.append((float(label), trace))
        sources.append(path)
    points_path = Path(config.data.nm_points) if config.data.nm_points else out / NM_POINTS
    nm_points = load_nm_points(points_path)
    sources.append(points_path)

    result = fit_nm(
        coh_sets,
        nm_points,
        priors=config.priors or None,
        config=config.sampler,
        sampler=config.sampler_kind,
        force=config.force,
        horizon=config.data.horizon,
    )
    grid = config.predict.phis.values()
    bands = [
        posterior_predictive(
            result.samples,
            result.model,
            grid,
            curve,
            max_draws=config.predict.max_draws,
            include_noise=config.predict.include_noise and curve == "nm",
        )
        for curve in NM_CURVES
    ]
    outputs = {
        "draws": str(write_draws_csv(result.samples, out / "fit_nm_draws.csv")),
        "curves": str(write_curves_csv("phi[rad]", grid, _band_columns(bands), out / "fit_nm_curves.csv")),
    }
    bundle = _bundle(
        "fit-nm",
        config,
        sources,
        summaries=result.summaries,
        diagnostics=result.diagnostics,
        predictive={band.curve: _curve_payload(band) for band in bands},
        extras=result.extras,
        outputs=outputs,
    )
    _write_bundle(bundle, out / "fit_nm.json")
    return bundle


def run_measure(config: RunConfig) -> ResultsBundle:
    """
    Exact measures of traces and closed-form trajectories, modified measures of the joint model.

    Without any configured target the simulated FID trace is measured.
    """
    block = config.measure
    out = Path(config.output_dir)
    reports: List[NmReport] = []
    sources: List = [_config_bytes(config)]

    paths = [(Path(ref.path), ref.phi) for ref in config.data.traces]
    if not paths and not block.analytic and not block.modified_phis:
        paths = [(out / f"{FID_TRACE}.{config.format}", None)]
    for path, _ in paths:
        trace = _load(path, config)
        sources.append(path)
        report = measure_exact(SampledTrajectory.from_trace(trace), block.eps, block.grid_points)
        reports.append(report.model_copy(update={"phi": trace.phi}))

    for target in block.analytic:
        trajectory = AnalyticTrajectory(
            p=target.p,
            phi=target.phi,
            coupling=HyperfineCoupling.from_mhz(target.a_par_mhz),
            envelope=DephasingEnvelope.gaussian(target.t2_star) if target.t2_star else DephasingEnvelope.unit(),
            horizon=target.horizon,
        )
        reports.append(measure_exact(trajectory, block.eps, block.grid_points))

    params = config.simulate.nm.to_params()
    for phi in block.modified_phis:
        reports.append(measure_modified(params, phi, block.horizon))

    for report in reports:
        logger.info(f"{report.kind} measure at phi={report.phi}: {report.value:.6g}")
    outputs = {"reports": str(write_reports_csv(reports, out / "measure.csv"))}
    bundle = _bundle("measure", config, sources, nm_reports=reports, outputs=outputs)
    _write_bundle(bundle, out / "measure.json")
    return bundle


def _predict_samples(config: RunConfig) -> Tuple[PosteriorSamples, List]:
    block = config.predict
    if block.draws is not None:
        samples = load_draws_csv(block.draws)
        if samples.names != list(NM_NAMES):
            raise ConfigError(
                f"{block.draws}: draws do not follow the joint-model layout",
                {"expected": list(NM_NAMES), "got": samples.names},
            )
        return samples, [Path(block.draws)]
    units = [default_nm_priors()[name].unit for name in NM_NAMES]
    point = np.array([[config.simulate.nm.to_vector()]])
    return PosteriorSamples.from_draws(list(NM_NAMES), point, units), [_config_bytes(config)]


def run_predict(config: RunConfig) -> ResultsBundle:
    """
    Posterior-predictive angle curves of the joint model.

    Draws come from a fit-nm draws file; without one the posterior is the single
    point given by the simulate.nm values.
    """
    block = config.predict
    out = Path(config.output_dir)
    samples, sources = _predict_samples(config)
    model = build_nm_predictive_model(block.horizon)
    grid = block.phis.values()
    bands = [
        posterior_predictive(
            samples,
            model,
            grid,
            curve,
            max_draws=block.max_draws,
            include_noise=block.include_noise and curve == "nm",
        )
        for curve in NM_CURVES
    ]
    nm_band = bands[0]
    logger.info(f"N' minimum {nm_band.mean.min():.6g} at phi={grid[int(np.argmin(nm_band.mean))]:.4g} rad")
    outputs = {"curves": str(write_curves_csv("phi[rad]", grid, _band_columns(bands), out / "predict_curves.csv"))}
    bundle = _bundle(
        "predict",
        config,
        sources,
        predictive={band.curve: _curve_payload(band) for band in bands},
        extras={"horizon": block.horizon},
        outputs=outputs,
    )
    _write_bundle(bundle, out / "predict.json")
    return bundle


def _fmt(value: Optional[float], spec: str = ".4g") -> str:
    return "-" if value is None else format(value, spec)


def render_report(bundle: ResultsBundle) -> str:
    """Plain-text summary of a results bundle."""
    lines = [REPORT_HEADER.format(
        command=bundle.command, fingerprint=bundle.fingerprint, seed=bundle.seed, created_at=bundle.created_at
    )]
    if bundle.summaries:
        lines.append(PARAMETER_TABLE_HEADER.format(
            name="parameter", unit="unit", median="median", hpd_lo="hpd_lo", hpd_hi="hpd_hi", rhat="rhat", ess="ess"
        ))
        for summary in bundle.summaries.values():
            lines.append(PARAMETER_TABLE_ROW.format(
                name=summary.name,
                unit=summary.unit,
                median=summary.median,
                hpd_lo=summary.hpd_lo,
                hpd_hi=summary.hpd_hi,
                rhat=_fmt(summary.rhat, ".3f"),
                ess=_fmt(summary.ess, ".0f"),
            ))
        lines.append("")
    if bundle.diagnostics is not None:
        d = bundle.diagnostics
        lines.append(DIAGNOSTICS_BLOCK.format(
            sampler=d.sampler,
            chains=d.chains,
            draws_per_chain=d.draws_per_chain,
            warmup=d.warmup,
            acceptance=" ".join(f"{a:.3f}" for a in d.acceptance),
            divergences=" ".join(str(n) for n in d.divergences) or "-",
            max_rhat=_fmt(d.max_rhat, ".4f"),
            min_ess=_fmt(d.min_ess, ".0f"),
            converged=d.converged,
            forced=" (forced)" if d.forced else "",
        ))
    if bundle.nm_reports:
        lines.append(NM_TABLE_HEADER.format(kind="kind", phi="phi", value="value", intervals="intervals"))
        for report in bundle.nm_reports:
            lines.append(NM_TABLE_ROW.format(
                kind=report.kind, phi=_fmt(report.phi), value=report.value, intervals=len(report.intervals)
            ))
        lines.append("")
    for curve in bundle.predictive.values():
        mean = np.asarray(curve.mean)
        lines.append(PREDICTIVE_ROW.format(
            curve=curve.curve,
            argmin=curve.inputs[int(np.argmin(mean))],
            minimum=float(mean.min()),
            maximum=float(mean.max()),
            n_draws=curve.n_draws,
        ))
    if bundle.outputs:
        lines.append(OUTPUTS_HEADER)
        lines.extend(OUTPUT_ROW.format(name=name, path=path) for name, path in bundle.outputs.items())
    return "\n".join(lines).rstrip() + "\n"


def report_rows(bundle: ResultsBundle) -> Dict:
    """JSON form of the report: one row per summarised parameter plus the measures."""
    return {
        "command": bundle.command,
        "fingerprint": bundle.fingerprint,
        "seed": bundle.seed,
        "parameters": [summary.model_dump(mode="json") for summary in bundle.summaries.values()],
        "diagnostics": None if bundle.diagnostics is None else bundle.diagnostics.model_dump(mode="json"),
        "nm_reports": [report.model_dump(mode="json") for report in bundle.nm_reports],
    }


def run_report(config: RunConfig) -> ResultsBundle:
    """Render the configured bundle, or the most relevant one in the output directory."""
    out = Path(config.output_dir)
    if config.report.bundle:
        path = Path(config.report.bundle)
    else:
        candidates = [out / name for name in REPORT_SOURCES if (out / name).is_file()]
        if not candidates:
            raise FileNotFoundError(f"no results bundle found in {out}")
        path = candidates[0]
    bundle = ResultsBundle.model_validate_json(path.read_text(encoding="utf-8"))

    if config.format == "json":
        target = write_json(out / "report.json", report_rows(bundle))
        text = target.read_text(encoding="utf-8")
    else:
        text = render_report(bundle)
        target = atomic_write_text(out / "report.txt", text)
    sys.stdout.write(text)
    logger.info(f"Report of {path} written to {target}")
    return bundle


COMMANDS: Dict[str, Callable[[RunConfig], ResultsBundle]] = {
    "simulate": run_simulate,
    "fit-fid": run_fit_fid,
    "fit-nm": run_fit_nm,
    "measure": run_measure,
    "predict": run_predict,
    "report": run_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Returns:
        The process exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits 0; usage errors are validation failures
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION

    try:
        config = load_run_config(args)
        logger.info(f"Running {args.command} in {ENVIRONMENT} (seed {config.seed}, output {config.output_dir})")
        bundle = COMMANDS[args.command](config)
        if args.command != "report":
            print(bundle.outputs.get("bundle", ""))
        return EXIT_OK
    except Exception as e:
        code = exit_code_for(e)
        details = getattr(e, "details", None)
        if isinstance(e, ValidationError):
            details = {"errors": json.loads(e.json(include_url=False))}
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        response = ErrorResponse(error=type(e).__name__, message=str(e), exit_code=code, details=details or None)
        print(response.model_dump_json(), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
