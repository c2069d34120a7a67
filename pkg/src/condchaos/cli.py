"""Command line entry point: ``condchaos run --config FILE`` and ``condchaos validate``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np

from .chaos_lab import (CouplingReport, CouplingRow, MomentReport, RateReport,
                        chaos_rate_experiment, coupling_error_experiment, moment_suite)
from .config import ExperimentConfig, parse_config, split_assignment
from .errors import CondChaosError, ConfigError, InvalidArgument
from .model import closed_form_reference, make_model
from .particle_solver import solve_particle_system
from .paths import dump_bundle, make_time_grid, sample_path_bundle
from .solution import SchemeConfig
from .validation import run_validation

logger = logging.getLogger(__name__)

SEED_ENV = "CONDCHAOS_SEED"
DEFAULT_SEED = 0

RATES_COLUMNS = ["n", "error_orderingA", "error_orderingB", "theo_prop8", "theo_thm9",
                 "slopeA", "slopeB", "stderrA", "stderrB"]
COUPLING_COLUMNS = [f.name for f in dataclasses.fields(CouplingRow)]
MOMENTS_COLUMNS = ["statistic", "x", "value"]


def artifact_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class ReportFiles:
    directory: str
    paths: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    ok: bool = True


# -- experiment dispatch ----------------------------------------------------


def _scheme(config: ExperimentConfig) -> SchemeConfig:
    return SchemeConfig(q=config.q, J=config.J, ridge=config.ridge,
                        measure_timing=config.measure_timing)


def build_model(config: ExperimentConfig):
    spec = make_model(config.model, d=config.d, **config.model_params)
    if spec.m != config.m:
        raise InvalidArgument(f"model {config.model!r} has m={spec.m}, config asks for m={config.m}")
    return spec


def _solve(config, spec, seed):
    grid = make_time_grid(config.T, config.K)
    bundle = sample_path_bundle(grid, config.n[0], config.M, config.d, seed)
    sol = solve_particle_system(spec, bundle, _scheme(config))
    results = {"n": config.n[0], "mean_Y0": float(sol.Y[:, :, 0].mean()), "flags": sol.flags}
    if spec.has_closed_form:
        ref = closed_form_reference(spec, bundle)
        results["max_abs_error_Y"] = float(np.max(np.abs(sol.Y - ref.Y)))
        results["max_abs_error_Z"] = float(np.max(np.abs(sol.Z - ref.Z)))
        results["max_abs_error_Z0"] = float(np.max(np.abs(sol.Z0 - ref.Z0)))
    if spec.name == "zero":
        results["max_abs_Y_minus_c"] = float(np.max(np.abs(sol.Y - spec.params["c"])))
    return results, bundle


def run_experiment(config: ExperimentConfig, seed: int | None = None) -> ReportFiles:
    """Run the configured experiment and write its reports into ``config.out``."""
    seed = config.seed if seed is None else seed
    if seed is None:
        raise InvalidArgument("no seed: resolve it before calling run_experiment")
    config = dataclasses.replace(config, seed=seed)
    if config.kind == "validate":
        checks = run_validation(seed)
        report = {"checks": [dataclasses.asdict(c) for c in checks],
                  "all_passed": all(c.passed for c in checks)}
        files = emit_reports(report, config.out, config)
        files.ok = report["all_passed"]
        return files

    spec = build_model(config)
    scheme = _scheme(config)
    common = dict(K=config.K, seed=seed, T=config.T, scheme=scheme)
    picard = dict(alpha=config.alpha, tol=config.tol, max_iter=config.max_iter)
    if config.kind == "solve":
        results, bundle = _solve(config, spec, seed)
        files = emit_reports(results, config.out, config)
        if config.dump_bundle:
            path = os.path.join(config.out, "bundle.bin")
            dump_bundle(bundle, path)
            files.paths.append(path)
        return files
    if config.kind == "rates":
        report = chaos_rate_experiment(spec, config.n, M=config.M, n_ref=config.n_ref, R=config.R,
                                       p=config.p, **common, **picard)
    elif config.kind == "coupling":
        report = coupling_error_experiment(spec, config.n, M=config.M, n_ref=config.n_ref,
                                           R=config.R, **common, **picard)
    else:
        report = moment_suite(spec, p=config.p, M=config.M, n_ref=config.n_ref,
                              n_list=tuple(config.n), **common, **picard)
    return emit_reports(report, config.out, config)


# -- serialization ------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: str, columns: list, rows: list):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _rates_rows(report: RateReport):
    return [[n, a, b, t8, t9, report.slope_a, report.slope_b, report.stderr_a, report.stderr_b]
            for n, a, b, t8, t9 in zip(report.n_values, report.error_a, report.error_b,
                                       report.theo_prop8, report.theo_thm9)]


def _moment_rows(report: MomentReport):
    rows = [["sup_moment", "", report.sup_moment],
            ["sup_moment_doubled", "", report.sup_moment_doubled]]
    rows += [["increment", h, v] for h, v in zip(report.lags, report.increment_stats)]
    rows += [["product_increment", h, v] for h, v in zip(report.product_spans, report.product_stats)]
    rows += [["conditional_sup", h, v] for h, v in zip(report.lags, report.condsup_stats)]
    rows += [["lemma10", n, v] for n, v in zip(report.lemma10_n, report.lemma10_stats)]
    return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def make_manifest(config: ExperimentConfig | None) -> dict:
    return {
        "config": config.to_dict() if config is not None else None,
        "artifact_version": artifact_version(),
        "seed": config.seed if config is not None else None,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def emit_reports(report, directory: str, config: ExperimentConfig | None = None) -> ReportFiles:
    """Write CSV tables for ``report`` plus ``summary.json`` (manifest and scalar results)."""
    try:
        os.makedirs(directory, exist_ok=True)
        files = ReportFiles(directory)
        if isinstance(report, RateReport):
            path = os.path.join(directory, "rates.csv")
            _write_csv(path, RATES_COLUMNS, _rates_rows(report))
            results = report.to_dict()
        elif isinstance(report, CouplingReport):
            path = os.path.join(directory, "coupling.csv")
            rows = [[getattr(r, c) for c in COUPLING_COLUMNS] for r in report.rows]
            _write_csv(path, COUPLING_COLUMNS, rows)
            results = report.to_dict()
            results["ratio_spread_thm11"] = report.ratio_spread("ratio_thm11") if report.rows else None
            results["ratio_spread_prop13"] = report.ratio_spread("ratio_prop13") if report.rows else None
        elif isinstance(report, MomentReport):
            path = os.path.join(directory, "moments.csv")
            _write_csv(path, MOMENTS_COLUMNS, _moment_rows(report))
            results = report.to_dict()
        elif isinstance(report, dict):
            path = None
            results = report
        else:
            raise InvalidArgument(f"cannot emit a report of type {type(report).__name__}")
        if path is not None:
            files.paths.append(path)
        files.manifest = make_manifest(config)
        files.results = _jsonable(results)
        summary = os.path.join(directory, "summary.json")
        with open(summary, "w", encoding="utf-8") as fh:
            json.dump({"manifest": _jsonable(files.manifest), "results": files.results}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        files.paths.append(summary)
        return files
    except OSError as exc:
        raise CondChaosError(f"cannot write reports to {exc.filename or directory}: {exc.strerror}") from exc


def config_from_summary(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh)["manifest"]["config"])


# -- argument handling --------------------------------------------------------


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="condchaos", description="Conditional mean-field BSDE experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    val = sub.add_parser("validate", help="run the invariant suite")
    val.add_argument("--out", default="out")
    val.add_argument("--seed", type=int)
    return parser


def resolve_seed(file_seed, flag_seed, environ=None) -> int:
    """Flag over file; the environment only when neither provides a seed."""
    if flag_seed is not None:
        return flag_seed
    if file_seed is not None:
        return file_seed
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None:
        return DEFAULT_SEED
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"environment variable {SEED_ENV} is not an integer: {raw!r}", "seed") from None
    if seed < 0:
        raise ConfigError(f"environment variable {SEED_ENV} must be nonnegative", "seed")
    return seed


def _error_json(exc: BaseException) -> dict:
    err = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        err["key"], err["line"] = exc.key, exc.line
    return {"error": err}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.verb == "run":
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
            overrides = list(args.set)
            if args.out is not None:
                overrides.append(f"out={args.out}")
            config = parse_config(text, overrides)
            set_seed = any(split_assignment(s)[0] == "seed" for s in args.set)
            file_seed = config.seed
            flag_seed = args.seed if args.seed is not None else (config.seed if set_seed else None)
            seed = resolve_seed(file_seed, flag_seed)
        else:
            config = ExperimentConfig(model="zero", kind="validate", out=args.out)
            seed = resolve_seed(None, args.seed)
        files = run_experiment(config, seed)
    except _ArgumentError as exc:
        print(json.dumps({"error": {"type": "UsageError", "message": str(exc)}}))
        return 2
    except CondChaosError as exc:
        print(json.dumps(_error_json(exc)))
        return 2 if isinstance(exc, ConfigError) else 1
    except Exception as exc:  # noqa: BLE001 - every failure must end as JSON
        logger.debug("unexpected failure", exc_info=True)
        print(json.dumps(_error_json(exc)))
        return 1
    if not files.ok:
        failed = [c["name"] for c in files.results.get("checks", []) if not c["passed"]]
        print(json.dumps({"error": {"type": "ValidationFailed", "message": f"failed checks: {failed}"}}))
        return 1
    print(json.dumps({"ok": True, "files": files.paths}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
