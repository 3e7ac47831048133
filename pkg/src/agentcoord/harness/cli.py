"""Command-line entry point: run, aggregate, predict, select, fit, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from ..core import BackendError, ConfigurationError
from ..estimator import DataError, ModelSpec, compare_models, fit_model, load_dataset
from ..metrics import ServiceSimilarity, tf_cosine
from ..scaling import (
    TERM_NAMES,
    CoefficientSet,
    ModelArtifactError,
    ScalingFeatures,
    TaskProfile,
    default_coefficients,
    predict_from_standardized,
    predict_performance,
    select_architecture,
)
from .aggregate import SasReference, aggregate, render_report
from .campaign import load_index, read_traces, run_campaign
from .config import ConfigError, demo_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_DATA = 0, 2, 3, 4

logger = logging.getLogger("agentcoord")


def _coefficients(path: str | None) -> CoefficientSet:
    return CoefficientSet.load(path) if path else default_coefficients()


def _emit(obj: object) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_run(args: argparse.Namespace) -> int:
    if bool(args.config) == bool(args.demo):
        raise ConfigError("pass exactly one of --config or --demo", ["--config"])
    config = demo_config() if args.demo else load_config(args.config)
    updates = {}
    if args.parallelism:
        updates["parallelism"] = args.parallelism
    if args.seed is not None:
        updates["seeds"] = [args.seed]
    if updates:
        config = config.model_copy(update=updates)
    out = Path(args.out or config.output_dir)
    paths = run_campaign(config, out)
    entries = load_index(out)
    failed = [e["key"] for e in entries if e["status"] == "failed"]
    if failed:
        print(f"warning: {len(failed)} of {len(entries)} runs failed", file=sys.stderr)
    _emit({"runs": len(paths), "failed": len(failed), "index": str(out / "index.jsonl")})
    return EXIT_OK


def _similarity(spec: str):
    if spec == "offline":
        return tf_cosine
    if spec.startswith(("http://", "https://")):
        return ServiceSimilarity(spec)
    raise ConfigError(f"--similarity must be 'offline' or a URL, got {spec!r}", ["--similarity"])


def cmd_aggregate(args: argparse.Namespace) -> int:
    try:
        traces = read_traces(args.traces)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load traces from {args.traces}: {exc}") from exc
    reference = None
    if args.sas_reference:
        raw = json.loads(Path(args.sas_reference).read_text(encoding="utf-8"))
        reference = {b: SasReference(v["mean_turns"], v["failure_rate"]) for b, v in raw.items()}
    report = aggregate(traces, reference, _similarity(args.similarity)).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    coeffs = _coefficients(args.coefficients)
    if args.at_means:
        value = predict_from_standardized([0.0] * (len(TERM_NAMES) - 1), coeffs)
    else:
        needed = ["intelligence", "tools", "agents", "overhead", "density", "redundancy", "efficiency", "error_amp", "p_sa"]
        missing = [f"--{n.replace('_', '-')}" for n in needed if getattr(args, n) is None]
        if missing:
            raise ConfigError(f"missing feature flags: {', '.join(missing)} (or use --at-means)", missing)
        features = ScalingFeatures(
            args.intelligence, args.tools, args.agents, args.overhead, args.density,
            args.redundancy, args.efficiency, args.error_amp, args.p_sa,
        )
        value = predict_performance(features, coeffs)
    print(f"{value:.6g}")
    if args.verbose:
        print(f"standardization: {coeffs.provenance}", file=sys.stderr)
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    coeffs = _coefficients(args.coefficients)
    task = TaskProfile(args.tools, args.p_sa, args.intelligence)
    for rank, (top, value) in enumerate(select_architecture(task, coeffs), 1):
        print(f"{rank}. {top.label} {value:.4f}")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    try:
        records = load_dataset(args.data)
    except OSError as exc:
        raise DataError(f"cannot read dataset {args.data}: {exc}") from exc
    if args.spec == "compare":
        rows = compare_models(records, k=args.folds, seed=args.seed)
        _emit([{"spec": r.spec.value, "k_params": r.k_params, "r2_train": r.r2_train,
                "r2_cv": r.r2_cv, "aic": r.aic} for r in rows])
        return EXIT_OK
    res = fit_model(records, ModelSpec(args.spec), k=args.folds, n_boot=args.n_boot, seed=args.seed)
    summary = {
        "spec": res.spec.value,
        "coefficients": dict(zip(res.column_names, res.coefficients.tolist())),
        "bootstrap_se": dict(zip(res.column_names, res.bootstrap_se.tolist())) if res.bootstrap_se is not None else None,
        "r2_train": res.r2_train,
        "r2_cv": res.r2_cv,
        "mae_cv": res.mae_cv,
        "rmse_cv": res.rmse_cv,
        "aic": res.aic,
        "vif_above_5": res.high_vif,
    }
    if args.out:
        res.coefficient_set(provenance=f"fitted on {args.data}").save(args.out)
        summary["artifact"] = args.out
    _emit(summary)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        data = json.loads(Path(args.aggregate).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read aggregate report {args.aggregate}: {exc}") from exc
    sys.stdout.write(render_report(data))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentcoord", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a campaign grid")
    p.add_argument("--config")
    p.add_argument("--demo", action="store_true", help="run the bundled scripted demo")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--parallelism", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("aggregate", help="metrics table from a campaign directory")
    p.add_argument("--traces", required=True, help="campaign directory or index file")
    p.add_argument("--sas-reference", help="JSON {benchmark: {mean_turns, failure_rate}}")
    p.add_argument("--similarity", default="offline")
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("predict", help="predicted performance for one configuration")
    p.add_argument("--coefficients")
    p.add_argument("--at-means", action="store_true", help="every standardized term at zero")
    p.add_argument("--intelligence", type=float)
    p.add_argument("--tools", type=float)
    p.add_argument("--agents", type=float)
    p.add_argument("--overhead", type=float, help="percent")
    p.add_argument("--density", type=float)
    p.add_argument("--redundancy", type=float)
    p.add_argument("--efficiency", type=float)
    p.add_argument("--error-amp", type=float)
    p.add_argument("--p-sa", type=float)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("select", help="rank architectures for a task profile")
    p.add_argument("--tools", type=float, required=True)
    p.add_argument("--p-sa", type=float, required=True)
    p.add_argument("--intelligence", type=float, default=56.9)
    p.add_argument("--coefficients")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fit", help="fit the scaling model to a run dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", default="full", choices=[s.value for s in ModelSpec] + ["compare"])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write a coefficient artifact (full spec only)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="render an aggregate report as markdown")
    p.add_argument("--aggregate", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code: int, kind: str, exc: BaseException, fields: Sequence[str] = ()) -> int:
    record = {"error": kind, "message": str(exc)}
    if fields:
        record["fields"] = list(fields)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc, exc.fields)
    except BackendError as exc:
        return _fail(EXIT_BACKEND, "backend", exc)
    except (DataError, ModelArtifactError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", exc)


if __name__ == "__main__":
    sys.exit(main())
