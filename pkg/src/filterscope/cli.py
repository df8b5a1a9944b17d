"""Command-line surface for the analysis engine and the toy pipeline.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
inconsistent inputs), 3 runtime failure (diverged training, failed
gradient check). Diagnostics go to stderr; data goes to stdout and files.

The environment variable FILTERSCOPE_OUT sets the default output
directory for commands that write files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import afcc as afcc_mod
from . import bundle as bundle_mod
from . import clusters as clusters_mod
from . import snr as snr_mod
from .toy import pipeline as pipeline_mod
from .toy.net import gradient_check
from .toy.train import TrainingDivergedError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

GRADCHECK_LIMIT = 1e-5


class CliUsageError(Exception):
    pass


class CliDataError(Exception):
    pass


class CliRuntimeError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _out_dir() -> Path:
    return Path(os.environ.get("FILTERSCOPE_OUT", "."))


def _print_json(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_analyze(args) -> int:
    try:
        bundle = bundle_mod.load_bundle(args.bundle)
    except (OSError, bundle_mod.FormatError) as exc:
        raise CliDataError(f"cannot read bundle {args.bundle}: {exc}") from exc
    report_check = bundle_mod.validate(bundle)
    if not report_check.ok:
        issues = "; ".join(f"filter {i}: {msg}" for i, msg in report_check.issues)
        raise CliDataError(f"bundle {args.bundle} is invalid: {issues}")
    analyses = clusters_mod.analyze_bundle(bundle, args.threshold, args.order)
    stats = clusters_mod.aggregate_layer(analyses, bundle.label_count)
    out_path = Path(args.out) if args.out else _out_dir() / (Path(args.bundle).stem + ".report.json")
    clusters_mod.write_report(
        clusters_mod.analysis_report(analyses, stats, bundle.layer_name), out_path
    )
    print(clusters_mod.layer_summary_line(stats))
    print(f"report written to {out_path}", file=sys.stderr)
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.nl < 2:
        raise CliUsageError("--nl must be at least 2 (internal noise is undefined below)")
    if args.cs < 0 or args.nc < 0 or args.nf < 1 or args.n < 0:
        raise CliUsageError("--cs/--nc/--n must be non-negative and --nf positive")
    estimate = snr_mod.estimate_snr(args.cs, args.nc, args.nf, args.nl, args.n)
    _print_json(snr_mod.snr_block(estimate))
    return EXIT_OK


def cmd_snr(args) -> int:
    try:
        bundle = bundle_mod.load_bundle(args.bundle)
        report = clusters_mod.read_report(args.report)
    except (OSError, ValueError) as exc:
        raise CliDataError(str(exc)) from exc
    stats = clusters_mod.stats_from_report(report)
    if stats.filter_count != bundle.filter_count or stats.label_count != bundle.label_count:
        raise CliDataError(
            f"report is for {stats.filter_count} filters x {stats.label_count} labels, "
            f"bundle has {bundle.filter_count} x {bundle.label_count}"
        )
    analyses = clusters_mod.analyze_bundle(bundle, float(report["threshold"]), report["order"])
    for analysis, entry in zip(analyses, report["filters"]):
        if analysis.noise != entry["noise"] or analysis.ones_total != entry["ones_total"]:
            raise CliDataError(
                f"report does not match bundle at filter {analysis.filter_index} "
                "(was it produced from this bundle?)"
            )
    breakdown = snr_mod.per_label_breakdown(analyses, args.mode)
    out_path = Path(args.out) if args.out else _out_dir() / (Path(args.bundle).stem + ".labels.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        snr_mod.write_breakdown_csv(breakdown, fh)
    _print_json(
        {
            "mode": breakdown.mode,
            "mean_signal": breakdown.mean_signal,
            "mean_noise_I": breakdown.mean_noise_internal,
            "mean_noise_E": breakdown.mean_noise_external,
        }
    )
    print(f"per-label table written to {out_path}", file=sys.stderr)
    return EXIT_OK


def cmd_mask(args) -> int:
    if args.units < 1:
        raise CliUsageError("--units must be positive")
    try:
        report = clusters_mod.read_report(args.report)
    except (OSError, ValueError) as exc:
        raise CliDataError(str(exc)) from exc
    stats = clusters_mod.stats_from_report(report)
    label_sets = clusters_mod.report_label_sets(report)
    topology = afcc_mod.FcTopology(
        filter_count=stats.filter_count,
        units_per_filter=args.units,
        label_count=stats.label_count,
    )
    if len(label_sets) != topology.filter_count:
        raise CliDataError(
            f"report lists {len(label_sets)} filters but stats say {topology.filter_count}"
        )
    try:
        mask = afcc_mod.mask_from_label_sets(label_sets, topology)
    except ValueError as exc:
        raise CliDataError(str(exc)) from exc
    out_path = Path(args.out) if args.out else _out_dir() / (Path(args.report).stem + ".afm")
    afcc_mod.save_mask(mask, out_path)
    _print_json(afcc_mod.mask_summary(afcc_mod.mask_stats(mask, stats)))
    print(f"mask written to {out_path}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    points = []
    try:
        with open(args.csv, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    except OSError as exc:
        raise CliDataError(f"cannot read {args.csv}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["K", "error"]:
        raise CliDataError(f"{args.csv}: expected header 'K,error'")
    for line_no, row in enumerate(rows[1:], start=2):
        try:
            points.append(snr_mod.ErrorPoint(label_count=int(row[0]), error=float(row[1])))
        except (ValueError, IndexError) as exc:
            raise CliDataError(f"{args.csv} line {line_no}: {exc}") from exc
    try:
        fit = snr_mod.fit_error_vs_k(points)
    except ValueError as exc:
        raise CliDataError(str(exc)) from exc
    _print_json(snr_mod.fit_block(fit))
    return EXIT_OK


def _load_toy_config(args) -> pipeline_mod.PipelineConfig:
    if args.config:
        try:
            config = pipeline_mod.load_pipeline_config(args.config)
        except (OSError, ValueError) as exc:
            raise CliUsageError(f"bad config {args.config}: {exc}") from exc
    else:
        config = pipeline_mod.PipelineConfig()
    if args.seed is not None:
        config = pipeline_mod.reseed(config, args.seed)
    return config


def cmd_toy(args) -> int:
    if args.toy_command == "gradcheck":
        worst = max(gradient_check(seed) for seed in (0, 1, 2))
        print(f"{worst:.3e}")
        if worst > GRADCHECK_LIMIT:
            print(
                f"gradient check failed: {worst:.3e} > {GRADCHECK_LIMIT:.0e}",
                file=sys.stderr,
            )
            return EXIT_RUNTIME
        return EXIT_OK
    config = _load_toy_config(args)
    out_path = Path(args.out) if args.out else _out_dir() / "toy-run"
    result = pipeline_mod.run_pipeline(config)
    if args.toy_command == "run":
        pipeline_mod.write_artifacts(result, out_path)
        sys.stdout.write(pipeline_mod.summary_csv_text(result))
        print(f"artifacts written to {out_path}", file=sys.stderr)
        return EXIT_OK
    # afcc: mask + retrain report only
    out_path.mkdir(parents=True, exist_ok=True)
    afcc_mod.save_mask(result.mask, out_path / "mask.afm")
    payload = dict(afcc_mod.mask_summary(result.mask_stats))
    payload.update(
        {
            "probe_accuracy": result.probes[-1].accuracy,
            "retrained_accuracy": result.afcc.accuracy,
        }
    )
    _print_json(payload)
    print(f"mask written to {out_path / 'mask.afm'}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="filterscope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="cluster-analyze a field bundle")
    p.add_argument("bundle", help="FFB1 bundle path")
    p.add_argument("--threshold", type=float, default=clusters_mod.DEFAULT_THRESHOLD)
    p.add_argument("--order", choices=clusters_mod.SCAN_ORDERS, default="forward")
    p.add_argument("--out", help="report path (default: <bundle>.report.json)")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("estimate", help="closed-form signal/noise estimators")
    p.add_argument("--cs", type=float, required=True, help="mean cluster size")
    p.add_argument("--nc", type=float, required=True, help="mean clusters per filter")
    p.add_argument("--nf", type=int, required=True, help="filter count")
    p.add_argument("--nl", type=int, required=True, help="label count")
    p.add_argument("--n", type=float, required=True, help="mean noise per filter")
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("snr", help="per-label signal/noise table for a bundle")
    p.add_argument("bundle")
    p.add_argument("report", help="analysis report produced by 'analyze'")
    p.add_argument("--mode", choices=snr_mod.BREAKDOWN_MODES, default="boolean")
    p.add_argument("--out", help="CSV path (default: <bundle>.labels.csv)")
    p.set_defaults(handler=cmd_snr)

    p = sub.add_parser("mask", help="build a cluster-connection mask from a report")
    p.add_argument("report")
    p.add_argument("--units", type=int, required=True, help="output units per filter")
    p.add_argument("--out", help="mask path (default: <report>.afm)")
    p.set_defaults(handler=cmd_mask)

    p = sub.add_parser("fit", help="least-squares fit of error vs label count")
    p.add_argument("csv", help="CSV with header K,error")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("toy", help="run the miniature training pipeline")
    p.add_argument("toy_command", choices=("run", "gradcheck", "afcc"))
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int, help="override every random stream")
    p.add_argument("--out", help="output directory (default: $FILTERSCOPE_OUT/toy-run)")
    p.set_defaults(handler=cmd_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except CliUsageError as exc:
        print(f"filterscope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliDataError as exc:
        print(f"filterscope: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CliRuntimeError, TrainingDivergedError) as exc:
        print(f"filterscope: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
