"""Command line for the exporter: field extraction and mask application."""

from __future__ import annotations

import argparse
import sys

from .export import ExportConfig, apply_mask_to_model, export_fields


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldexport", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="export per-filter field matrices to FFB1")
    p.add_argument("--config", required=True, help="export config JSON")

    p = sub.add_parser("apply-mask", help="zero dropped head weights per an AFM1 mask")
    p.add_argument("model", help="torch model file")
    p.add_argument("mask", help="AFM1 mask file")
    p.add_argument("out", help="output model file")
    p.add_argument("--head", help="head layer name (default: inferred from shape)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            bundle = export_fields(ExportConfig.from_file(args.config))
            print(
                f"exported {bundle.filter_count} filters x {bundle.units_per_filter} units "
                f"x {bundle.label_count} labels ({bundle.layer_name})"
            )
        else:
            mask = apply_mask_to_model(args.model, args.mask, args.out, head_layer=args.head)
            print(f"masked head saved to {args.out} (kept {int(mask.keep.sum())} weights)")
        return 0
    except (OSError, ValueError) as exc:
        print(f"fieldexport: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
