"""Command-line interface.

Subcommands::

    gaplab train-grid --manifest m.ini [--output-dir DIR] [--limit N] [--workers N]
    gaplab measure    --checkpoint path.ckpt [--manifest m.ini]
    gaplab evaluate   --results DIR [--manifest m.ini]
    gaplab report     --results DIR --format csv|md [--no-figures]

Exit codes: 0 success, 1 user error (bad arguments, missing or invalid
inputs), 2 internal error. ``GAPLAB_OUTPUT_DIR`` overrides the manifest's
output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .checkpoint import CheckpointError, load_checkpoint, read_header
from .manifest import ManifestError, load_manifest
from .measures import CATALOG, compute_all
from .runner import derive_seed, evaluate_results, render_report, run_grid, _format_float


class UserError(Exception):
    pass


def _load_manifest_arg(path: str | None, output_dir: str | None = None):
    if path is None:
        raise UserError("--manifest is required")
    if not os.path.exists(path):
        raise UserError(f"manifest not found: {path}")
    try:
        return load_manifest(path, output_dir_override=output_dir)
    except (ManifestError, ValueError) as exc:
        raise UserError(f"invalid manifest: {exc}") from exc


def cmd_train_grid(args) -> int:
    manifest = _load_manifest_arg(args.manifest, args.output_dir)
    try:
        summary = run_grid(manifest, limit=args.limit, workers=args.workers)
    except ManifestError as exc:
        raise UserError(str(exc)) from exc
    print(json.dumps({"output_dir": manifest.output_dir, **summary}))
    return 0


def _manifest_for_results(results_dir: str, explicit: str | None):
    if explicit is not None:
        return _load_manifest_arg(explicit)
    candidate = os.path.join(results_dir, "manifest.ini")
    if not os.path.exists(candidate):
        raise UserError(f"no manifest.ini in {results_dir}; pass --manifest")
    return _load_manifest_arg(candidate)


def cmd_measure(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise UserError(f"checkpoint not found: {args.checkpoint}")
    results_dir = os.path.dirname(os.path.dirname(os.path.abspath(args.checkpoint)))
    manifest = _manifest_for_results(results_dir, args.manifest)
    try:
        header = read_header(args.checkpoint)
        record = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise UserError(str(exc)) from exc
    if not record.converged:
        raise UserError("model did not converge; measures are not computed")
    dataset = manifest.build_dataset()
    index = args.index
    if index is None:
        name = os.path.basename(args.checkpoint)
        index = int(name.split("_")[1].split(".")[0]) if "_" in name else 0
    seed = derive_seed(manifest.master_seed, index, "measure")
    vec, _ = compute_all(record, dataset, manifest.measures, seed)
    print("measure,value,defined,reason")
    for key in CATALOG:
        mv = vec[key]
        print(f"{key},{_format_float(mv.value)},{'true' if mv.defined else 'false'},{mv.reason or ''}")
    return 0


def cmd_evaluate(args) -> int:
    if not os.path.isdir(args.results):
        raise UserError(f"results dir not found: {args.results}")
    manifest = _manifest_for_results(args.results, args.manifest)
    try:
        report = evaluate_results(args.results, manifest)
    except ManifestError as exc:
        raise UserError(str(exc)) from exc
    print(
        json.dumps(
            {
                "converged": report.n_converged,
                "excluded": report.n_excluded,
                "rows": len(report.rows),
                "report": os.path.join(args.results, "eval", "report.json"),
            }
        )
    )
    return 0


def cmd_report(args) -> int:
    if not os.path.isdir(args.results):
        raise UserError(f"results dir not found: {args.results}")
    path = os.path.join(args.results, "eval", "report.json")
    if not os.path.exists(path):
        raise UserError(f"no evaluation found at {path}; run `gaplab evaluate` first")
    written = render_report(args.results, fmt=args.format, figures=not args.no_figures)
    print(json.dumps({"written": written}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaplab", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-grid", help="train the grid, measure, evaluate, report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--limit", type=int, default=None, help="train only the first N grid points")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_train_grid)

    p = sub.add_parser("measure", help="print the measure vector of one checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--index", type=int, default=None, help="grid index (default: parsed from filename)")
    p.set_defaults(fn=cmd_measure)

    p = sub.add_parser("evaluate", help="build the evaluation report from a results dir")
    p.add_argument("--results", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="render tables and figures from an evaluation")
    p.add_argument("--results", required=True)
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal error
        logging.exception("internal error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
