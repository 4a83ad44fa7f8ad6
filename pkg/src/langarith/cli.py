"""Command-line surface binding all operations into one workflow.

Subcommands: diff, merge, ties-merge, cossim, sparsity, sweep, related,
validate.  Every subcommand supports ``--json`` for machine-readable
output; ``--csv`` and ``--plot`` on the report subcommands additionally
emit delimited tables and rendered figures.

Exit codes: 0 success, 1 usage error, 2 data/compatibility error,
3 evaluator failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from . import analysis, sweep as sweep_mod, ties, vector_core
from .errors import LangArithError, SweepError
from .tensor_store import (
    CheckpointReader,
    load_checkpoint,
    validate_compat,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_EVALUATOR = 3

WORKDIR_ENV = "LANGARITH_WORKDIR"


class _UsageError(Exception):
    pass


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload))
    else:
        print(human)


def _parse_weighted(spec: str) -> tuple[str, float]:
    """Parse ``path`` or ``path:weight``."""
    if ":" in spec:
        head, tail = spec.rsplit(":", 1)
        try:
            return head, float(tail)
        except ValueError:
            raise _UsageError(
                f"bad delta spec {spec!r}: weight {tail!r} is not a number"
            ) from None
    return spec, 1.0


def _parse_thresholds(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise _UsageError(f"bad thresholds {text!r}; expected comma-separated numbers")


def _load_deltas_for_analysis(paths) -> list:
    return [
        vector_core.load_delta(p, require_fingerprint=False) for p in paths
    ]


def _cmd_diff(args) -> int:
    summary = vector_core.diff_checkpoint_files(
        args.finetuned, args.base, args.output, args.label,
        dtype_policy=args.dtype_policy,
    )
    _emit(args, summary,
          f"wrote delta {args.label!r} -> {args.output} "
          f"({summary['tensors']} tensors)")
    return EXIT_OK


def _cmd_merge(args) -> int:
    deltas = [_parse_weighted(spec) for spec in args.delta]
    summary = vector_core.merge_checkpoint_files(
        args.base,
        deltas,
        args.output,
        normalize=args.normalize,
        target_language=args.target_language,
        dtype_policy=args.dtype_policy,
        force=args.force,
    )
    terms = ", ".join(f"{t['label']}:{t['weight']:g}" for t in summary["terms"])
    _emit(args, summary, f"merged [{terms}] -> {args.output}")
    return EXIT_OK


def _cmd_ties_merge(args) -> int:
    for spec in args.delta:
        if ":" in spec and _parse_weighted(spec)[1] != 1.0:
            raise _UsageError("ties-merge deltas are unweighted; drop ':<weight>'")
    cfg = ties.TiesConfig(
        top_k_fraction=args.top_k,
        lam=args.lam,
        lambda_range=tuple(args.lambda_range),
    )
    pre = load_checkpoint(args.base)
    deltas = [
        vector_core.load_delta(p, require_fingerprint=not args.force)
        for p in args.delta
    ]
    merged = ties.ties_merge(pre, deltas, cfg, force=args.force)
    from .tensor_store import save_checkpoint

    save_checkpoint(merged, args.output, args.dtype_policy)
    payload = {
        "output": str(args.output),
        "top_k_fraction": cfg.top_k_fraction,
        "lambda": cfg.lam,
        "deltas": [d.label for d in deltas],
    }
    _emit(args, payload,
          f"ties-merged {len(deltas)} deltas (keep {cfg.top_k_fraction:g}, "
          f"lambda {cfg.lam:g}) -> {args.output}")
    return EXIT_OK


def _cmd_cossim(args) -> int:
    deltas = _load_deltas_for_analysis(args.deltas)
    matrix = analysis.similarity_matrix(deltas)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["label", *matrix.labels])
            for label, row in zip(matrix.labels, matrix.values):
                writer.writerow([label, *(f"{v:.9f}" for v in row)])
    if args.plot:
        from .figures import plot_similarity

        plot_similarity(matrix, args.plot)
    lines = ["cosine similarity:"]
    for label, row in zip(matrix.labels, matrix.values):
        cells = " ".join(f"{v:+.4f}" for v in row)
        lines.append(f"  {label:>12} {cells}")
    _emit(args, matrix.to_dict(), "\n".join(lines))
    return EXIT_OK


def _cmd_sparsity(args) -> int:
    (delta,) = _load_deltas_for_analysis([args.delta])
    report = analysis.sparsity_stats(
        delta, _parse_thresholds(args.thresholds), args.bins
    )
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["bin_lower", "bin_upper", "count"])
            for lo, hi, count in report.histogram:
                writer.writerow([f"{lo:.9g}", f"{hi:.9g}", count])
    if args.plot:
        from .figures import plot_sparsity

        plot_sparsity(report, args.plot)
    lines = [f"sparsity of {report.label!r} ({report.total_elements} elements):"]
    for t, frac in report.fraction_below.items():
        lines.append(f"  |x| < {t:g}: {frac:.4%}")
    _emit(args, report.to_dict(), "\n".join(lines))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = sweep_mod.SweepConfig(
        grid_start=args.start,
        grid_stop=args.stop,
        step=args.step,
        evaluator=args.evaluator,
        max_concurrency=args.max_concurrency,
        workdir=str(args.workdir),
        mode=args.mode,
        target_language=args.target_language,
        ties_top_k=args.ties_top_k,
        clean=args.clean,
    )
    pre = load_checkpoint(args.base)
    t1 = vector_core.load_delta(args.t1, require_fingerprint=not args.force)
    t2 = vector_core.load_delta(args.t2, require_fingerprint=not args.force)
    report = sweep_mod.run_sweep(pre, t1, t2, cfg, force=args.force)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["lambda", "score", "evaluator_exit", "checkpoint"])
            for e in report.entries:
                writer.writerow([
                    e.lam,
                    e.score if math.isfinite(e.score) else "",
                    e.evaluator_exit,
                    e.checkpoint_path,
                ])
    if args.plot:
        from .figures import plot_sweep

        plot_sweep(report, args.plot)
    _emit(
        args,
        report.to_summary_dict(),
        f"swept {len(report.entries)} grid points in [{cfg.grid_start:g}, "
        f"{cfg.grid_stop:g}]: best lambda {report.best_lambda:g} "
        f"(score {report.best_score:g})",
    )
    return EXIT_OK


def _cmd_related(args) -> int:
    rel = sweep_mod.related_language(args.code)
    _emit(args, {"language": args.code, "related": rel}, rel)
    return EXIT_OK


def _cmd_validate(args) -> int:
    if args.other is None:
        with CheckpointReader(args.checkpoint) as reader:
            dtype_counts: dict[str, int] = {}
            elements = 0
            for name in reader.names:
                info = reader.info(name)
                dtype_counts[info.dtype.value] = (
                    dtype_counts.get(info.dtype.value, 0) + 1
                )
                elements += info.num_elements
                if args.deep:
                    reader.read(name)
            payload = {
                "path": str(args.checkpoint),
                "tensors": len(reader.names),
                "elements": elements,
                "dtypes": dtype_counts,
                "metadata": reader.metadata,
                "deep": bool(args.deep),
            }
        _emit(args, payload,
              f"{args.checkpoint}: {payload['tensors']} tensors, "
              f"{payload['elements']} elements, dtypes {dtype_counts}")
        return EXIT_OK

    a = load_checkpoint(args.checkpoint)
    b = load_checkpoint(args.other)
    report = validate_compat(a, b)
    payload = report.to_dict()
    payload["a"] = str(args.checkpoint)
    payload["b"] = str(args.other)
    _emit(args, payload, report.summary())
    return EXIT_OK if report.arithmetic_ok else EXIT_DATA


def _add_common(sp) -> None:
    sp.add_argument("--json", action="store_true",
                    help="machine-readable JSON on stdout")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="langarith",
        description="Checkpoint-level language arithmetic for adapter deltas.",
    )
    parser.add_argument(
        "--config", type=Path, default=None,
        help="JSON file with default flag values (flags take precedence)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    sp = sub.add_parser("diff", help="extract a delta (finetuned - base)")
    sp.add_argument("--base", required=True, help="base checkpoint")
    sp.add_argument("--finetuned", required=True, help="fine-tuned checkpoint")
    sp.add_argument("--label", required=True, help="delta label (language code)")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--dtype-policy", default="force_fp32",
                    choices=["preserve", "force_fp32", "force_fp16"],
                    help="storage dtype for the delta (default force_fp32)")
    _add_common(sp)
    sp.set_defaults(func=_cmd_diff)
    subparsers["diff"] = sp

    sp = sub.add_parser("merge", help="weighted merge of deltas onto a base")
    sp.add_argument("--base", required=True)
    sp.add_argument("--delta", action="append", required=True,
                    metavar="PATH[:WEIGHT]",
                    help="delta checkpoint with optional weight (default 1)")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--normalize", action="store_true",
                    help="rescale weights to sum to one before use")
    sp.add_argument("--target-language", default="")
    sp.add_argument("--dtype-policy", default="preserve",
                    choices=["preserve", "force_fp32", "force_fp16"])
    sp.add_argument("--force", action="store_true",
                    help="skip the base-fingerprint check")
    _add_common(sp)
    sp.set_defaults(func=_cmd_merge)
    subparsers["merge"] = sp

    sp = sub.add_parser("ties-merge",
                        help="trim / elect-sign / disjoint-mean merge")
    sp.add_argument("--base", required=True)
    sp.add_argument("--delta", action="append", required=True, metavar="PATH")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--top-k", type=float, default=0.2,
                    help="fraction of elements kept by magnitude (default 0.2)")
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0,
                    help="merge weight applied to the merged delta")
    sp.add_argument("--lambda-range", nargs=2, type=float, default=[0.8, 1.8],
                    metavar=("LO", "HI"),
                    help="validation bounds for --lambda (default 0.8 1.8)")
    sp.add_argument("--dtype-policy", default="preserve",
                    choices=["preserve", "force_fp32", "force_fp16"])
    sp.add_argument("--force", action="store_true")
    _add_common(sp)
    sp.set_defaults(func=_cmd_ties_merge)
    subparsers["ties-merge"] = sp

    sp = sub.add_parser("cossim", help="pairwise cosine similarity of deltas")
    sp.add_argument("deltas", nargs="+", metavar="DELTA")
    sp.add_argument("--csv", default=None, help="write the matrix as CSV")
    sp.add_argument("--plot", default=None, help="render a heatmap figure")
    _add_common(sp)
    sp.set_defaults(func=_cmd_cossim)
    subparsers["cossim"] = sp

    sp = sub.add_parser("sparsity", help="near-zero fractions and histogram")
    sp.add_argument("delta", metavar="DELTA")
    sp.add_argument("--thresholds", default="1e-6,1e-4,1e-3,1e-2",
                    help="comma-separated ascending magnitude thresholds")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--csv", default=None, help="write the histogram as CSV")
    sp.add_argument("--plot", default=None, help="render a histogram figure")
    _add_common(sp)
    sp.set_defaults(func=_cmd_sparsity)
    subparsers["sparsity"] = sp

    sp = sub.add_parser("sweep", help="grid-search lambda against an evaluator")
    sp.add_argument("--base", required=True)
    sp.add_argument("--t1", required=True, help="first delta checkpoint")
    sp.add_argument("--t2", required=True, help="second delta checkpoint")
    sp.add_argument("--evaluator", required=True,
                    help="command template containing {checkpoint}")
    sp.add_argument("--start", type=float, default=0.0)
    sp.add_argument("--stop", type=float, default=1.0)
    sp.add_argument("--step", type=float, default=0.05)
    sp.add_argument("--mode", choices=["la", "ties"], default="la")
    sp.add_argument("--target-language", default="")
    sp.add_argument("--ties-top-k", type=float, default=0.2)
    sp.add_argument("--max-concurrency", type=int, default=1)
    sp.add_argument("--workdir", default=None,
                    help=f"defaults to ${WORKDIR_ENV} or the current directory")
    sp.add_argument("--clean", action="store_true",
                    help="remove merged checkpoints after evaluation")
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--csv", default=None, help="write (lambda, score) rows as CSV")
    sp.add_argument("--plot", default=None, help="render the score curve")
    _add_common(sp)
    sp.set_defaults(func=_cmd_sweep)
    subparsers["sweep"] = sp

    sp = sub.add_parser("related", help="look up the related language")
    sp.add_argument("code", help="language code (e.g. es)")
    _add_common(sp)
    sp.set_defaults(func=_cmd_related)
    subparsers["related"] = sp

    sp = sub.add_parser("validate",
                        help="inspect a container or compare two for compatibility")
    sp.add_argument("checkpoint")
    sp.add_argument("other", nargs="?", default=None)
    sp.add_argument("--deep", action="store_true",
                    help="also read every tensor's data")
    _add_common(sp)
    sp.set_defaults(func=_cmd_validate)
    subparsers["validate"] = sp

    return parser, subparsers


def _peek_config(argv) -> dict:
    """Extract --config before the real parse so its values become defaults."""
    path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise _UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise _UsageError(f"config {path} must hold a JSON object")
    return config


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = _peek_config(argv)
        parser, subparsers = build_parser()
        for sp in subparsers.values():
            dests = {action.dest for action in sp._actions}
            sp.set_defaults(**{k: v for k, v in config.items() if k in dests})
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            # argparse exits 2 on usage problems and 0 for --help
            return EXIT_OK if exc.code == 0 else EXIT_USAGE
        if getattr(args, "workdir", "") is None:
            args.workdir = os.environ.get(WORKDIR_ENV, ".")
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except (LangArithError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
