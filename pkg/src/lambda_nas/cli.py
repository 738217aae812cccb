"""Command-line front end: search runs, the collapse demo, bench building,
the verification suite, and trace reporting.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import rig
from .bench import build_tabular, load_bench, rank_of, save_bench
from .diagnostics import export_traces, run_summary, write_report_csv
from .space import genotype_to_text
from .trainer import ConfigError, TrainConfig, load_config, search

__all__ = ["main", "run_cli"]


class _UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lambda-nas",
        description="Desk-scale differentiable cell search with alignment regularization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="run one bi-level search")
    p_search.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
    p_search.add_argument("--seed", type=int)
    p_search.add_argument("--variant", choices=["cosine", "sign", "none"])
    p_search.add_argument("--lambda", dest="lambda_max", type=float)
    p_search.add_argument("--epsilon0", type=float)
    p_search.add_argument("--epochs", type=int)
    p_search.add_argument("--out", type=Path, default=Path("runs/search"))
    p_search.add_argument("--bench", type=Path, help="tabular bench JSON for ranking the result")

    p_demo = sub.add_parser("collapse-demo", help="paired vanilla vs regularized searches")
    p_demo.add_argument("--seeds", type=int, default=4)
    p_demo.add_argument("--out", type=Path, default=Path("runs/collapse-demo"))
    p_demo.add_argument("--bench", type=Path, help="reuse an existing bench JSON")
    p_demo.add_argument("--lambda", dest="lambda_max", type=float, default=0.125)
    p_demo.add_argument("--epsilon0", type=float, default=1e-4)
    p_demo.add_argument("--variant", choices=["cosine", "sign"], default="cosine")
    p_demo.add_argument("--epochs", type=int)

    p_bench = sub.add_parser("bench-build", help="train the exhaustive tabular benchmark")
    p_bench.add_argument("--out", type=Path, default=Path("runs/bench.json"))
    p_bench.add_argument("--seed", type=int, default=0)

    sub.add_parser("verify", help="run the oracle and property checks")

    p_report = sub.add_parser("report", help="summarize a finished run directory")
    p_report.add_argument("--run", type=Path, required=True, help="directory with trace.jsonl/epochs.jsonl")
    p_report.add_argument("--out", type=Path, help="where to write report.csv (default: run dir)")
    return parser


def _cmd_search(args) -> int:
    if args.config is not None:
        if not args.config.exists():
            raise _UsageError(f"config file not found: {args.config}")
        config = load_config(args.config)
    else:
        config = TrainConfig()
    overrides = {
        k: getattr(args, k)
        for k in ("seed", "variant", "lambda_max", "epsilon0", "epochs")
        if getattr(args, k) is not None
    }
    if overrides:
        config = TrainConfig.from_json({**config.to_json(), **overrides})

    dataset = rig.rig_dataset()
    result = search(
        config,
        dataset,
        spec=rig.rig_spec(),
        layers=rig.RIG_LAYERS,
        out_dir=args.out,
        init_scale=rig.RIG_INIT_SCALE,
    )
    bench = load_bench(args.bench) if args.bench else None
    export_traces(result, args.out, fmt="json", bench=bench)
    summary = run_summary(result, bench)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_bench_build(args) -> int:
    bench = rig.rig_bench(seed=args.seed)
    save_bench(bench, args.out)
    accs = sorted((e.val_accuracy for e in bench.entries.values()), reverse=True)
    print(f"wrote {args.out}: {len(bench.entries)} genotypes, "
          f"accuracy range [{accs[-1]:.3f}, {accs[0]:.3f}]")
    return 0


def _cmd_collapse_demo(args) -> int:
    if args.bench is not None:
        bench = load_bench(args.bench)
    else:
        bench_path = args.out / "bench.json"
        if bench_path.exists():
            bench = load_bench(bench_path)
        else:
            print("building tabular bench (27 genotypes)...")
            bench = rig.rig_bench()
            save_bench(bench, bench_path)
    summary = rig.collapse_demo(
        seeds=args.seeds,
        bench=bench,
        out_dir=args.out,
        lambda_max=args.lambda_max,
        epsilon0=args.epsilon0,
        variant=args.variant,
        epochs=args.epochs,
    )
    print(json.dumps(summary, indent=2))
    with open(args.out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return 0


def _cmd_report(args) -> int:
    run_dir = args.run
    trace_path = run_dir / "trace.jsonl"
    epochs_path = run_dir / "epochs.jsonl"
    if not trace_path.exists() or not epochs_path.exists():
        raise _UsageError(f"run directory {run_dir} is missing trace.jsonl or epochs.jsonl")
    epoch_records = [json.loads(line) for line in epochs_path.read_text().splitlines()]
    trace = [json.loads(line) for line in trace_path.read_text().splitlines()]

    class _Loaded:
        pass

    loaded = _Loaded()
    loaded.epoch_records = epoch_records
    loaded.trace = trace
    out = args.out if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    path = write_report_csv(loaded, out / "report.csv")
    last = epoch_records[-1]
    print(f"wrote {path}")
    print(f"epochs={len(epoch_records)} final genotype={last['genotype']}")
    print(f"final Lambda={last['Lambda']} cumulative l1={last['l1_change_cumulative']:.3f}")
    return 0


def _cmd_verify(_args) -> int:
    from .verify import run_verification

    ok = run_verification()
    return 0 if ok else 1


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        if args.command == "search":
            return _cmd_search(args)
        if args.command == "collapse-demo":
            return _cmd_collapse_demo(args)
        if args.command == "bench-build":
            return _cmd_bench_build(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "report":
            return _cmd_report(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except (_UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
