"""Trace analytics and export: EMA gradient traces, l1 probability drift,
run summaries, and plot-ready CSV series.

The quantities here mirror the collapse diagnostics used during search
monitoring: exponential moving averages of per-operation gradient sums split
by first-half vs second-half layers, and the cumulative l1 drift of the
softmax-normalized architecture weights (a plateau in that curve is the
signature of a converged search, runaway growth the signature of drift toward
saturation).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .space import CellSpec, Genotype, non_parametric_fraction

if TYPE_CHECKING:  # pragma: no cover
    from .bench import TabularBench
    from .trainer import SearchResult

__all__ = [
    "EmaTrace",
    "collapse_flag",
    "ema_update",
    "export_traces",
    "l1_change",
    "report_rows",
    "run_summary",
]


@dataclass
class EmaTrace:
    """Family of exponentially averaged series sharing one decay rate.

    The first observation of a series initializes its value (no zero-start
    bias); afterwards v <- decay * v + (1 - decay) * x.
    """

    decay: float
    values: dict[str, float] = field(default_factory=dict)
    history: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")


def ema_update(trace: EmaTrace, series: str, x: float) -> float:
    """Update one series and return its new value."""
    x = float(x)
    if series in trace.values:
        v = trace.decay * trace.values[series] + (1.0 - trace.decay) * x
    else:
        v = x
    trace.values[series] = v
    trace.history.setdefault(series, []).append(v)
    return v


def l1_change(p_prev: np.ndarray, p_next: np.ndarray) -> float:
    """Sum of absolute coordinate changes between two probability vectors."""
    p_prev = np.asarray(p_prev, dtype=np.float64)
    p_next = np.asarray(p_next, dtype=np.float64)
    if p_prev.shape != p_next.shape:
        raise ValueError(f"length mismatch: {p_prev.shape} vs {p_next.shape}")
    return float(np.abs(p_next - p_prev).sum())


def collapse_flag(spec: CellSpec, genotype: Genotype) -> bool:
    """True when at least half the chosen edges carry non-parametric ops."""
    return non_parametric_fraction(spec, genotype) >= 0.5


# ----------------------------------------------------------------------
# export
# ----------------------------------------------------------------------

TRACE_FIELDS = (
    "step",
    "epoch",
    "phase",
    "loss",
    "lambda_t",
    "Lambda",
    "Lambda_sign",
    "grad_norm_alpha",
    "min_layer_grad_norm",
    "skipped_reg",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def run_summary(result: "SearchResult", bench: "TabularBench | None" = None) -> dict:
    """Final genotype, final alignment, and (optionally) its bench rank."""
    from .space import genotype_to_text

    last_epoch = result.epoch_records[-1] if result.epoch_records else {}
    summary = {
        "genotype": genotype_to_text(result.spec, result.genotype),
        "final_lambda": last_epoch.get("Lambda"),
        "final_lambda_sign": last_epoch.get("Lambda_sign"),
        "epochs": len(result.epoch_records),
        "steps": len(result.trace),
        "variant": result.config.variant,
        "lambda_max": result.config.lambda_max,
        "seed": result.config.seed,
        "collapse_flag": collapse_flag(result.spec, result.genotype),
    }
    if bench is not None:
        from .bench import rank_of

        rank, percentile = rank_of(result.genotype, bench)
        summary["bench_rank"] = rank
        summary["bench_percentile"] = percentile
    return summary


def export_traces(
    result: "SearchResult",
    out_dir,
    fmt: str = "json",
    bench: "TabularBench | None" = None,
) -> dict[str, Path]:
    """Write trace files plus summary.json into ``out_dir``.

    fmt="json" emits trace.jsonl (bit-exact round trip), fmt="csv" emits
    trace.csv with 17 significant digits. Returns the written paths.
    """
    if not result.trace:
        raise ValueError("search result has an empty trace")
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown export format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    try:
        if fmt == "json":
            path = out_dir / "trace.jsonl"
            with open(path, "w") as fh:
                for record in result.trace:
                    fh.write(json.dumps(record) + "\n")
            written["trace"] = path
        else:
            path = out_dir / "trace.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(TRACE_FIELDS)
                for record in result.trace:
                    writer.writerow([_fmt(record[k]) for k in TRACE_FIELDS])
            written["trace"] = path
        spath = out_dir / "summary.json"
        with open(spath, "w") as fh:
            json.dump(run_summary(result, bench), fh, indent=2)
            fh.write("\n")
        written["summary"] = spath
    except OSError as exc:
        raise OSError(f"failed writing traces under {out_dir}: {exc}") from exc
    return written


def report_rows(result: "SearchResult") -> list[tuple[int, str, float]]:
    """Plot-ready (step, series, value) rows for the three trace figures:
    per-epoch alignment, EMA gradient series, and cumulative l1 drift."""
    rows: list[tuple[int, str, float]] = []
    for rec in result.epoch_records:
        e = rec["epoch"]
        if rec.get("Lambda") is not None:
            rows.append((e, "alignment/lambda", rec["Lambda"]))
        if rec.get("Lambda_sign") is not None:
            rows.append((e, "alignment/lambda_sign", rec["Lambda_sign"]))
        rows.append((e, "drift/l1_cumulative", rec["l1_change_cumulative"]))
        rows.append((e, "drift/l1_epoch", rec["l1_change_epoch"]))
        for series, value in sorted(rec.get("ema", {}).items()):
            rows.append((e, f"grad_ema/{series}", value))
    return rows


def write_report_csv(result: "SearchResult", path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "series", "value"])
        for step, series, value in report_rows(result):
            writer.writerow([step, series, format(float(value), ".17g")])
    return path
