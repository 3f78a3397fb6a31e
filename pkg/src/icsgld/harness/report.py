"""Across-trial summaries of metric CSVs."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..errors import ConfigError
from .runner import METRIC_COLUMNS

SUMMARY_METRICS = ("kl", "theta_tv", "messages", "wall_ms")


def _num(text: str) -> float:
    return math.nan if text == "" else float(text)


def read_metrics(path) -> List[dict]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "metrics file not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(METRIC_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(str(path), f"missing columns: {', '.join(sorted(missing))}")
        rows = []
        for row in reader:
            rows.append({"round": int(row["round"]), "algorithm": row["algorithm"], "seed": int(row["seed"]),
                         **{m: _num(row[m]) for m in SUMMARY_METRICS}})
    return rows


def mean_stderr(values) -> tuple:
    """Mean and ``std(ddof=1) / sqrt(n)`` over the finite values."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan, 0
    if v.size == 1:
        return float(v[0]), math.nan, 1
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(v.size)


def summarize(paths: Sequence) -> List[dict]:
    """One row per (source, algorithm, round, metric) with mean, stderr and n."""
    table = []
    for path in paths:
        groups = {}
        for row in read_metrics(path):
            groups.setdefault((row["algorithm"], row["round"]), []).append(row)
        for (algo, rnd), rows in sorted(groups.items()):
            for metric in SUMMARY_METRICS:
                mean, se, n = mean_stderr([r[metric] for r in rows])
                if n:
                    table.append({"source": str(path), "algorithm": algo, "round": rnd, "metric": metric,
                                  "n": n, "mean": mean, "stderr": se})
    return table


def final_rows(table: Sequence[dict]) -> List[dict]:
    last = {}
    for row in table:
        key = (row["source"], row["algorithm"])
        last[key] = max(last.get(key, 0), row["round"])
    return [row for row in table if row["round"] == last[(row["source"], row["algorithm"])]]


def format_table(rows: Sequence[dict]) -> str:
    lines = [f"{'source':<32} {'algorithm':<8} {'round':>9} {'metric':<9} {'mean':>12} {'stderr':>10} {'n':>3}"]
    for r in rows:
        se = "" if math.isnan(r["stderr"]) else f"{r['stderr']:.4g}"
        lines.append(f"{r['source'][-32:]:<32} {r['algorithm']:<8} {r['round']:>9} {r['metric']:<9} "
                     f"{r['mean']:>12.5g} {se:>10} {r['n']:>3}")
    return "\n".join(lines)


def compare(paths: Sequence, out_dir, figures: bool = True) -> List[dict]:
    """Write ``compare.csv`` (every round) and ``compare_final.csv`` plus figures."""
    if len(paths) < 1:
        raise ConfigError("compare", "need at least one metrics CSV")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = summarize(paths)
    cols = ["source", "algorithm", "round", "metric", "n", "mean", "stderr"]
    for name, rows in (("compare.csv", table), ("compare_final.csv", final_rows(table))):
        with open(out / name, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in rows:
                w.writerow({**row, "mean": repr(row["mean"]),
                            "stderr": "" if math.isnan(row["stderr"]) else repr(row["stderr"])})
    if figures:
        from .plotting import plot_compare
        for metric in ("kl", "theta_tv"):
            if any(r["metric"] == metric for r in table):
                plot_compare(table, metric, out / f"compare_{metric}.png")
    return table
