"""Static PNG figures rendered next to the CSV outputs."""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..metrics import TrialResult  # noqa: E402


def _finite(values) -> bool:
    arr = np.asarray(values, dtype=float)
    return bool(arr.size and np.isfinite(arr).any())


def plot_series(results: Sequence[TrialResult], metric: str, path, ylabel: str = None, logy: bool = True):
    """One faint line per trial plus the across-trial mean."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    curves = []
    for res in results:
        y = np.asarray(res.series[metric], dtype=float)
        ax.plot(res.rounds, y, color="0.7", lw=0.8)
        curves.append((res.rounds, y))
    if curves and all(len(r) == len(curves[0][0]) for r, _ in curves):
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(np.array([y for _, y in curves]), axis=0)
        ax.plot(curves[0][0], mean, color="C0", lw=2, label=f"mean of {len(curves)}")
        ax.legend(frameon=False)
    if logy and all((np.asarray(y)[np.isfinite(y)] > 0).all() for _, y in curves):
        ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.set_ylabel(ylabel or metric)
    ax.set_title(f"{results[0].algorithm}: {metric}" if results else metric)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_theta(final_thetas: List[np.ndarray], theta_star, path):
    """Final weights per bin (mean with 2 std band) against the fixed point."""
    arr = np.array(final_thetas)
    bins = np.arange(1, arr.shape[1] + 1)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    mean = arr.mean(axis=0)
    ax.plot(bins, mean, "o-", ms=3, label="final theta (mean)")
    if arr.shape[0] > 1:
        sd = arr.std(axis=0, ddof=1)
        ax.fill_between(bins, np.maximum(mean - 2 * sd, 1e-300), mean + 2 * sd, alpha=0.3, lw=0)
    if theta_star is not None:
        ax.plot(bins, theta_star, "k--", lw=1, label="fixed point")
    positive = arr[arr > 0]
    if positive.size and positive.min() < 1e-3:
        ax.set_yscale("log")
    ax.set_xlabel("bin")
    ax.set_ylabel("weight")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_experiment(results: Sequence[TrialResult], outputs, fig_dir) -> List[Path]:
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric, label in (("kl", "KL(truth || samples)"), ("theta_tv", "TV to fixed point")):
        if any(_finite(r.series[metric]) for r in results):
            path = fig_dir / f"{metric}.png"
            plot_series(results, metric, path, label)
            written.append(path)
    finals = [r.final_theta for r in results if r.final_theta is not None]
    if finals:
        path = fig_dir / "theta.png"
        plot_theta(finals, outputs[0].theta_star, path)
        written.append(path)
    return written


def plot_compare(table, metric: str, path) -> Path:
    """Mean with one standard error per source/algorithm from a compare table."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    groups = {}
    for row in table:
        if row["metric"] == metric:
            groups.setdefault((row["source"], row["algorithm"]), []).append(row)
    for i, ((src, algo), rows) in enumerate(sorted(groups.items())):
        r = np.array([row["round"] for row in rows])
        m = np.array([row["mean"] for row in rows])
        se = np.array([row["stderr"] for row in rows])
        ax.errorbar(r, m, yerr=np.where(np.isfinite(se), se, 0.0), color=f"C{i}", capsize=2,
                    label=f"{algo} ({Path(src).parent.name or src})")
    vals = [row["mean"] for row in table if row["metric"] == metric and math.isfinite(row["mean"])]
    if vals and min(vals) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.set_ylabel(metric)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
