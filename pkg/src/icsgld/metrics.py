"""Ground-truth oracles and run-quality metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .contour import ContourParams, Partition, Theta
from .errors import InputError


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box split into ``cells[d]`` equal cells per dimension."""

    lower: tuple
    upper: tuple
    cells: tuple
    smoothing: float = 1e-10

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if not len(lo) == len(hi) == len(cells):
            raise InputError("lower, upper and cells must have one entry per dimension")
        if not all(np.isfinite(lo + hi)) or any(a >= b for a, b in zip(lo, hi)):
            raise InputError("grid bounds must be finite with lower < upper")
        if any(c < 2 for c in cells):
            raise InputError("need at least 2 cells per dimension")
        if self.smoothing < 0:
            raise InputError("smoothing must be >= 0")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.cells)

    @property
    def cell_area(self) -> float:
        return float(np.prod(self.widths))

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(size, dim)``, in C order over the cell index."""
        axes = [lo + (np.arange(c) + 0.5) * w for lo, c, w in zip(self.lower, self.cells, self.widths)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_index(self, samples: np.ndarray):
        """Flat cell index per sample and a mask of samples inside the box."""
        samples = np.asarray(samples, dtype=float).reshape(-1, self.dim)
        rel = (samples - np.array(self.lower)) / self.widths
        idx = np.floor(rel).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(self.cells)), axis=1)
        flat = np.ravel_multi_index(tuple(idx[inside].T), self.cells) if inside.any() else np.zeros(0, np.int64)
        return flat, inside


def truth_grid(target, grid: GridSpec, tau: float = 1.0) -> np.ndarray:
    """Cell probabilities from the density at cell centres times cell area."""
    u = np.asarray(target.energy_grid(grid.centers()), dtype=float)
    logp = -u / tau
    finite = np.isfinite(logp)
    if not finite.any():
        raise InputError("target density is zero on the whole grid")
    p = np.zeros_like(logp)
    p[finite] = np.exp(logp[finite] - logp[finite].max()) * grid.cell_area
    total = p.sum()
    if not total > 0:
        raise InputError("target density is zero on the whole grid")
    return p / total


def grid_counts(samples, grid: GridSpec, weights=None) -> np.ndarray:
    flat, inside = grid.cell_index(samples)
    w = None if weights is None else np.asarray(weights, dtype=float).reshape(-1)[inside]
    return np.bincount(flat, weights=w, minlength=grid.size).astype(float)


def smooth_counts(counts: np.ndarray, delta: float) -> np.ndarray:
    """``(count_c + delta) / (total + delta * cells)``."""
    counts = np.asarray(counts, dtype=float)
    denom = counts.sum() + delta * counts.size
    if denom <= 0:
        raise InputError("no samples fall inside the grid")
    return (counts + delta) / denom


def empirical_grid(samples, grid: GridSpec, weights=None) -> np.ndarray:
    """Smoothed histogram of ``samples`` over ``grid``.

    Samples outside the box are ignored.  With ``weights`` the histogram is
    importance weighted; weights are rescaled to sum to the number of
    in-grid samples so ``grid.smoothing`` keeps the meaning of a pseudo-count.
    """
    counts = grid_counts(samples, grid, weights)
    if weights is not None:
        _, inside = grid.cell_index(samples)
        total = counts.sum()
        if total > 0:
            counts *= inside.sum() / total
    return smooth_counts(counts, grid.smoothing)


def kl_divergence(p, q) -> float:
    """``KL(p || q)``; ``inf`` if ``q`` vanishes where ``p`` does not."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InputError("p and q must have the same shape")
    support = p > 0
    if np.any(q[support] <= 0):
        return float("inf")
    return max(0.0, float(np.sum(p[support] * np.log(p[support] / q[support]))))


def theta_error(theta_hat, theta_star) -> float:
    """Total-variation distance ``0.5 * sum |a - b|``."""
    a = np.asarray(getattr(theta_hat, "weights", theta_hat), dtype=float)
    b = np.asarray(getattr(theta_star, "weights", theta_star), dtype=float)
    return 0.5 * float(np.abs(a - b).sum())


# --------------------------------------------------------------------------
# quadrature oracles

_DEFAULT_BOUNDS = {1: ((-30.0,), (30.0,)), 2: ((-8.0, -8.0), (8.0, 8.0))}


@dataclass
class FixedPoint:
    """Bin masses of ``exp(-U/tau)`` and the induced fixed points."""

    masses: np.ndarray
    theta_inf: np.ndarray
    theta_star: np.ndarray
    zeta: float
    coverage: float
    truncated: bool


def _quadrature_masses(target, partition: Partition, tau: float, lower, upper, per_axis: int):
    dim = len(lower)
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    u = np.asarray(target.energy_grid(pts), dtype=float)
    bins = np.searchsorted(np.asarray(partition.cut_points), u, side="left")
    cell = float(np.prod([(hi - lo) / (per_axis - 1) for lo, hi in zip(lower, upper)]))
    logw = -u / tau
    shift = np.max(logw)
    dens = np.exp(logw - shift) * cell
    return np.bincount(bins, weights=dens, minlength=partition.m), shift


def fixed_point_from_masses(masses, zeta: float) -> np.ndarray:
    """Normalised ``masses ** (1/zeta)``."""
    masses = np.asarray(masses, dtype=float)
    if np.any(masses < 0) or masses.sum() <= 0:
        raise InputError("bin masses must be non-negative and not all zero")
    frac = masses / masses.sum()
    with np.errstate(divide="ignore"):
        logs = np.where(frac > 0, np.log(np.where(frac > 0, frac, 1.0)) / zeta, -np.inf)
    top = logs[np.isfinite(logs)].max()
    out = np.exp(logs - top)
    return out / out.sum()


def fixed_point_oracle(target, partition: Partition, zeta: float, tau: float = 1.0, bounds=None,
                       nodes: int = 200_001) -> FixedPoint:
    """Energy-bin masses by dense uniform quadrature and ``theta_star``.

    ``bounds`` is ``(lower, upper)``; the support check compares against a
    box twice as wide and flags truncation if more than ``1e-6`` of the mass
    lies outside.
    """
    if target.dim not in (1, 2):
        raise InputError("quadrature oracles support 1D and 2D targets only")
    lower, upper = bounds if bounds is not None else _DEFAULT_BOUNDS[target.dim]
    lower = tuple(np.atleast_1d(lower).astype(float))
    upper = tuple(np.atleast_1d(upper).astype(float))
    per_axis = int(np.ceil(nodes ** (1.0 / len(lower))))
    masses, shift = _quadrature_masses(target, partition, tau, lower, upper, per_axis)
    mid = [(lo + hi) / 2 for lo, hi in zip(lower, upper)]
    wide_lo = tuple(c - (hi - lo) for c, lo, hi in zip(mid, lower, upper))
    wide_hi = tuple(c + (hi - lo) for c, lo, hi in zip(mid, lower, upper))
    # same node spacing on the wide box, so the ratio measures truncation only
    wide, shift_w = _quadrature_masses(target, partition, tau, wide_lo, wide_hi, 2 * per_axis - 1)
    coverage = float(masses.sum() * np.exp(shift - shift_w) / wide.sum())
    truncated = coverage < 1.0 - 1e-6
    if truncated:
        warnings.warn(f"quadrature box holds only {coverage:.8f} of the mass", RuntimeWarning)
    theta_inf = masses / masses.sum()
    return FixedPoint(masses=masses, theta_inf=theta_inf, theta_star=fixed_point_from_masses(masses, zeta),
                      zeta=zeta, coverage=coverage, truncated=truncated)


def mean_field_oracle(target, partition: Partition, params: ContourParams, theta, oracle: FixedPoint = None,
                      **quad) -> np.ndarray:
    """Mean field ``h(theta)`` under the piecewise-constant flattened density.

    The sampler is idealised as drawing from ``pi(x) / theta(J(x))^zeta``
    (normalised), so ``h_i = sum_k w_k * lead_k * (1[i=k] - theta_i)`` with
    ``w_k`` the flattened mass of bin ``k`` and ``lead_k`` equal to
    ``theta_k`` (new field) or ``theta_k^zeta`` (original field).
    """
    if oracle is None:
        oracle = fixed_point_oracle(target, partition, params.zeta, params.tau, **quad)
    th = np.asarray(getattr(theta, "weights", theta), dtype=float)
    if th.shape != oracle.theta_inf.shape or np.any(th <= 0):
        raise InputError("theta must be a positive vector with one weight per bin")
    logw = np.full(th.size, -np.inf)
    pos = oracle.theta_inf > 0
    logw[pos] = np.log(oracle.theta_inf[pos]) - params.zeta * np.log(th[pos])
    w = np.exp(logw - logw[pos].max())
    w /= w.sum()
    lead = th if params.field_variant == "new" else th ** params.zeta
    mass = w * lead
    return mass - th * mass.sum()


# --------------------------------------------------------------------------
# trial bookkeeping


@dataclass
class TrialResult:
    """Metrics of one trial; every series is indexed by ``rounds``."""

    algorithm: str
    seed: int
    rounds: np.ndarray
    series: Dict[str, np.ndarray] = field(default_factory=dict)
    final_theta: Optional[np.ndarray] = None
    wall_ms: float = 0.0
    messages: int = 0
    chain_steps: int = 0
    error: Optional[str] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rounds = np.asarray(self.rounds, dtype=np.int64)
        if self.rounds.size > 1 and np.any(np.diff(self.rounds) <= 0):
            raise InputError("trial series must be strictly increasing in round")


def trial_stats(results: Sequence[TrialResult], metric: str):
    """Mean and standard error (sample std / sqrt(n)) across trials."""
    if not results:
        raise InputError("no trials")
    data = np.array([np.asarray(r.series[metric], dtype=float) for r in results])
    mean = data.mean(axis=0)
    if len(results) == 1:
        return mean, np.zeros_like(mean)
    return mean, data.std(axis=0, ddof=1) / np.sqrt(len(results))


def mode_coverage(samples, mode_centers, radius: float) -> int:
    """Number of centres with at least one sample within ``radius``."""
    samples = np.asarray(samples, dtype=float)
    centers = np.atleast_2d(np.asarray(mode_centers, dtype=float))
    if samples.size == 0:
        return 0
    samples = samples.reshape(-1, centers.shape[1])
    hit = np.zeros(len(centers), dtype=bool)
    for start in range(0, len(samples), 50_000):
        chunk = samples[start:start + 50_000]
        d2 = ((chunk[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        hit |= (d2 <= radius * radius).any(axis=0)
    return int(hit.sum())


def lattice_modes(extent: int = 2) -> np.ndarray:
    """Integer lattice points ``{-extent..extent}^2`` (the 25 central modes)."""
    r = np.arange(-extent, extent + 1, dtype=float)
    return np.array([(a, b) for a in r for b in r])
