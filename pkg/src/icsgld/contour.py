"""Energy partition, self-adapting weights and the stochastic-approximation step.

Bins are labelled ``1..m``: bin ``i`` holds energies ``u_{i-1} < u <= u_i``
with ``u_0 = -inf`` and ``u_m = +inf``, so the two end bins are unbounded.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

FIELD_VARIANTS = ("new", "original")
PSI_VARIANTS = ("piecewise_exp", "piecewise_const")
DEFAULT_FLOOR = 1e-10


@dataclass(frozen=True)
class Partition:
    """Cut points ``u_1 < ... < u_{m-1}`` with uniform interior spacing."""

    m: int
    cut_points: tuple
    delta_u: float

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cut_points)
        object.__setattr__(self, "cut_points", cuts)
        if self.m < 2:
            raise InputError("a partition needs m >= 2 bins")
        if len(cuts) != self.m - 1:
            raise InputError(f"m={self.m} bins need {self.m - 1} cut points, got {len(cuts)}")
        if not all(math.isfinite(c) for c in cuts):
            raise InputError("cut points must be finite")
        if not self.delta_u > 0:
            raise InputError("delta_u must be positive")
        gaps = np.diff(cuts)
        if np.any(gaps <= 0):
            raise InputError("cut points must be strictly increasing")
        # 1e-12 relative, widened to a few ulps of the largest cut for offset grids
        tol = max(1e-12 * self.delta_u, 8 * np.finfo(float).eps * max(abs(cuts[0]), abs(cuts[-1])))
        if gaps.size and np.any(np.abs(gaps - self.delta_u) > tol):
            raise InputError("interior cut spacing must equal delta_u")

    @classmethod
    def uniform(cls, lowest_cut: float, delta_u: float, m: int) -> "Partition":
        cuts = tuple(lowest_cut + i * delta_u for i in range(m - 1))
        return cls(m=m, cut_points=cuts, delta_u=delta_u)

    @classmethod
    def from_cuts(cls, cuts: Sequence[float], delta_u: float | None = None) -> "Partition":
        cuts = [float(c) for c in cuts]
        if delta_u is None:
            if len(cuts) < 2:
                raise InputError("delta_u is required when there is a single cut point")
            delta_u = (cuts[-1] - cuts[0]) / (len(cuts) - 1)
        return cls(m=len(cuts) + 1, cut_points=tuple(cuts), delta_u=delta_u)

    def lower_edge(self, idx: int) -> float:
        """``u_{idx-1}`` (``-inf`` for the first bin)."""
        return -math.inf if idx == 1 else self.cut_points[idx - 2]


@dataclass(frozen=True, eq=False)
class Theta:
    """Read-only snapshot of the self-adapting simplex weights.

    ``clamp_events`` counts the updates in which the positivity floor fired.
    """

    weights: np.ndarray
    floor: float = DEFAULT_FLOOR
    clamp_events: int = 0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, m: int, floor: float = DEFAULT_FLOOR) -> "Theta":
        return cls(np.full(m, 1.0 / m), floor)

    @classmethod
    def checked(cls, weights, floor: float = DEFAULT_FLOOR) -> "Theta":
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise InputError("theta needs at least two weights")
        if not floor > 0:
            raise InputError("theta floor must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InputError(f"theta weights sum to {w.sum()!r}, not 1")
        if w.min() < floor:
            raise InputError("theta weights must be >= floor")
        return cls(w, floor)

    @property
    def m(self) -> int:
        return self.weights.size

    def __getitem__(self, idx: int) -> float:
        """Weight of bin ``idx`` (1-based)."""
        return float(self.weights[idx - 1])


@dataclass(frozen=True)
class ContourParams:
    zeta: float
    tau: float = 1.0
    field_variant: str = "new"

    def __post_init__(self):
        if not (self.zeta > 0 and self.tau > 0):
            raise InputError("zeta and tau must be positive")
        if self.field_variant not in FIELD_VARIANTS:
            raise InputError(f"field_variant must be one of {FIELD_VARIANTS}")


def partition_index(partition: Partition, scaled_energy: float) -> int:
    """Bin label ``i`` with ``u_{i-1} < scaled_energy <= u_i``."""
    if math.isnan(scaled_energy):
        raise InputError("energy is NaN")
    return bisect.bisect_left(partition.cut_points, scaled_energy) + 1


def gradient_multiplier(theta: Theta, partition: Partition, params: ContourParams, idx: int) -> float:
    """Scale applied to the stochastic gradient in bin ``idx``.

    Negative when the bin below the current one is heavily over-weighted
    relative to it, which turns the Langevin step into an uphill (escape) move.
    """
    w = theta.weights
    prev = idx - 1 if idx > 1 else 1
    return 1.0 + params.zeta * params.tau / partition.delta_u * (
        math.log(w[idx - 1]) - math.log(w[prev - 1]))


def random_field_new(theta: Theta, idx: int) -> np.ndarray:
    w = theta.weights
    out = -w[idx - 1] * w
    out[idx - 1] += w[idx - 1]
    return out


def random_field_original(theta: Theta, params: ContourParams, idx: int) -> np.ndarray:
    w = theta.weights
    lead = w[idx - 1] ** params.zeta
    out = -lead * w
    out[idx - 1] += lead
    return out


def random_field(theta: Theta, params: ContourParams, idx: int) -> np.ndarray:
    if params.field_variant == "new":
        return random_field_new(theta, idx)
    return random_field_original(theta, params, idx)


def sa_update(theta: Theta, indices: Sequence[int], omega: float,
              params: ContourParams | None = None) -> Theta:
    """One stochastic-approximation step driven by the averaged random field.

    ``indices`` are the bin labels reported by the ``P`` chains; the field of
    each is evaluated at the same snapshot ``theta`` and averaged.  ``params``
    selects the field variant (the new field when omitted).  Weights that
    would fall below the floor are clamped and the vector renormalised.
    """
    P = len(indices)
    if P == 0:
        raise InputError("sa_update needs at least one index")
    w = theta.weights
    m = w.size
    power = 1.0 if params is None or params.field_variant == "new" else params.zeta
    if P == 1:
        j = int(indices[0]) - 1
        if not 0 <= j < m:
            raise InputError(f"bin index {j + 1} outside 1..{m}")
        lead = w[j] if power == 1.0 else w[j] ** power
        new = w - (omega * lead) * w
        new[j] += omega * lead
    else:
        idx = np.asarray(indices, dtype=np.int64) - 1
        if idx.min() < 0 or idx.max() >= m:
            raise InputError(f"bin index outside 1..{m}")
        counts = np.bincount(idx, minlength=m)
        lead = w if power == 1.0 else w ** power
        mass = counts * lead
        new = w + (omega / P) * (mass - w * mass.sum())
    clamps = theta.clamp_events
    if new.min() < theta.floor:
        new = _clamp_to_floor(new, theta.floor)
        clamps += 1
    return Theta(new, theta.floor, clamps)


def _clamp_to_floor(w: np.ndarray, floor: float) -> np.ndarray:
    # pin low entries at the floor and rescale the rest so the floor survives normalisation
    w = np.asarray(w, dtype=float).copy()
    low = np.zeros(w.size, dtype=bool)
    while True:
        low |= w < floor
        w[low] = floor
        free = ~low
        w[free] *= (1.0 - floor * low.sum()) / w[free].sum()
        if not np.any(w[free] < floor):
            return w


def evaluate_psi(theta: Theta, partition: Partition, u: float, variant: str = "piecewise_exp") -> float:
    """Piecewise-exponential or piecewise-constant interpolation of ``theta`` in energy."""
    idx = partition_index(partition, u)
    if variant == "piecewise_const":
        return theta[idx]
    if variant != "piecewise_exp":
        raise InputError(f"unknown psi variant {variant!r}")
    if idx == 1:
        return theta[1]
    lo = theta[idx - 1]
    frac = (u - partition.lower_edge(idx)) / partition.delta_u
    return lo * math.exp((math.log(theta[idx]) - math.log(lo)) * frac)


def write_theta_csv(path, rows: Iterable[tuple[int, np.ndarray]]) -> None:
    """Write ``(iteration, weights)`` pairs as ``iteration,bin,weight`` rows."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "bin", "weight"])
        for it, weights in rows:
            for b, v in enumerate(weights, start=1):
                out.writerow([it, b, repr(float(v))])
