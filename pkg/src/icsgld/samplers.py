"""Langevin kernels: SGLD, contour SGLD, the interacting round, and baselines.

Chains are mutable :class:`ChainState` objects owned by exactly one worker.
Kernels update the chain in place and return it.  Every random draw of a
chain comes from its own generator in a fixed order (energy/gradient
estimator first, then the Gaussian increment via
``Generator.standard_normal``), so a chain's trajectory depends only on its
seed and on the ``theta`` snapshots it is shown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .contour import ContourParams, Partition, Theta, gradient_multiplier, partition_index, sa_update
from .errors import InputError, NumericalError
from .targets import DatasetTarget, VRState, refresh_anchor, set_anchor, vr_energy


@dataclass(eq=False)
class ChainState:
    """Position, step counter and random stream of one chain.

    ``energy`` caches the last stochastic energy estimate (taken at the
    position before the most recent move).
    """

    x: np.ndarray
    rng: np.random.Generator
    k: int = 0
    stream_id: int = 0
    vr: Optional[VRState] = None
    temperature_slot: int = 0
    energy: float = math.nan
    energy_var: float = 0.0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float).reshape(-1)


def make_chains(x0, seed_seq: np.random.SeedSequence | int, vr_period: int | None = None) -> List[ChainState]:
    """One chain per row of ``x0`` with independent child streams of ``seed_seq``."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if not isinstance(seed_seq, np.random.SeedSequence):
        seed_seq = np.random.SeedSequence(seed_seq)
    children = seed_seq.spawn(x0.shape[0])
    vr = VRState(vr_period) if vr_period else None
    return [ChainState(x=row, rng=np.random.Generator(np.random.PCG64(child)), stream_id=i, vr=vr,
                       temperature_slot=i)
            for i, (row, child) in enumerate(zip(x0, children))]


@dataclass(frozen=True)
class LearningRateSchedule:
    """Langevin step sizes ``eps_k`` (``k`` counted from 1).

    ``constant``: ``eps0``.  ``polynomial_decay``: ``eps0 (1 + k/scale)^-power``.
    ``cosine_cyclical``: :func:`cyc_lr` with ``cycles`` over ``total`` steps.
    """

    kind: str = "constant"
    epsilon0: float = 1e-3
    power: float = 0.0
    scale: float = 1.0
    cycles: int = 1
    total: int = 1

    def __post_init__(self):
        if not self.epsilon0 > 0:
            raise InputError("epsilon0 must be positive")
        if self.kind not in ("constant", "polynomial_decay", "cosine_cyclical"):
            raise InputError(f"unknown learning-rate schedule {self.kind!r}")
        if self.kind == "polynomial_decay" and (self.power < 0 or self.scale <= 0):
            raise InputError("polynomial decay needs power >= 0 and scale > 0")
        if self.kind == "cosine_cyclical" and (self.cycles < 1 or self.total < self.cycles):
            raise InputError("cosine schedule needs 1 <= cycles <= total")

    def __call__(self, k: int) -> float:
        if self.kind == "constant":
            return self.epsilon0
        if self.kind == "polynomial_decay":
            return self.epsilon0 * (1.0 + k / self.scale) ** (-self.power)
        return cyc_lr(k, self.total, self.cycles, self.epsilon0)


@dataclass(frozen=True)
class StepSizeSchedule:
    """SA step sizes ``omega_k = min(cap, 1 / (k^alpha + offset))``."""

    cap: float = 3e-3
    alpha: float = 0.6
    offset: float = 100.0

    def __post_init__(self):
        if not self.cap > 0:
            raise InputError("step-size cap must be positive")
        if not 0.5 < self.alpha <= 1.0:
            raise InputError("alpha must lie in (0.5, 1] so that sum(omega) = inf and sum(omega^2) < inf")
        if self.offset < 0:
            raise InputError("offset must be >= 0")

    def __call__(self, k: int) -> float:
        denom = k ** self.alpha + self.offset
        return self.cap if denom <= 0 else min(self.cap, 1.0 / denom)


def cyc_lr(k: int, total_iters: int, cycles: int, eps0: float) -> float:
    """Cosine cyclical learning rate restarting every ``ceil(total/cycles)`` steps."""
    if not 1 <= k <= total_iters:
        raise InputError(f"k={k} outside [1, {total_iters}]")
    period = math.ceil(total_iters / cycles)
    return 0.5 * eps0 * (math.cos(math.pi * ((k - 1) % period) / period) + 1.0)


def _estimate(state: ChainState, target):
    """Stochastic ``(energy, gradient)`` at the chain position, VR-aware."""
    if state.vr is not None and isinstance(target, DatasetTarget):
        if not state.vr.initialized:
            state.vr = set_anchor(state.vr, state.x, target)
        else:
            state.vr = refresh_anchor(state.vr, state.x, state.k, target)
        batch = target.draw_batch(state.rng)
        u = vr_energy(target, state.vr, state.x, batch)
        _, g = target.batch_estimates(state.x, batch)
        return u, g
    return target.stochastic(state.x, state.rng)


def _move(state: ChainState, step: float, g, eps: float, tau: float) -> None:
    if not np.isfinite(g).all():
        raise NumericalError(f"non-finite gradient at iteration {state.k}", state.x, state.k)
    w = state.rng.standard_normal(state.x.size)
    state.x = state.x - step * g + math.sqrt(2.0 * tau * eps) * w
    state.k += 1


def sgld_step(state: ChainState, target, eps: float, tau: float) -> ChainState:
    """``x <- x - eps * grad U~(x) + sqrt(2 tau eps) w``."""
    u, g = _estimate(state, target)
    state.energy = u
    _move(state, eps, g, eps, tau)
    return state


def csgld_step(state: ChainState, theta: Theta, partition: Partition, params: ContourParams,
               target, eps: float, tau: float):
    """SGLD with the contour gradient multiplier.

    Returns ``(state, J)`` where ``J`` is the bin of the pre-move energy
    estimate, the one used for the multiplier.
    """
    u, g = _estimate(state, target)
    if not math.isfinite(u):
        raise NumericalError(f"non-finite energy at iteration {state.k}", state.x, state.k)
    state.energy = u
    j = partition_index(partition, u)
    mult = gradient_multiplier(theta, partition, params, j)
    _move(state, eps * mult, g, eps, tau)
    return state, j


def csgld_steps(states: Sequence[ChainState], theta: Theta, partition: Partition, params: ContourParams,
                target, eps: float, tau: float) -> List[int]:
    """Advance every chain once against the same ``theta``; return their bins."""
    return [csgld_step(s, theta, partition, params, target, eps, tau)[1] for s in states]


class RoundResult(NamedTuple):
    states: List[ChainState]
    theta: Theta
    indices: List[int]


def icsgld_round(states: Sequence[ChainState], theta: Theta, partition: Partition, params: ContourParams,
                 target, eps: float, tau: float, omega: float) -> RoundResult:
    """One interacting round: every chain steps, then one averaged SA update.

    If any chain fails the exception propagates and no new ``theta`` is
    produced, so the caller's snapshot stays current.
    """
    if not states:
        raise InputError("icsgld_round needs at least one chain")
    indices = csgld_steps(states, theta, partition, params, target, eps, tau)
    return RoundResult(list(states), sa_update(theta, indices, omega, params), indices)


# --------------------------------------------------------------------------
# replica exchange baseline


@dataclass(eq=False)
class ReplicaExchange:
    """Temperature ladder, swap stream and bias corrections for reSGLD.

    ``corrections[i]`` is the correction for the pair of slots ``(i, i+1)``.
    It is re-estimated every ``correction_period`` rounds as
    ``(1/tau_i - 1/tau_{i+1}) * (var_i + var_{i+1}) / 2`` from the energy
    estimator variances recorded since the previous estimate.  With an ``sa``
    schedule the estimate is blended in, ``F <- (1 - w_k) F + w_k * F_hat``;
    without one it replaces ``F`` outright.
    """

    taus: Sequence[float]
    eps: Sequence[float]
    rng: np.random.Generator
    initial_correction: float = 30.0
    correction_period: int = 100
    swap_interval: int = 1
    sa: Optional[StepSizeSchedule] = None
    corrections: List[float] = field(default_factory=list)
    attempts: int = 0
    accepted: int = 0
    _var_sum: Optional[np.ndarray] = None
    _var_count: int = 0

    def __post_init__(self):
        if len(self.taus) != len(self.eps) or len(self.taus) < 2:
            raise InputError("replica exchange needs >= 2 matching temperatures and learning rates")
        if len(set(self.taus)) != len(self.taus):
            raise InputError("temperatures must be distinct")
        if not self.corrections:
            self.corrections = [float(self.initial_correction)] * (len(self.taus) - 1)
        self._var_sum = np.zeros(len(self.taus))

    def record_variances(self, variances) -> None:
        self._var_sum += np.asarray(variances, dtype=float)
        self._var_count += 1

    def update_corrections(self, k: int = 1) -> None:
        if self._var_count == 0:
            return
        var = self._var_sum / self._var_count
        fresh = [(1.0 / self.taus[i] - 1.0 / self.taus[i + 1]) * 0.5 * (var[i] + var[i + 1])
                 for i in range(len(self.taus) - 1)]
        w = 1.0 if self.sa is None else self.sa(k)
        self.corrections = [(1.0 - w) * old + w * new for old, new in zip(self.corrections, fresh)]
        self._var_sum[:] = 0.0
        self._var_count = 0


def swap_probability(u_low: float, u_high: float, tau_low: float, tau_high: float, correction: float) -> float:
    """``min(1, exp((1/tau_i - 1/tau_j) (U_i - U_j - F)))``."""
    a = (1.0 / tau_low - 1.0 / tau_high) * (u_low - u_high - correction)
    return 1.0 if a >= 0 else math.exp(a)


def resgld_round(states: Sequence[ChainState], target, rex: ReplicaExchange, k: int) -> List[ChainState]:
    """Step every replica at its slot's ``(eps, tau)``, then try adjacent swaps.

    Pairs ``(i, i+1)`` with ``i`` of the round's parity are attempted; a swap
    exchanges positions, so each chain object keeps its temperature slot.
    """
    chains = sorted(states, key=lambda s: s.temperature_slot)
    for s in chains:
        slot = s.temperature_slot
        sgld_step(s, target, rex.eps[slot], rex.taus[slot])
    if k % rex.swap_interval == 0:
        energies = []
        variances = []
        for s in chains:
            u, _ = _estimate(s, target)
            energies.append(u)
            variances.append(target.energy_variance(s.x))
        rex.record_variances(variances)
        for i in range(k % 2, len(chains) - 1, 2):
            p = swap_probability(energies[i], energies[i + 1], rex.taus[i], rex.taus[i + 1],
                                 rex.corrections[i])
            rex.attempts += 1
            if rex.rng.random() < p:
                rex.accepted += 1
                lo, hi = chains[i], chains[i + 1]
                lo.x, hi.x = hi.x, lo.x
                energies[i], energies[i + 1] = energies[i + 1], energies[i]
    if k % rex.correction_period == 0:
        rex.update_corrections(k)
    return chains
