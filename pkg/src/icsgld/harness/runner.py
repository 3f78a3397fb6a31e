"""Experiment orchestration: per-trial seeding, sampler dispatch and output files."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import numpy as np

from .. import __version__
from ..contour import ContourParams, Partition, write_theta_csv
from ..errors import ConfigError, NumericalError
from ..interaction import ContourSetup, RunAborted, run_interacting, write_message_log
from ..metrics import (GridSpec, TrialResult, fixed_point_oracle, grid_counts, kl_divergence, smooth_counts,
                       theta_error, truth_grid)
from ..samplers import LearningRateSchedule, ReplicaExchange, StepSizeSchedule, make_chains, resgld_round, sgld_step
from ..targets import (TargetNoise, gaussian_mixture_1d, load_dataset_csv, multimodal25, quadratic,
                       synthesize_dataset)
from .config import DatasetConfig, ExperimentConfig

MASK64 = (1 << 64) - 1
THREADS_ENV = "CONTOUR_THREADS"
METRIC_COLUMNS = ("round", "algorithm", "seed", "kl", "theta_tv", "messages", "wall_ms")


def splitmix64(x: int) -> int:
    """One output of the SplitMix64 generator seeded with ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(base_seed: int, trial: int) -> int:
    """63-bit seed of trial ``trial``: ``splitmix64(base_seed XOR trial) >> 1``."""
    return splitmix64((base_seed ^ trial) & MASK64) >> 1


def thread_budget() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"expected a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(THREADS_ENV, "must be >= 1")
    return value


# --------------------------------------------------------------------------
# builders


def build_target(cfg):
    noise = TargetNoise(cfg.noise.energy_std, cfg.noise.grad_std) if cfg.noise else None
    if cfg.kind == "multimodal25":
        return multimodal25(noise)
    if cfg.kind == "gaussian_mixture_1d":
        return gaussian_mixture_1d(cfg.weights, cfg.means, cfg.stds, noise)
    if cfg.kind == "quadratic":
        return quadratic(cfg.dim, cfg.offset, cfg.scale, noise)
    ds = cfg.dataset or DatasetConfig()
    if ds.path is not None:
        return load_dataset_csv(ds.path, ds.n, sigma=ds.sigma, prior_std=ds.prior_std)
    return synthesize_dataset(N=ds.N, n=ds.n, true_mean=ds.true_mean, sigma=ds.sigma, seed=ds.seed,
                              dim=ds.dim, prior_std=ds.prior_std)


def build_partition(cfg) -> Partition:
    if cfg.cuts is not None:
        return Partition.from_cuts(cfg.cuts, cfg.delta_u)
    return Partition.uniform(cfg.lowest_cut, cfg.delta_u, cfg.m)


def build_grid(cfg) -> Optional[GridSpec]:
    if cfg is None:
        return None
    return GridSpec(tuple(cfg.lower), tuple(cfg.upper), tuple(cfg.cells), cfg.smoothing)


def checkpoint_rounds(rounds: int, count: int) -> List[int]:
    """``count`` evenly spaced rounds ending at ``rounds`` (duplicates dropped)."""
    return sorted({max(1, math.ceil(rounds * i / count)) for i in range(1, count + 1)})


def initial_positions(config: ExperimentConfig, chains: int, rng: np.random.Generator) -> np.ndarray:
    d = config.target.dimension
    init = config.init
    if init.kind == "uniform":
        return rng.uniform(init.low, init.high, size=(chains, d))
    point = np.zeros(d) if init.value is None else np.asarray(init.value, dtype=float)
    return np.tile(point, (chains, 1))


def _sa_updates_by(r: int, rounds: int, K: int) -> int:
    return r // K + (1 if r == rounds and rounds % K else 0)


# --------------------------------------------------------------------------
# per-trial state


class _KLTracker:
    """Running ``KL(truth || histogram)`` over a growing sample set."""

    def __init__(self, grid: GridSpec, truth: np.ndarray, weighted: bool):
        self.grid = grid
        self.truth = truth
        self.weighted = weighted
        self.counts = np.zeros(grid.size)
        self.inside = 0

    def add(self, samples, weights=None) -> None:
        samples = np.asarray(samples, dtype=float).reshape(-1, self.grid.dim)
        if samples.size == 0:
            return
        _, inside = self.grid.cell_index(samples)
        self.counts += grid_counts(samples, self.grid, weights if self.weighted else None)
        self.inside += int(inside.sum())

    def value(self) -> float:
        counts = self.counts
        total = counts.sum()
        if self.weighted and total > 0:
            counts = counts * (self.inside / total)
        if counts.sum() + self.grid.smoothing * counts.size <= 0:
            return math.inf
        return kl_divergence(self.truth, smooth_counts(counts, self.grid.smoothing))


@dataclass
class TrialOutput:
    result: TrialResult
    theta_rows: list = field(default_factory=list)
    dump: Optional[np.ndarray] = None
    theta_star: Optional[np.ndarray] = None
    messages: list = field(default_factory=list)


@dataclass
class _Context:
    config: ExperimentConfig
    target: object
    grid: Optional[GridSpec]
    truth: Optional[np.ndarray]
    partition: Optional[Partition]
    theta_star: Optional[np.ndarray]
    checkpoints: List[int]
    log_messages: bool


class _Series:
    """Pre-allocated per-round sample buffer plus checkpoint bookkeeping."""

    def __init__(self, ctx: _Context, chains: int):
        cfg = ctx.config
        self.ctx = ctx
        self.x = np.full((cfg.rounds, chains, cfg.target.dimension), np.nan)
        self.w = np.ones((cfg.rounds, chains))
        self.keep = np.ones(cfg.rounds, dtype=bool)
        self.timing = cfg.record.timing
        self.clock: dict = {}
        self.t0 = time.perf_counter()
        self.marks = set(ctx.checkpoints)

    def put(self, r: int, xs, weights=None) -> None:
        self.x[r - 1] = np.asarray(xs, dtype=float).reshape(self.x.shape[1], -1)
        if weights is not None:
            self.w[r - 1] = weights
        if self.timing and r in self.marks:
            self.clock[r] = (time.perf_counter() - self.t0) * 1e3

    def kl_series(self, completed: int, weighted: bool) -> dict:
        ctx = self.ctx
        out = {}
        if ctx.grid is None:
            return out
        tracker = _KLTracker(ctx.grid, ctx.truth, weighted)
        prev = 0
        for r in ctx.checkpoints:
            if r > completed:
                break
            rows = np.nonzero(self.keep[prev:r])[0] + prev
            tracker.add(self.x[rows].reshape(-1, self.x.shape[2]), self.w[rows].ravel() if weighted else None)
            out[r] = tracker.value()
            prev = r
        return out

    def dump(self, stride: int, completed: int, weighted: bool) -> np.ndarray:
        """Rows ``round, chain, x..., weight`` for every ``stride``-th round."""
        r = np.arange(stride, completed + 1, stride)
        n, c, d = r.size, self.x.shape[1], self.x.shape[2]
        rows = np.empty((n, c, d + 3))
        rows[:, :, 0] = r[:, None]
        rows[:, :, 1] = np.arange(c)[None, :]
        rows[:, :, 2:2 + d] = self.x[r - 1]
        rows[:, :, -1] = self.w[r - 1] if weighted else 1.0
        return rows.reshape(-1, d + 3)


def _assemble(ctx: _Context, algorithm: str, seed: int, series: _Series, completed: int, weighted: bool,
              thetas: dict, messages_at, chain_steps: int, error: Optional[str], extras: dict,
              final_theta=None) -> TrialResult:
    kl = series.kl_series(completed, weighted)
    rounds = [r for r in ctx.checkpoints if r <= completed]
    tv = [theta_error(thetas[r], ctx.theta_star) if (ctx.theta_star is not None and r in thetas) else math.nan
          for r in rounds]
    wall = [series.clock.get(r, math.nan) if series.timing else math.nan for r in rounds]
    res = TrialResult(algorithm=algorithm, seed=seed, rounds=np.array(rounds, dtype=np.int64),
                      series={"kl": np.array([kl.get(r, math.nan) for r in rounds]),
                              "theta_tv": np.array(tv),
                              "messages": np.array([messages_at(r) for r in rounds], dtype=float),
                              "wall_ms": np.array(wall)},
                      final_theta=None if final_theta is None else np.asarray(final_theta),
                      wall_ms=(time.perf_counter() - series.t0) * 1e3, messages=int(messages_at(completed)),
                      chain_steps=chain_steps, error=error, extras=extras)
    return res


def _run_contour(ctx: _Context, seed: int) -> TrialOutput:
    cfg = ctx.config
    algo = cfg.algorithm
    P, W, K, R = algo.chains, algo.workers, algo.comm_interval, cfg.rounds
    chain_ss, init_ss, _ = np.random.SeedSequence(seed).spawn(3)
    x0 = initial_positions(cfg, P, np.random.default_rng(init_ss))
    states = make_chains(x0, chain_ss, algo.vr.period if algo.vr.enabled else None)
    lr = LearningRateSchedule(algo.lr.kind, algo.lr.epsilon0, algo.lr.power, algo.lr.scale, algo.lr.cycles, R)
    sa = StepSizeSchedule(algo.sa.cap, algo.sa.alpha, algo.sa.offset)
    setup = ContourSetup(ctx.target, ctx.partition, ContourParams(algo.zeta, algo.tau, algo.field_variant), lr, sa)
    # optional plain SGLD pre-run; not recorded and not counted in chain_steps
    for s in states:
        for _ in range(algo.warmup):
            sgld_step(s, ctx.target, lr(1), algo.tau)
    series = _Series(ctx, P)
    thetas = {}
    marks = set(ctx.checkpoints)
    stride = cfg.record.theta_stride or max(1, R // 1000)

    def on_round(r, theta):
        if r in marks:
            thetas[r] = theta.weights

    def sink(r, xs, bins, weights):
        series.put(r, xs, weights)

    m = ctx.partition.m
    base = W * m if algo.mode == "channels" else 0

    def messages_at(r):
        return base + _sa_updates_by(r, R, K) * (P + W * m)

    error = None
    try:
        traj = run_interacting(setup, states, R, workers=W, mode=algo.mode, comm_interval=K, record_every=stride,
                               log_messages=ctx.log_messages, timeout=algo.timeout, on_round=on_round,
                               sample_sink=sink)
    except RunAborted as exc:
        traj = exc.trajectory
        error = str(exc)
    completed = traj.completed_rounds
    if error is None and traj.message_scalars != messages_at(R):
        raise AssertionError("message accounting drifted from the protocol volume")
    extras = {"rounds_completed": completed, "warmup_steps": algo.warmup * P, "sa_updates": traj.sa_updates, "clamp_events": traj.final_theta.clamp_events,
              "upstream_scalars": traj.upstream_scalars, "downstream_scalars": traj.downstream_scalars,
              "final_positions": traj.final_positions.tolist()}
    res = _assemble(ctx, algo.name, seed, series, completed, True, thetas, messages_at, traj.chain_steps,
                    error, extras, traj.final_theta.weights)
    return TrialOutput(result=res, theta_rows=list(zip(traj.rounds, traj.thetas)),
                       dump=series.dump(cfg.record.sample_stride, completed, True), theta_star=ctx.theta_star,
                       messages=traj.messages)


def _run_langevin(ctx: _Context, seed: int) -> TrialOutput:
    """SGLD, cyclical SGLD and replica-exchange SGLD (no coordinator traffic)."""
    cfg = ctx.config
    algo = cfg.algorithm
    P, R = algo.chains, cfg.rounds
    chain_ss, init_ss, swap_ss = np.random.SeedSequence(seed).spawn(3)
    x0 = initial_positions(cfg, P, np.random.default_rng(init_ss))
    states = make_chains(x0, chain_ss, algo.vr.period if algo.vr.enabled else None)
    lr = LearningRateSchedule(algo.lr.kind, algo.lr.epsilon0, algo.lr.power, algo.lr.scale, algo.lr.cycles, R)
    rex = None
    if algo.name == "resgld":
        rep = algo.replica
        rex = ReplicaExchange(rep.taus, rep.lrs, np.random.default_rng(swap_ss), rep.initial_correction,
                              rep.correction_period, rep.swap_interval,
                              StepSizeSchedule(algo.sa.cap, algo.sa.alpha, algo.sa.offset))
    tracked = 1 if rex is not None else P
    series = _Series(ctx, tracked)
    if algo.name == "cycsgld":
        period = math.ceil(R / algo.lr.cycles)
        series.keep = np.array([((r - 1) % period) / period >= 0.5 for r in range(1, R + 1)])
    error = None
    completed = 0
    try:
        for r in range(1, R + 1):
            if rex is not None:
                cold = min(states, key=lambda s: s.temperature_slot)
                series.put(r, [cold.x])
                resgld_round(states, ctx.target, rex, r)
            else:
                series.put(r, [s.x for s in states])
                eps = lr(r)
                for s in states:
                    sgld_step(s, ctx.target, eps, algo.tau)
            completed = r
    except (NumericalError, FloatingPointError) as exc:
        error = f"run aborted at round {completed + 1}: {exc}"
    extras = {"rounds_completed": completed, "final_positions": [s.x.tolist() for s in states]}
    if rex is not None:
        extras.update(swap_attempts=rex.attempts, swap_accepted=rex.accepted, corrections=list(rex.corrections))
    res = _assemble(ctx, algo.name, seed, series, completed, False, {}, lambda r: 0, completed * P, error, extras)
    return TrialOutput(result=res, dump=series.dump(cfg.record.sample_stride, completed, False))


def _context(config: ExperimentConfig, log_messages: bool) -> _Context:
    target = build_target(config.target)
    grid = build_grid(config.grid)
    algo = config.algorithm
    truth = truth_grid(target, grid, algo.tau) if grid is not None else None
    partition = build_partition(algo.partition) if algo.partition is not None else None
    theta_star = None
    if partition is not None and config.record.oracle and config.target.kind != "dataset" \
            and config.target.dimension <= 2:
        theta_star = fixed_point_oracle(target, partition, algo.zeta, algo.tau).theta_star
    return _Context(config, target, grid, truth, partition, theta_star,
                    checkpoint_rounds(config.rounds, config.record.checkpoints), log_messages)


def run_trial(config: ExperimentConfig, trial: int, log_messages: bool = False, ctx: _Context = None) -> TrialOutput:
    """Run one repeat with the seed derived from ``(base_seed, trial)``."""
    ctx = ctx or _context(config, log_messages)
    seed = trial_seed(config.base_seed, trial)
    if config.algorithm.name in ("csgld", "icsgld"):
        return _run_contour(ctx, seed)
    return _run_langevin(ctx, seed)


# --------------------------------------------------------------------------
# output files


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _write_trial_files(out: Path, trial: int, output: TrialOutput, config: ExperimentConfig, log: bool) -> None:
    tdir = out / f"trial_{trial:03d}"
    tdir.mkdir(parents=True, exist_ok=True)
    res = output.result
    with open(tdir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for i, r in enumerate(res.rounds):
            w.writerow([int(r), res.algorithm, res.seed, _fmt(res.series["kl"][i]), _fmt(res.series["theta_tv"][i]),
                        int(res.series["messages"][i]), _fmt(res.series["wall_ms"][i])])
    if output.theta_rows:
        write_theta_csv(tdir / "theta_trajectory.csv", output.theta_rows)
    if output.dump is not None:
        d = config.target.dimension
        with open(tdir / "samples.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "chain", *[f"x{i + 1}" for i in range(d)], "weight"])
            for row in output.dump:
                w.writerow([int(row[0]), int(row[1]), *[repr(float(v)) for v in row[2:]]])
    if log and output.messages:
        write_message_log(tdir / "messages.csv", output.messages)


def _merge_metrics(out: Path, trials: int) -> Path:
    path = out / "metrics.csv"
    with open(path, "w", newline="") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for t in range(trials):
            lines = (out / f"trial_{t:03d}" / "metrics.csv").read_text().splitlines()[1:]
            for line in lines:
                fh.write(line + "\n")
    return path


def _write_final_theta(out: Path, outputs: List[TrialOutput]) -> None:
    with open(out / "final_theta.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "seed", "bin", "weight", "theta_star"])
        for t, o in enumerate(outputs):
            if o.result.final_theta is None:
                continue
            star = o.theta_star
            for b, v in enumerate(o.result.final_theta, start=1):
                w.writerow([t, o.result.seed, b, repr(float(v)), "" if star is None else repr(float(star[b - 1]))])


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    out_dir: Path
    results: List[TrialResult]
    outputs: List[TrialOutput]
    manifest: dict

    @property
    def aborted(self) -> List[TrialResult]:
        return [r for r in self.results if r.error is not None]


def run_experiment(config: ExperimentConfig, out_dir=None, log_messages: bool = False,
                   figures: Optional[bool] = None) -> ExperimentReport:
    """Run every repeat, then write metrics, final weights, sample dumps, manifest and figures.

    A trial that aborts keeps its partial series; the remaining trials still run.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    ctx = _context(config, log_messages)
    budget = thread_budget()
    per_trial = config.algorithm.workers if config.algorithm.mode == "channels" else 1
    parallel = max(1, min(config.repeats, budget // per_trial))

    def one(t):
        output = run_trial(config, t, log_messages, ctx)
        _write_trial_files(out, t, output, config, log_messages)
        return output

    if parallel == 1:
        outputs = [one(t) for t in range(config.repeats)]
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            outputs = list(pool.map(one, range(config.repeats)))
    _merge_metrics(out, config.repeats)
    _write_final_theta(out, outputs)
    results = [o.result for o in outputs]
    manifest = {
        "name": config.name,
        "config_hash": config.config_hash(),
        "config": config.model_dump(mode="json"),
        "software_version": __version__,
        "base_seed": config.base_seed,
        "trials": [{"trial": t, "seed": r.seed, "rounds_completed": r.extras["rounds_completed"],
                    "chain_steps": r.chain_steps, "error": r.error} for t, r in enumerate(results)],
        "chain_steps_per_trial": config.rounds * config.algorithm.chains,
        "parallel_trials": parallel,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if config.record.figures if figures is None else figures:
        from .plotting import plot_experiment
        plot_experiment(results, outputs, out / "figures")
    return ExperimentReport(config, out, results, outputs, manifest)
