"""Coordinator/worker protocol for interacting contour chains.

Workers own their chains and report only bin indices; the coordinator owns
``theta``, performs the stochastic-approximation update and broadcasts the
new weights.  Two execution modes share one code path for the numerics:

``shared_memory``
    every chain is stepped in the calling thread;
``channels``
    one thread per worker, exchanging :class:`WorkerReport` and
    :class:`ThetaBroadcast` messages over in-process queues.

With identical seeds both modes give bit-identical results: each chain's
draws depend only on its own stream, and the SA update is invariant to the
order of the flattened indices.
"""

from __future__ import annotations

import csv
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .contour import ContourParams, Partition, Theta, sa_update
from .errors import InputError
from .samplers import ChainState, LearningRateSchedule, StepSizeSchedule, csgld_steps

MODES = ("shared_memory", "channels")
INDEX_MAX = 2 ** 16 - 1


@dataclass(frozen=True)
class WorkerReport:
    """Bin indices of one worker's chains (``u32 worker_id, u64 round, u16[] indices``)."""

    worker_id: int
    round: int
    indices: tuple

    def scalars(self) -> int:
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class ThetaBroadcast:
    """New weights sent to every worker (``u64 round, f64[m] weights``)."""

    round: int
    theta: Theta
    seq: int

    @property
    def weights(self) -> np.ndarray:
        return self.theta.weights

    def scalars(self) -> int:
        return self.theta.m


@dataclass(frozen=True)
class MessageRecord:
    direction: str  # "up" (worker -> coordinator) or "down"
    round: int
    worker_id: int
    message: object


class RoundFailure(RuntimeError):
    pass


class RunAborted(RuntimeError):
    """A run stopped early; ``trajectory`` holds everything recorded so far."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class ContourSetup:
    """Everything the chains and the coordinator need besides the chains."""

    target: object
    partition: Partition
    params: ContourParams
    lr: LearningRateSchedule
    sa: StepSizeSchedule
    theta0: Optional[Theta] = None

    def initial_theta(self) -> Theta:
        return self.theta0 if self.theta0 is not None else Theta.uniform(self.partition.m)


@dataclass
class Trajectory:
    """Per-round record of an interacting run.

    ``samples[r]`` are the pre-move positions of round ``r + 1`` (shape
    ``(P, d)``), ``bins[r]`` their bin labels and ``weights[r]`` the
    importance weights ``theta(J)^zeta`` under the snapshot in force.
    ``thetas[r]`` is the weight vector after round ``r + 1``.
    """

    chains: int
    workers: int
    comm_interval: int
    rounds: List[int] = field(default_factory=list)
    thetas: List[np.ndarray] = field(default_factory=list)
    samples: List[np.ndarray] = field(default_factory=list)
    sample_rounds: List[int] = field(default_factory=list)
    bins: List[np.ndarray] = field(default_factory=list)
    weights: List[np.ndarray] = field(default_factory=list)
    sa_updates: int = 0
    upstream_scalars: int = 0
    downstream_scalars: int = 0
    messages: List[MessageRecord] = field(default_factory=list)
    final_theta: Optional[Theta] = None
    final_positions: Optional[np.ndarray] = None
    completed_rounds: int = 0

    @property
    def chain_steps(self) -> int:
        return self.completed_rounds * self.chains

    @property
    def message_scalars(self) -> int:
        return self.upstream_scalars + self.downstream_scalars

    def theta_array(self) -> np.ndarray:
        return np.array(self.thetas)


def coordinator_aggregate(reports: Sequence[WorkerReport], theta: Theta, omega: float,
                          params: ContourParams | None = None, seq: int = 0) -> ThetaBroadcast:
    """Flatten all workers' indices (ordered by worker id) into one SA update."""
    if not reports:
        raise InputError("no worker reports to aggregate")
    ordered = sorted(reports, key=lambda r: r.worker_id)
    ids = [r.worker_id for r in ordered]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate report from a worker")
    rounds = {r.round for r in ordered}
    if len(rounds) != 1:
        raise InputError(f"reports from different rounds: {sorted(rounds)}")
    flat = []
    for r in ordered:
        if not r.indices:
            raise InputError(f"worker {r.worker_id} sent an empty report")
        flat.extend(r.indices)
    return ThetaBroadcast(round=ordered[0].round, theta=sa_update(theta, flat, omega, params), seq=seq)


def check_wire_log(messages: Sequence[MessageRecord], m: int) -> None:
    """Assert the log only carries indices upstream and weights downstream."""
    for rec in messages:
        msg = rec.message
        if rec.direction == "up":
            if type(msg) is not WorkerReport:
                raise AssertionError(f"unexpected upstream payload {type(msg).__name__}")
            if not all(isinstance(i, int) and 1 <= i <= min(m, INDEX_MAX) for i in msg.indices):
                raise AssertionError("upstream payload holds something other than bin indices")
        elif rec.direction == "down":
            if type(msg) is not ThetaBroadcast or msg.theta.m != m:
                raise AssertionError(f"unexpected downstream payload {type(msg).__name__}")
        else:
            raise AssertionError(f"unknown direction {rec.direction!r}")


def write_message_log(path, messages: Sequence[MessageRecord]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["direction", "round", "worker_id", "kind", "seq", "payload"])
        for rec in messages:
            msg = rec.message
            if isinstance(msg, WorkerReport):
                out.writerow([rec.direction, rec.round, rec.worker_id, "report", "",
                              " ".join(str(i) for i in msg.indices)])
            else:
                out.writerow([rec.direction, rec.round, rec.worker_id, "theta", msg.seq,
                              " ".join(repr(float(v)) for v in msg.weights)])


class _Recorder:
    """Collects per-round samples/theta with thinning, or streams them out."""

    def __init__(self, traj: Trajectory, params: ContourParams, record_every: int, sample_every: int,
                 sample_sink: Callable | None = None, on_round: Callable | None = None):
        self.traj = traj
        self.zeta = params.zeta
        self.record_every = record_every
        self.sample_every = sample_every
        self.sink = sample_sink
        self.on_round = on_round

    def samples(self, r: int, xs, bins, theta: Theta):
        if self.sink is None and r % self.sample_every:
            return
        b = np.asarray(bins, dtype=np.int64)
        w = theta.weights[b - 1] ** self.zeta
        if self.sink is not None:
            self.sink(r, xs, b, w)
            return
        self.traj.sample_rounds.append(r)
        self.traj.samples.append(np.array(xs))
        self.traj.bins.append(b)
        self.traj.weights.append(w)

    def theta(self, r: int, theta: Theta, last: bool):
        if r % self.record_every == 0 or last:
            self.traj.rounds.append(r)
            self.traj.thetas.append(theta.weights)
        if self.on_round is not None:
            self.on_round(r, theta)


def _update_due(r: int, rounds: int, K: int) -> bool:
    return r % K == 0 or r == rounds


def run_interacting(setup: ContourSetup, states: Sequence[ChainState], rounds: int, workers: int = 1,
                    mode: str = "shared_memory", comm_interval: int = 1, record_every: int = 1,
                    sample_every: int = 1, log_messages: bool = False, timeout: float | None = None,
                    on_round: Callable | None = None, sample_sink: Callable | None = None) -> Trajectory:
    """Run the full interacting loop for ``rounds`` rounds.

    ``theta`` is updated once every ``comm_interval`` rounds (and after the
    last round) from all indices gathered since the previous update, using
    the step size of the round at which the update happens.

    ``on_round(r, theta)`` is called for every round with the weights in
    force after it.  ``sample_sink(r, xs, bins, weights)`` receives every
    round's pre-move positions instead of storing thinned copies in the
    trajectory.  In channels mode both callbacks run on the coordinator
    thread once the workers have finished, still in round order.
    """
    P = len(states)
    if P < 1 or workers < 1 or P % workers:
        raise InputError(f"P={P} chains must be a positive multiple of W={workers} workers")
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    if comm_interval < 1 or rounds < 1:
        raise InputError("comm_interval and rounds must be >= 1")
    traj = Trajectory(chains=P, workers=workers, comm_interval=comm_interval)
    rec = _Recorder(traj, setup.params, max(1, record_every), max(1, sample_every), sample_sink, on_round)
    if mode == "shared_memory":
        _run_shared(setup, list(states), rounds, workers, comm_interval, traj, rec, log_messages)
    else:
        _run_channels(setup, list(states), rounds, workers, comm_interval, traj, rec, log_messages, timeout)
    traj.final_positions = np.array([s.x for s in states])
    return traj


def _account(traj: Trajectory, r: int, reports, broadcast: ThetaBroadcast, workers: int, log: bool):
    for rep in reports:
        traj.upstream_scalars += rep.scalars()
        if log:
            traj.messages.append(MessageRecord("up", r, rep.worker_id, rep))
    for w in range(workers):
        traj.downstream_scalars += broadcast.scalars()
        if log:
            traj.messages.append(MessageRecord("down", r, w, broadcast))


def _run_shared(setup, states, rounds, workers, K, traj, rec, log):
    per = len(states) // workers
    theta = setup.initial_theta()
    pending: List[List[int]] = [[] for _ in range(workers)]
    seq = 0
    try:
        for r in range(1, rounds + 1):
            eps = setup.lr(r)
            xs = [s.x for s in states]
            bins = csgld_steps(states, theta, setup.partition, setup.params, setup.target, eps,
                               setup.params.tau)
            rec.samples(r, xs, bins, theta)
            for w in range(workers):
                pending[w].extend(bins[w * per:(w + 1) * per])
            if _update_due(r, rounds, K):
                reports = [WorkerReport(w, r, tuple(pending[w])) for w in range(workers)]
                seq += 1
                bc = coordinator_aggregate(reports, theta, setup.sa(r), setup.params, seq)
                theta = bc.theta
                traj.sa_updates += 1
                _account(traj, r, reports, bc, workers, log)
                pending = [[] for _ in range(workers)]
            traj.completed_rounds = r
            rec.theta(r, theta, r == rounds)
    except Exception as exc:
        traj.final_theta = theta
        traj.final_positions = np.array([s.x for s in states])
        raise RunAborted(f"run aborted at round {traj.completed_rounds + 1}: {exc}", traj) from exc
    traj.final_theta = theta


_STOP = object()


class _WorkerFailure:
    def __init__(self, worker_id, exc):
        self.worker_id = worker_id
        self.exc = exc


def _worker_loop(wid, chains, setup, rounds, K, inbox: queue.Queue, outbox: queue.Queue, trace: dict):
    try:
        bc = inbox.get()
        if bc is _STOP:
            return
        theta = bc.theta
        pending = []
        for r in range(1, rounds + 1):
            eps = setup.lr(r)
            xs = [s.x for s in chains]
            bins = csgld_steps(chains, theta, setup.partition, setup.params, setup.target, eps,
                               setup.params.tau)
            trace[r] = (xs, bins, theta)
            pending.extend(bins)
            if _update_due(r, rounds, K):
                outbox.put(WorkerReport(wid, r, tuple(pending)))
                pending = []
                bc = inbox.get()
                if bc is _STOP:
                    return
                theta = bc.theta
    except Exception as exc:  # reported to the coordinator, which aborts the run
        outbox.put(_WorkerFailure(wid, exc))


def _run_channels(setup, states, rounds, workers, K, traj, rec, log, timeout):
    per = len(states) // workers
    theta = setup.initial_theta()
    inboxes = [queue.Queue() for _ in range(workers)]
    outbox: queue.Queue = queue.Queue()
    traces = [dict() for _ in range(workers)]
    threads = [threading.Thread(target=_worker_loop, daemon=True,
                                args=(w, states[w * per:(w + 1) * per], setup, rounds, K, inboxes[w],
                                      outbox, traces[w]))
               for w in range(workers)]
    for t in threads:
        t.start()
    seq = 0
    first = ThetaBroadcast(round=0, theta=theta, seq=seq)
    for w, box in enumerate(inboxes):
        box.put(first)
        traj.downstream_scalars += first.scalars()
        if log:
            traj.messages.append(MessageRecord("down", 0, w, first))
    done = 0
    failure = None
    history = {}
    try:
        for r in range(1, rounds + 1):
            if not _update_due(r, rounds, K):
                continue
            reports = []
            while len(reports) < workers:
                try:
                    msg = outbox.get(timeout=timeout)
                except queue.Empty:
                    raise RoundFailure(f"barrier timeout waiting for reports of round {r}") from None
                if isinstance(msg, _WorkerFailure):
                    raise RoundFailure(f"worker {msg.worker_id} failed: {msg.exc}") from msg.exc
                reports.append(msg)
            seq += 1
            bc = coordinator_aggregate(reports, theta, setup.sa(r), setup.params, seq)
            theta = bc.theta
            traj.sa_updates += 1
            for rep in sorted(reports, key=lambda x: x.worker_id):
                traj.upstream_scalars += rep.scalars()
                if log:
                    traj.messages.append(MessageRecord("up", r, rep.worker_id, rep))
            for w, box in enumerate(inboxes):
                box.put(bc)
                traj.downstream_scalars += bc.scalars()
                if log:
                    traj.messages.append(MessageRecord("down", r, w, bc))
            history[r] = theta
            done = r
    except Exception as exc:
        failure = exc
        for box in inboxes:
            box.put(_STOP)
    for t in threads:
        t.join()
    _merge_traces(traces, rounds if failure is None else done, history, setup, traj, rec)
    traj.final_theta = theta
    if failure is not None:
        traj.final_positions = np.array([s.x for s in states])
        raise RunAborted(f"run aborted after round {done}: {failure}", traj) from failure


def _merge_traces(traces, rounds, history, setup, traj, rec):
    theta = setup.initial_theta()
    for r in range(1, rounds + 1):
        xs, bins = [], []
        snap = None
        for tr in traces:
            x_w, b_w, snap = tr[r]
            xs.extend(x_w)
            bins.extend(b_w)
        rec.samples(r, xs, bins, snap)
        theta = history.get(r, theta)
        traj.completed_rounds = r
        rec.theta(r, theta, r == rounds)
