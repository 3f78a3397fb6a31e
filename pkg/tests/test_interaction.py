import math

import numpy as np
import pytest

from icsgld.contour import ContourParams, Partition, Theta, sa_update
from icsgld.errors import InputError
from icsgld.interaction import (ContourSetup, MessageRecord, RunAborted, ThetaBroadcast, WorkerReport,
                                check_wire_log, coordinator_aggregate, run_interacting, write_message_log)
from icsgld.samplers import LearningRateSchedule, StepSizeSchedule, csgld_step, make_chains
from icsgld.targets import AnalyticTarget, gaussian_mixture_1d, multimodal25

MIX_PART = Partition.uniform(2.0, 1.0, 12)


def mixture_setup(zeta=0.9, m=12):
    return ContourSetup(target=gaussian_mixture_1d(), partition=Partition.uniform(2.0, 1.0, m),
                        params=ContourParams(zeta=zeta), lr=LearningRateSchedule(epsilon0=0.01),
                        sa=StepSizeSchedule(0.01, 0.6, 10))


def chains(P, seed=3, dim=1):
    return make_chains(np.zeros((P, dim)), seed)


# aggregation


def test_single_worker_single_chain_is_csgld_sa_step():
    theta = Theta.uniform(4)
    bc = coordinator_aggregate([WorkerReport(0, 1, (3,))], theta, 0.1)
    np.testing.assert_array_equal(bc.weights, sa_update(theta, [3], 0.1).weights)


def test_aggregation_independent_of_worker_split():
    theta = Theta([0.1, 0.2, 0.3, 0.4])
    two = coordinator_aggregate([WorkerReport(1, 5, (4, 1)), WorkerReport(0, 5, (2, 2))], theta, 0.05)
    one = coordinator_aggregate([WorkerReport(0, 5, (2, 2, 4, 1))], theta, 0.05)
    np.testing.assert_array_equal(two.weights, one.weights)


@pytest.mark.parametrize("reports", [
    [],
    [WorkerReport(0, 1, ())],
    [WorkerReport(0, 1, (1,)), WorkerReport(0, 1, (2,))],
    [WorkerReport(0, 1, (1,)), WorkerReport(1, 2, (2,))],
], ids=["none", "empty", "duplicate", "mixed-rounds"])
def test_aggregation_rejects_bad_reports(reports):
    with pytest.raises(InputError):
        coordinator_aggregate(reports, Theta.uniform(3), 0.1)


# full runs


def test_one_chain_run_matches_manual_csgld_loop():
    setup = mixture_setup()
    traj = run_interacting(setup, chains(1), 200)
    s = chains(1)[0]
    theta = Theta.uniform(12)
    for r in range(1, 201):
        _, j = csgld_step(s, theta, setup.partition, setup.params, setup.target, 0.01, 1.0)
        theta = sa_update(theta, [j], setup.sa(r), setup.params)
    np.testing.assert_array_equal(traj.final_theta.weights, theta.weights)
    np.testing.assert_array_equal(traj.final_positions[0], s.x)


@pytest.mark.parametrize("workers", [1, 2, 4])
def test_channels_mode_bit_identical(workers):
    setup = mixture_setup()
    a = run_interacting(setup, chains(4), 300, workers=workers)
    b = run_interacting(setup, chains(4), 300, workers=workers, mode="channels")
    np.testing.assert_array_equal(a.theta_array(), b.theta_array())
    np.testing.assert_array_equal(np.array(a.samples), np.array(b.samples))
    np.testing.assert_array_equal(a.final_positions, b.final_positions)


@pytest.mark.parametrize("mode", ["shared_memory", "channels"])
@pytest.mark.parametrize("K,rounds", [(1, 100), (5, 100), (5, 101), (7, 20)])
def test_comm_interval_update_count(mode, K, rounds):
    traj = run_interacting(mixture_setup(), chains(2), rounds, workers=2, mode=mode, comm_interval=K)
    assert traj.sa_updates == math.ceil(rounds / K)
    assert traj.completed_rounds == rounds


def test_comm_interval_modes_agree():
    setup = mixture_setup()
    a = run_interacting(setup, chains(4), 50, workers=2, comm_interval=5)
    b = run_interacting(setup, chains(4), 50, workers=2, comm_interval=5, mode="channels")
    np.testing.assert_array_equal(a.theta_array(), b.theta_array())
    np.testing.assert_array_equal(a.final_positions, b.final_positions)


def test_theta_held_between_sparse_updates():
    traj = run_interacting(mixture_setup(), chains(2), 12, comm_interval=4)
    thetas = traj.theta_array()
    np.testing.assert_array_equal(thetas[0], thetas[2])
    assert not np.array_equal(thetas[2], thetas[3])


def test_message_volume_counts():
    # W=4 workers, m=200, one chain each: 4 indices up, 4 x 200 weights down per round
    setup = mixture_setup(m=200)
    rounds = 10
    shared = run_interacting(setup, chains(4), rounds, workers=4, log_messages=True)
    assert shared.upstream_scalars == 4 * rounds
    assert shared.downstream_scalars == 4 * 200 * rounds
    chan = run_interacting(setup, chains(4), rounds, workers=4, mode="channels", log_messages=True)
    assert chan.upstream_scalars == 4 * rounds
    assert chan.downstream_scalars == 4 * 200 * (rounds + 1)  # plus the initial broadcast
    ups = [m for m in chan.messages if m.direction == "up" and m.round == 3]
    assert [len(m.message.indices) for m in ups] == [1, 1, 1, 1]


@pytest.mark.parametrize("mode", ["shared_memory", "channels"])
def test_wire_log_carries_no_positions(mode):
    setup = ContourSetup(target=multimodal25(), partition=Partition.uniform(-3.875, 0.125, 100),
                         params=ContourParams(zeta=0.75), lr=LearningRateSchedule(epsilon0=3e-3),
                         sa=StepSizeSchedule())
    traj = run_interacting(setup, chains(4, dim=2), 30, workers=2, mode=mode, log_messages=True)
    check_wire_log(traj.messages, 100)
    assert {type(m.message) for m in traj.messages} == {WorkerReport, ThetaBroadcast}


def test_wire_log_check_rejects_positions():
    forged = [MessageRecord("up", 1, 0, WorkerReport(0, 1, (0.25,)))]
    with pytest.raises(AssertionError):
        check_wire_log(forged, 10)
    with pytest.raises(AssertionError):
        check_wire_log([MessageRecord("up", 1, 0, np.zeros(2))], 10)


def test_message_log_csv(tmp_path):
    traj = run_interacting(mixture_setup(m=3), chains(2), 2, workers=2, log_messages=True)
    path = tmp_path / "messages.csv"
    write_message_log(path, traj.messages)
    lines = path.read_text().splitlines()
    assert lines[0] == "direction,round,worker_id,kind,seq,payload"
    assert len(lines) == 1 + 2 * (2 + 2)
    assert lines[1].startswith("up,1,0,report,,")


def test_recording_thinning():
    traj = run_interacting(mixture_setup(), chains(2), 25, record_every=10, sample_every=5)
    assert traj.rounds == [10, 20, 25]
    assert traj.sample_rounds == [5, 10, 15, 20, 25]
    assert traj.samples[0].shape == (2, 1)
    assert traj.weights[0].shape == (2,) and np.all(traj.weights[0] > 0)


@pytest.mark.parametrize("mode", ["shared_memory", "channels"])
def test_callbacks_see_every_round_in_order(mode):
    seen, sunk = [], []
    run_interacting(mixture_setup(), chains(2), 15, workers=2, mode=mode,
                    on_round=lambda r, theta: seen.append(r),
                    sample_sink=lambda r, xs, bins, w: sunk.append((r, len(xs), bins.dtype)))
    assert seen == list(range(1, 16))
    assert [s[0] for s in sunk] == list(range(1, 16))
    assert all(n == 2 and dt == np.int64 for _, n, dt in sunk)


@pytest.mark.parametrize("kwargs", [dict(workers=3), dict(mode="sockets"), dict(comm_interval=0)])
def test_invalid_run_arguments(kwargs):
    with pytest.raises(InputError):
        run_interacting(mixture_setup(), chains(4), 10, **kwargs)


@pytest.mark.parametrize("mode", ["shared_memory", "channels"])
def test_crash_aborts_with_partial_trajectory(mode):
    calls = {"n": 0}
    base = gaussian_mixture_1d()

    def flaky(x):
        calls["n"] += 1
        if calls["n"] > 40:
            return math.nan, np.array([0.0])
        return base.energy_grad(x)

    setup = mixture_setup()
    setup.target = AnalyticTarget(dim=1, energy_kind="custom", energy_grad_fn=flaky)
    with pytest.raises(RunAborted) as err:
        run_interacting(setup, chains(2), 100, workers=2 if mode == "channels" else 1, mode=mode)
    traj = err.value.trajectory
    assert 0 < traj.completed_rounds < 100
    assert traj.final_theta is not None
    assert len(traj.thetas) == 0 or traj.rounds[-1] <= traj.completed_rounds
