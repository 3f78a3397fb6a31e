"""End-to-end acceptance criteria, each at its stated tolerance and time limit.

Every test prints a ``CRITERION n: PASS|FAIL`` line; the lines are repeated
in the terminal summary.  Run just this file with ``pytest -m acceptance``.
"""

import time

import numpy as np
import pytest

from icsgld.contour import ContourParams, Partition, Theta, random_field_new, random_field_original, sa_update
from icsgld.harness import preset, run_experiment
from icsgld.interaction import ContourSetup, check_wire_log, run_interacting
from icsgld.metrics import fixed_point_oracle, lattice_modes, mean_field_oracle, mode_coverage, theta_error
from icsgld.samplers import LearningRateSchedule, StepSizeSchedule, make_chains
from icsgld.targets import (TargetNoise, VRState, gaussian_mixture_1d, quadratic, set_anchor, synthesize_dataset,
                            vr_energy)

pytestmark = pytest.mark.acceptance


def test_criterion_1_simplex_and_field_invariants(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    m = 50
    theta = Theta.uniform(m)
    worst_sum, worst_floor = 0.0, np.inf
    for _ in range(100_000):
        idx = rng.integers(1, m + 1, size=rng.integers(1, 11))
        theta = sa_update(theta, idx, rng.uniform(0.0, 0.9))
        worst_sum = max(worst_sum, abs(theta.weights.sum() - 1.0))
        worst_floor = min(worst_floor, theta.weights.min() - theta.floor)
    zero_sum, degenerate = 0.0, True
    for _ in range(2000):
        th = Theta(rng.dirichlet(np.full(m, 0.3)) * (1 - m * 1e-10) + 1e-10)
        j = int(rng.integers(1, m + 1))
        zeta = float(rng.uniform(0.1, 10.0))
        zero_sum = max(zero_sum, abs(random_field_new(th, j).sum()),
                       abs(random_field_original(th, ContourParams(zeta=zeta), j).sum()))
        degenerate &= np.array_equal(random_field_original(th, ContourParams(zeta=1.0), j), random_field_new(th, j))
    elapsed = time.perf_counter() - start
    ok = worst_sum < 1e-9 and worst_floor >= 0 and zero_sum < 1e-12 and degenerate and elapsed < 5
    verdict(1, ok, f"max|sum-1|={worst_sum:.2e} min(theta-floor)={worst_floor:.2e} "
                   f"max|field sum|={zero_sum:.2e} degenerate={degenerate} clamps={theta.clamp_events} "
                   f"time={elapsed:.1f}s")
    assert ok


def test_criterion_2_fixed_point_recovery(tmp_path, verdict):
    start = time.perf_counter()
    cfg = preset("d5_mixture", scale=0.1).with_overrides(repeats=1)
    report = run_experiment(cfg, tmp_path, figures=False)
    res = report.results[0]
    tv = theta_error(res.final_theta, report.outputs[0].theta_star)
    elapsed = time.perf_counter() - start
    ok = res.error is None and tv < 0.05 and elapsed < 60
    verdict(2, ok, f"TV(final theta, theta_star)={tv:.4f} (< 0.05) rounds={cfg.rounds} "
                   f"chains={cfg.algorithm.chains} time={elapsed:.1f}s")
    assert ok


def test_criterion_3_interaction_variance_reduction(tmp_path, verdict):
    start = time.perf_counter()
    runs = {}
    for algorithm in ("icsgld", "csgld"):
        cfg = preset("d5_mixture", scale=0.1, algorithm=algorithm).with_overrides(repeats=10)
        report = run_experiment(cfg, tmp_path / algorithm, figures=False)
        assert not report.aborted
        runs[algorithm] = np.array([r.final_theta for r in report.results])
    spread = {k: float(v.std(axis=0, ddof=1).mean()) for k, v in runs.items()}
    ratio = spread["icsgld"] / spread["csgld"]
    elapsed = time.perf_counter() - start
    ok = ratio < 0.8 and elapsed < 15 * 60
    verdict(3, ok, f"mean per-bin std icsgld={spread['icsgld']:.3e} csgld={spread['csgld']:.3e} "
                   f"ratio={ratio:.3f} (< 0.8) time={elapsed:.0f}s")
    assert ok


def test_criterion_4_multimodal_exploration(tmp_path, verdict):
    start = time.perf_counter()
    reports = {}
    for algorithm in ("icsgld", "sgld"):
        cfg = preset("d2_multimodal", scale=0.25, algorithm=algorithm)
        # a visit is any sample in the ball, so keep every round rather than a thinned dump
        cfg = cfg.with_overrides(repeats=5, record={**cfg.record.model_dump(), "sample_stride": 1})
        reports[algorithm] = run_experiment(cfg, tmp_path / algorithm, figures=False)
        assert not reports[algorithm].aborted
    ic = reports["icsgld"]
    coverage = [mode_coverage(o.dump[:, 2:4], lattice_modes(), 0.35) for o in ic.outputs]
    kl_ic = np.mean([r.series["kl"][-1] for r in ic.results])
    kl_sgld = np.mean([r.series["kl"][-1] for r in reports["sgld"].results])
    reduction = 1 - kl_ic / kl_sgld
    mean_series = np.mean([r.series["kl"] for r in ic.results], axis=0)
    early_round = ic.results[0].rounds[0]
    decreasing = mean_series[-1] < mean_series[0]
    elapsed = time.perf_counter() - start
    ok = min(coverage) == 25 and reduction >= 0.2 and decreasing and early_round == ic.config.rounds // 10 \
        and elapsed < 600
    verdict(4, ok, f"(a) modes visited per trial={coverage} (b) KL icsgld={kl_ic:.4f} sgld={kl_sgld:.4f} "
                   f"reduction={reduction:.1%} (>= 20%) (c) KL at round {early_round}={mean_series[0]:.4f} "
                   f"> final={mean_series[-1]:.4f} time={elapsed:.0f}s")
    assert ok


def test_criterion_5_stability_inner_product(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    target = gaussian_mixture_1d()
    part = Partition.uniform(3.0, 1.0, 20)
    worst = -np.inf
    for zeta in (0.9, 2.0):
        params = ContourParams(zeta=zeta)
        fp = fixed_point_oracle(target, part, zeta)
        star = fp.theta_star
        for _ in range(100):
            q = rng.dirichlet(np.ones(part.m))
            # move toward a random simplex point so theta stays positive; TV = t * TV(q, star)
            t = rng.uniform(0.0, 0.05) / theta_error(q, star)
            theta = (1 - t) * star + t * q
            assert theta_error(theta, star) <= 0.05 + 1e-12
            h = mean_field_oracle(target, part, params, theta, oracle=fp)
            worst = max(worst, float(h @ (theta - star)))
    elapsed = time.perf_counter() - start
    ok = worst < 0 and elapsed < 30
    verdict(5, ok, f"max <h(theta), theta - theta_star> over 200 perturbations={worst:.3e} (< 0) "
                   f"time={elapsed:.1f}s")
    assert ok


def test_criterion_6_variance_reduced_energy(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    target = synthesize_dataset(N=1000, n=100, seed=6)
    anchor = np.array([0.5])
    vr = set_anchor(VRState(100), anchor, target)
    exact = all(vr_energy(target, vr, anchor, target.draw_batch(rng)) == vr.anchor_full_energy
                for _ in range(10_000))
    exact &= vr.anchor_full_energy == pytest.approx(target.energy(anchor), rel=1e-12)
    ratios = []
    for offset in (0.1, -0.1, 0.05):
        x = anchor + offset
        batches = [target.draw_batch(rng) for _ in range(10_000)]
        plain = np.var([target.batch_estimates(x, b)[0] for b in batches])
        reduced = np.var([vr_energy(target, vr, x, b) for b in batches])
        ratios.append(reduced / plain)
    elapsed = time.perf_counter() - start
    ok = exact and max(ratios) < 0.1 and elapsed < 10
    verdict(6, ok, f"exact at anchor for 10^4 batches={exact} variance ratios at |x-anchor|<=0.1="
                   f"{[round(r, 4) for r in ratios]} (< 0.1) time={elapsed:.1f}s")
    assert ok


def test_criterion_7_protocol_equivalence(verdict):
    start = time.perf_counter()
    setup = ContourSetup(target=gaussian_mixture_1d(), partition=Partition.uniform(3.0, 1.0, 20),
                         params=ContourParams(zeta=0.9), lr=LearningRateSchedule(epsilon0=0.01),
                         sa=StepSizeSchedule(3e-3, 0.6, 100))
    identical, clean = True, True
    for workers in (1, 2, 4):
        a = run_interacting(setup, make_chains(np.zeros((4, 1)), 70), 1000, workers=workers)
        b = run_interacting(setup, make_chains(np.zeros((4, 1)), 70), 1000, workers=workers, mode="channels",
                            log_messages=True)
        identical &= np.array_equal(a.theta_array(), b.theta_array())
        identical &= np.array_equal(np.array(a.samples), np.array(b.samples))
        identical &= np.array_equal(a.final_positions, b.final_positions)
        try:
            check_wire_log(b.messages, setup.partition.m)
        except AssertionError:
            clean = False
    elapsed = time.perf_counter() - start
    ok = identical and clean and elapsed < 10
    verdict(7, ok, f"bit-identical for W in (1, 2, 4)={identical} wire log indices/theta only={clean} "
                   f"time={elapsed:.1f}s")
    assert ok


def test_criterion_8_large_zeta_contrast(verdict):
    start = time.perf_counter()
    # energies near 5000 with estimator noise of 1000: observed energies span thousands of units
    target = quadratic(1, offset=5000.0, noise=TargetNoise(energy_std=1000.0))
    part = Partition.uniform(0.0, 1000.0, 10)
    moved = {}
    for variant in ("original", "new"):
        setup = ContourSetup(target=target, partition=part, params=ContourParams(zeta=1e4, field_variant=variant),
                             lr=LearningRateSchedule(epsilon0=1e-4), sa=StepSizeSchedule(0.01, 0.6, 100))
        traj = run_interacting(setup, make_chains(np.zeros((1, 1)), 8), 10_000, record_every=1000)
        theta0 = setup.initial_theta().weights
        moved[variant] = (float(np.linalg.norm(traj.final_theta.weights - theta0)),
                          theta_error(traj.final_theta.weights, theta0))
    elapsed = time.perf_counter() - start
    ok = moved["original"][0] < 1e-8 and moved["new"][1] > 0.1 and elapsed < 30
    verdict(8, ok, f"original |theta_k - theta_0|={moved['original'][0]:.2e} (< 1e-8) "
                   f"new TV(theta_k, theta_0)={moved['new'][1]:.3f} (> 0.1) time={elapsed:.1f}s")
    assert ok
