import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from icsgld.contour import ContourParams, Partition
from icsgld.errors import InputError
from icsgld.metrics import (GridSpec, TrialResult, empirical_grid, fixed_point_from_masses, fixed_point_oracle,
                            kl_divergence, lattice_modes, mean_field_oracle, mode_coverage, theta_error,
                            trial_stats, truth_grid)
from icsgld.targets import AnalyticTarget, gaussian_mixture_1d, multimodal25

MIX_PART = Partition.uniform(3.0, 1.0, 20)

# Normalised (bin mass)^(1/zeta) for 0.4 N(-6,1) + 0.6 N(4,1) with cuts 3, 4, ..., 21.
# Computed independently with scipy: brentq level crossings of U, then adaptive
# quad of the density between them.
THETA_STAR_09 = [9.2940645035e-01, 5.2132447859e-02, 1.3275797694e-02, 3.6745146123e-03, 1.0605310651e-03,
                 3.1397073202e-04, 9.4557743046e-05, 2.8832578493e-05, 8.8775902295e-06, 2.7638817521e-06,
                 8.9854714122e-07, 3.0009937399e-07, 3.9149829377e-08, 1.2359263304e-08, 3.9131984952e-09,
                 1.2421673649e-09, 3.9518520274e-10, 1.2597394752e-10, 4.0227779621e-11, 2.1094274448e-11]
THETA_STAR_2 = [6.1823835347e-01, 1.6910717698e-01, 9.1377793786e-02, 5.1262924327e-02, 2.9305485064e-02,
                1.6945855985e-02, 9.8747720856e-03, 5.7864333359e-03, 3.4056199362e-03, 2.0144066343e-03,
                1.2149454440e-03, 7.4170751104e-04, 2.9661412585e-04, 1.7654688116e-04, 1.0522107434e-04,
                6.2783343257e-05, 3.7499345717e-05, 2.2417631145e-05, 1.3412202898e-05, 1.0030843466e-05]


@st.composite
def prob_vectors(draw, n):
    raw = np.asarray(draw(st.lists(st.floats(1e-6, 1.0), min_size=n, max_size=n)))
    return raw / raw.sum()


# grids


def test_uniform_energy_gives_uniform_cells():
    flat = AnalyticTarget(dim=2, energy_kind="custom", energy_grad_fn=lambda x: (0.0, np.zeros(2)))
    p = truth_grid(flat, GridSpec((-1, -1), (1, 1), (4, 5)))
    np.testing.assert_allclose(p, np.full(20, 1 / 20), rtol=1e-14)


def test_truth_grid_symmetric_for_lattice():
    p = truth_grid(multimodal25(), GridSpec((-5.5, -5.5), (5.5, 5.5), (100, 100))).reshape(100, 100)
    np.testing.assert_allclose(p, p.T, rtol=1e-12)


def test_two_cell_standard_normal():
    normal = AnalyticTarget(dim=1, energy_kind="custom", energy_grad_fn=lambda x: (0.5 * x[0] ** 2, x))
    np.testing.assert_allclose(truth_grid(normal, GridSpec((-3,), (3,), (2,))), [0.5, 0.5], rtol=1e-14)


def test_truth_grid_zero_mass():
    empty = AnalyticTarget(dim=1, energy_kind="custom", energy_grad_fn=lambda x: (math.inf, np.zeros(1)))
    with pytest.raises(InputError):
        truth_grid(empty, GridSpec((0,), (1,), (3,)))


@pytest.mark.parametrize("kwargs", [dict(lower=(0,), upper=(0,), cells=(3,)), dict(lower=(0,), upper=(1,), cells=(1,)),
                                    dict(lower=(0, 0), upper=(1,), cells=(3,))])
def test_grid_validation(kwargs):
    with pytest.raises(InputError):
        GridSpec(**kwargs)


def test_single_sample_indicator():
    grid = GridSpec((0,), (4,), (4,), smoothing=0.0)
    np.testing.assert_array_equal(empirical_grid([[2.5]], grid), [0, 0, 1, 0])


def test_heavy_smoothing_is_uniform():
    grid = GridSpec((0,), (4,), (4,), smoothing=1e12)
    np.testing.assert_allclose(empirical_grid([[2.5]], grid), np.full(4, 0.25), rtol=1e-11)


def test_samples_outside_grid_ignored():
    grid = GridSpec((0,), (2,), (2,), smoothing=0.0)
    np.testing.assert_array_equal(empirical_grid([[0.5], [7.0], [-1.0]], grid), [1.0, 0.0])


def test_weighted_histogram_normalised():
    grid = GridSpec((0,), (2,), (2,), smoothing=0.0)
    np.testing.assert_allclose(empirical_grid([[0.5], [1.5]], grid, weights=[1.0, 3.0]), [0.25, 0.75])


def test_multinomial_draws_close_to_truth(rng):
    grid = GridSpec((-5.5, -5.5), (5.5, 5.5), (100, 100))
    p = truth_grid(multimodal25(), grid)
    cells = rng.choice(p.size, size=1_000_000, p=p)
    pts = grid.centers()[cells]
    assert theta_error(empirical_grid(pts, grid), p) < 0.02


# kl and tv


def test_kl_identity_and_half():
    p = np.array([0.2, 0.3, 0.5])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.6931, abs=1e-4)


def test_kl_missing_support_is_infinite():
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


@given(prob_vectors(6), prob_vectors(6))
def test_kl_non_negative(p, q):
    assert kl_divergence(p, q) >= 0.0


def test_kl_non_negative_many_random_pairs(rng):
    pairs = rng.dirichlet(np.ones(8), size=(1000, 2))
    assert min(kl_divergence(a, b) for a, b in pairs) >= 0.0


def test_theta_error_examples():
    a = np.array([0.1, 0.9])
    assert theta_error(a, a) == 0.0
    assert theta_error([1, 0, 0], [0, 0, 1]) == 1.0


@given(prob_vectors(5), prob_vectors(5))
def test_theta_error_symmetric(a, b):
    assert theta_error(a, b) == theta_error(b, a)


# fixed point and mean field


def test_fixed_point_identity_case():
    np.testing.assert_allclose(fixed_point_from_masses([0.25, 0.75], 1.0), [0.25, 0.75], rtol=1e-14)


def test_fixed_point_square_root_case():
    out = fixed_point_from_masses([0.25, 0.75], 2.0)
    np.testing.assert_allclose(out, [0.36603, 0.63397], atol=1e-5)


def test_fixed_point_large_zeta_flattens_to_support():
    out = fixed_point_from_masses([0.1, 0.0, 0.9], 1e9)
    np.testing.assert_allclose(out, [0.5, 0.0, 0.5], atol=1e-8)


@given(prob_vectors(6), st.floats(0.2, 5.0), st.floats(1.01, 3.0))
def test_larger_zeta_closer_to_uniform(masses, zeta, factor):
    uniform = np.full(6, 1 / 6)
    near = theta_error(fixed_point_from_masses(masses, zeta * factor), uniform)
    far = theta_error(fixed_point_from_masses(masses, zeta), uniform)
    assert near <= far + 1e-12


@pytest.mark.parametrize("zeta,expected", [(0.9, THETA_STAR_09), (2.0, THETA_STAR_2)])
def test_quadrature_fixed_point_matches_independent_oracle(zeta, expected):
    fp = fixed_point_oracle(gaussian_mixture_1d(), MIX_PART, zeta)
    assert not fp.truncated
    assert abs(fp.theta_star.sum() - 1) < 1e-12
    assert theta_error(fp.theta_star, expected) < 1e-4
    np.testing.assert_allclose(fp.theta_star, expected, rtol=2e-3)


def test_fixed_point_oracle_flags_truncation():
    with pytest.warns(RuntimeWarning):
        fp = fixed_point_oracle(gaussian_mixture_1d(), MIX_PART, 0.9, bounds=((-5.0,), (5.0,)), nodes=20_001)
    assert fp.truncated


def test_lattice_fixed_point_covers_mass():
    fp = fixed_point_oracle(multimodal25(), Partition.uniform(-3.875, 0.125, 100), 0.75, nodes=250_000)
    assert not fp.truncated and fp.coverage > 1 - 1e-6


def test_fixed_point_oracle_rejects_high_dimension():
    with pytest.raises(InputError):
        fixed_point_oracle(AnalyticTarget(dim=3, energy_kind="custom", energy_grad_fn=lambda x: (0, x)),
                           MIX_PART, 1.0)


@pytest.mark.parametrize("zeta", [0.9, 2.0])
def test_mean_field_vanishes_at_fixed_point(zeta):
    params = ContourParams(zeta=zeta)
    fp = fixed_point_oracle(gaussian_mixture_1d(), MIX_PART, zeta)
    h = mean_field_oracle(gaussian_mixture_1d(), MIX_PART, params, fp.theta_star, oracle=fp)
    assert np.abs(h).max() < 1e-3


@pytest.mark.parametrize("variant", ["new", "original"])
def test_mean_field_sums_to_zero(variant, rng):
    params = ContourParams(zeta=1.5, field_variant=variant)
    fp = fixed_point_oracle(gaussian_mixture_1d(), MIX_PART, 1.5)
    theta = rng.dirichlet(np.ones(20)) + 1e-6
    theta /= theta.sum()
    assert abs(mean_field_oracle(gaussian_mixture_1d(), MIX_PART, params, theta, oracle=fp).sum()) < 1e-12


def test_mean_field_points_back_toward_fixed_point(rng):
    params = ContourParams(zeta=0.9)
    fp = fixed_point_oracle(gaussian_mixture_1d(), MIX_PART, 0.9)
    star = fp.theta_star
    for _ in range(20):
        d = rng.standard_normal(20)
        d -= d.mean()
        d *= rng.uniform(0.001, 0.05) / (0.5 * np.abs(d).sum())
        theta = np.clip(star + d, 1e-12, None)
        theta /= theta.sum()
        h = mean_field_oracle(gaussian_mixture_1d(), MIX_PART, params, theta, oracle=fp)
        assert h @ (theta - star) < 0


def test_mean_field_rejects_bad_theta():
    fp = fixed_point_oracle(gaussian_mixture_1d(), MIX_PART, 0.9)
    with pytest.raises(InputError):
        mean_field_oracle(gaussian_mixture_1d(), MIX_PART, ContourParams(0.9), np.zeros(20), oracle=fp)


# trial bookkeeping


def result(values, seed=0):
    return TrialResult("icsgld", seed, np.arange(1, len(values) + 1), {"kl": np.asarray(values, dtype=float)})


def test_trial_stats_examples():
    mean, err = trial_stats([result([3.0, 1.0])], "kl")
    np.testing.assert_array_equal(err, [0.0, 0.0])
    mean, err = trial_stats([result([2.0]), result([2.0])], "kl")
    assert err[0] == 0.0
    mean, err = trial_stats([result([0.0]), result([2.0])], "kl")
    assert mean[0] == 1.0 and err[0] == pytest.approx(1.0, abs=1e-15)


def test_trial_series_must_increase():
    with pytest.raises(InputError):
        TrialResult("sgld", 0, [1, 3, 2])


def test_mode_coverage_examples():
    modes = lattice_modes()
    assert modes.shape == (25, 2)
    assert mode_coverage(np.empty((0, 2)), modes, 0.35) == 0
    assert mode_coverage(modes, modes, 0.35) == 25
    assert mode_coverage(modes[:3] + 1e-9, modes, 0.0) == 0
    assert mode_coverage(modes[:3], modes, 0.0) == 3
