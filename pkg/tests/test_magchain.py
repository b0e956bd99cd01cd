import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import binom

from cwmix.core import ModelParams, cutoff_center, s_star
from cwmix.magchain import (HittingTable, build_kernel, cheeger_cut, crossing_times, distance_profile,
                            drift_closed_form, drift_exact, evolve, expectation_contraction_margin,
                            hitting_time_table, level_above, level_below, log_cheeger_cut, log_stationary,
                            point_mass, stationary_dist, stationary_moments, t_mix_exact,
                            t_mix_worst_case, tv_distance)
from oracles import first_step_hitting, gibbs_plus_count_law, hitting_by_recursion

sizes = st.integers(2, 300)
betas = st.floats(0, 3)


def test_kernel_boundary_rows():
    k = build_kernel(ModelParams(30, 1.2))
    assert k.up[30] == 0.0 and k.down[0] == 0.0


def test_kernel_hand_value():
    k = build_kernel(ModelParams(4, 1.0))
    assert k.up[3] == pytest.approx(0.25 * (1 + math.tanh(0.75)) / 2, rel=1e-15)
    assert k.down[4] == pytest.approx((1 - math.tanh(0.75)) / 2, rel=1e-15)


@given(sizes, betas, st.booleans())
def test_kernel_rows_stochastic(n, beta, restricted):
    k = build_kernel(ModelParams(n, beta), restricted)
    assert np.all(k.up >= 0) and np.all(k.down >= 0) and np.all(k.stay >= -1e-15)
    assert np.allclose(k.up + k.down + k.stay, 1.0, atol=1e-15)
    assert k.down[0] == 0.0 and k.up[-1] == 0.0


@given(sizes, betas)
def test_kernel_symmetry_is_exact(n, beta):
    k = build_kernel(ModelParams(n, beta))
    assert np.array_equal(k.up, k.down[::-1])


def test_kernel_index_and_matrix():
    k = build_kernel(ModelParams(9, 0.7), restricted=True)
    assert k.lo == 5 and k.size == 5 and k.index(9) == 4
    with pytest.raises(ValueError):
        k.index(4)
    assert np.allclose(k.matrix().sum(axis=1), 1.0)


def test_stationary_infinite_temperature_is_binomial():
    pi = stationary_dist(build_kernel(ModelParams(40, 0.0)))
    assert np.allclose(pi, binom.pmf(np.arange(41), 40, 0.5), rtol=1e-12, atol=0)


@given(st.integers(2, 14), st.floats(0, 2.5))
def test_stationary_matches_configuration_sum(n, beta):
    pi = stationary_dist(build_kernel(ModelParams(n, beta)))
    assert np.allclose(pi, gibbs_plus_count_law(n, beta), rtol=1e-12, atol=0)


@given(sizes, betas)
def test_stationary_symmetric(n, beta):
    pi = stationary_dist(build_kernel(ModelParams(n, beta)))
    assert np.allclose(pi, pi[::-1], rtol=1e-12, atol=0)


def _balance_residual(k, pi):
    flow_up = pi[:-1] * k.up[:-1]
    flow_down = pi[1:] * k.down[1:]
    return np.abs(flow_up - flow_down).max(), max(flow_up.max(), flow_down.max())


def test_detailed_balance_example():
    k = build_kernel(ModelParams(200, 0.5))
    res, scale = _balance_residual(k, stationary_dist(k))
    assert res <= 1e-14 * scale


@given(sizes, betas)
def test_restricted_stationary_is_law_of_abs_magnetization(n, beta):
    full = stationary_dist(build_kernel(ModelParams(n, beta)))
    rk = build_kernel(ModelParams(n, beta), restricted=True)
    folded = np.zeros(rk.size)
    for k, p in enumerate(full):
        folded[rk.index(max(k, n - k))] += p
    assert np.allclose(stationary_dist(rk), folded, rtol=1e-11, atol=1e-300)
    res, scale = _balance_residual(rk, stationary_dist(rk))
    assert res <= 1e-12 * scale


def test_evolve_examples():
    k = build_kernel(ModelParams(4, 1.0))
    d = point_mass(k, 4)
    assert np.array_equal(evolve(k, d, 0), d)
    one = evolve(k, d, 1)
    assert one[:3].sum() == 0.0
    assert one[3] == pytest.approx(k.down[4], rel=1e-15) and one[4] == pytest.approx(k.stay[4], rel=1e-15)
    with pytest.raises(ValueError):
        evolve(k, d, -1)
    with pytest.raises(ValueError):
        evolve(k, d[:3], 1)


def test_evolve_fixed_point():
    k = build_kernel(ModelParams(150, 1.3))
    pi = stationary_dist(k)
    assert tv_distance(evolve(k, pi, 1000), pi) <= 1e-10


def test_evolve_matches_dense_matrix_power():
    k = build_kernel(ModelParams(25, 0.9), restricted=True)
    d = point_mass(k, 25)
    ref = d @ np.linalg.matrix_power(k.matrix(), 37)
    assert np.allclose(evolve(k, d, 37), ref, atol=1e-14)


def test_tv_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert tv_distance(p, p) == 0.0
    assert tv_distance([1, 0, 0], [0, 0, 1]) == 1.0
    with pytest.raises(ValueError):
        tv_distance([1, 0], [1, 0, 0])
    k = build_kernel(ModelParams(20, 0.5))
    pi = stationary_dist(k)
    assert tv_distance(point_mass(k, 7), pi) == pytest.approx(1 - pi[7], abs=1e-15)


def test_profile_examples():
    k = build_kernel(ModelParams(60, 0.8))
    pi = stationary_dist(k)
    prof = distance_profile(k, 60, range(0, 3000, 37))
    assert prof[0][1] == pytest.approx(1 - pi[60], abs=1e-15)
    ds = [d for _, d in prof]
    assert all(b <= a + 1e-10 for a, b in zip(ds, ds[1:]))
    with pytest.raises(ValueError):
        distance_profile(k, 60, [5, 3])
    with pytest.raises(ValueError):
        distance_profile(k, 60, [-1, 3])


def test_profile_cutoff_n400():
    params = ModelParams(400, 0.5)
    k = build_kernel(params)
    t_n = cutoff_center(params)
    (_, before), (_, after) = distance_profile(k, 400, [max(0, round(t_n - 10 * 400)), round(t_n + 10 * 400)])
    assert before >= 0.9 and after <= 0.1


def test_t_mix_examples():
    k = build_kernel(ModelParams(64, 0.0))
    assert t_mix_exact(k, eps=1.0) == 0
    t = t_mix_exact(k)
    ref = 0.5 * 64 * math.log(64)
    assert ref / 2 <= t <= 2 * ref
    with pytest.raises(ValueError):
        t_mix_exact(k, eps=0)


@pytest.mark.parametrize("n", [256, 512])
def test_t_mix_doubling_high_temperature(n):
    a = t_mix_exact(build_kernel(ModelParams(n, 0.5)))
    b = t_mix_exact(build_kernel(ModelParams(2 * n, 0.5)))
    assert 1.8 <= b / a <= 2.4


def test_t_mix_is_exact_first_crossing():
    k = build_kernel(ModelParams(50, 0.6))
    t = t_mix_exact(k)
    (_, d_before), (_, d_at) = distance_profile(k, 50, [t - 1, t])
    assert d_before > 0.25 >= d_at


@given(st.integers(2, 40), st.floats(0, 2), st.booleans())
def test_extreme_starts_are_worst(n, beta, restricted):
    k = build_kernel(ModelParams(n, beta), restricted)
    assert t_mix_exact(k) == t_mix_worst_case(k)


def test_crossing_times_ordered():
    k = build_kernel(ModelParams(100, 0.5))
    c = crossing_times(k, [0, 100], [0.1, 0.25, 0.75])
    assert c[0.75] <= c[0.25] <= c[0.1]
    assert c[0.25] == t_mix_exact(k)


def test_drift_examples():
    k = build_kernel(ModelParams(100, 0.7))
    assert drift_exact(k, 50) == 0.0
    params = ModelParams(100, 1.5)
    assert drift_exact(build_kernel(params), 90) == pytest.approx(drift_closed_form(params, 0.8), rel=1e-12, abs=1e-16)


@given(st.integers(2, 400), st.floats(0, 3), st.data())
def test_drift_closed_form(n, beta, data):
    k = data.draw(st.integers(0, n))
    params = ModelParams(n, beta)
    assert drift_exact(build_kernel(params), k) == pytest.approx(drift_closed_form(params, params.s_of(k)),
                                                                  rel=1e-10, abs=1e-15)


@given(st.integers(2, 400), st.floats(0, 1))
def test_drift_inequalities_high_temperature(n, beta):
    kern = build_kernel(ModelParams(n, beta))
    s = kern.s
    drift = 2.0 / n * (kern.up - kern.down)
    pos = s > 0
    tol = 1e-15
    assert np.all(drift[pos] <= (np.tanh(beta * s[pos]) - s[pos]) / n + tol)
    assert np.all((np.tanh(beta * s[pos]) - s[pos]) / n <= s[pos] * (beta - 1) / n + tol)


@given(st.integers(2, 120), st.floats(0, 2.5))
def test_expectation_contraction(n, beta):
    assert expectation_contraction_margin(build_kernel(ModelParams(n, beta))) >= -1e-15


def test_hitting_two_state():
    k = build_kernel(ModelParams(2, 0.8), restricted=True)
    assert k.size == 2
    table = hitting_time_table(k)
    assert table.expected_time(2) == pytest.approx(1.0 / k.up[0], rel=1e-14)


def test_hitting_matches_linear_solve():
    k = build_kernel(ModelParams(100, 1.5), restricted=True)
    table = hitting_time_table(k)
    for target in range(1, k.size):
        h = first_step_hitting(k.up, k.down, target)[0]
        assert table.cumulative[target] == pytest.approx(h, rel=1e-10)
        assert table.cumulative[target] == pytest.approx(hitting_by_recursion(k.up, k.down, target), rel=1e-12)


def test_hitting_table_shape_and_errors():
    params = ModelParams(51, 1.2)
    k = build_kernel(params, restricted=True)
    table = hitting_time_table(k, 40)
    assert isinstance(table, HittingTable)
    assert table.levels[0] == 26 and table.levels[-1] == 40 and table.step[0] == 0
    assert np.all(np.diff(table.cumulative) > 0)
    with pytest.raises(ValueError):
        table.expected_time(41)
    with pytest.raises(ValueError):
        hitting_time_table(build_kernel(params))


def test_levels():
    p = ModelParams(100, 1.5)
    assert level_above(p, 0.0) == 50 and level_below(p, 0.0) == 50
    assert level_above(p, 0.015) == 51 and level_below(p, 0.015) == 50
    s = s_star(1.5) + 0.1
    assert 2 * level_above(p, s) - 100 == math.ceil(100 * s)


def test_cheeger_infinite_temperature_exact():
    n = 64
    pi = [Fraction(math.comb(n, k), 2 ** n) for k in range(n + 1)]
    kb = n // 2 - 1
    up = Fraction(n - kb, n) / 2
    ref = pi[kb] * up / sum(pi[: kb + 1])
    assert cheeger_cut(ModelParams(n, 0.0)) == pytest.approx(float(ref), rel=1e-13)


def test_cheeger_decay_slope_stabilizes():
    lp = {n: log_cheeger_cut(ModelParams(n, 1.5)) for n in (200, 400, 800)}
    s1 = (lp[400] - lp[200]) / 200
    s2 = (lp[800] - lp[400]) / 400
    assert lp[800] < lp[400] < lp[200]
    assert abs(s2 - s1) <= 0.1 * abs(s2)


@given(st.integers(2, 500), st.floats(0, 3))
def test_cheeger_in_unit_interval(n, beta):
    phi = cheeger_cut(ModelParams(n, beta))
    assert 0 <= phi <= 1
    if n < 200:
        assert phi > 0


def test_stationary_moments():
    m = stationary_moments(ModelParams(100, 0.5))
    assert abs(m["mean"]) < 1e-15
    assert m["var"] * 100 == pytest.approx(2.0, rel=0.05)
    assert 0 < m["mean_abs"] < 1
    k = build_kernel(ModelParams(100, 0.5), restricted=True)
    assert np.exp(log_stationary(k)).sum() == pytest.approx(1.0, abs=1e-14)
