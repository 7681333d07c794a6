import itertools
import math

import mpmath
import numpy as np
import pytest
from conftest import naive_expected, random_mixed, random_table
from hypothesis import given, settings
from hypothesis import strategies as st

from cestrade.exceptions import InfeasibleError
from cestrade.participation import (
    CostTable,
    best_response_indicator,
    build_cost_table,
    check_epsilon_nash,
    eut_expected_cost,
    expectation_metrics,
    expected_cost,
    expected_revenue,
    fictitious_step,
    initial_profile,
    par,
    participant_baseline,
    prelec_weight,
    pt_expected_cost,
    pure_response_cost,
    run_dynamics,
)
from cestrade.scenario import PriceParams, Scenario, TimeGrid, UserProfile
from cestrade.stackelberg import solve_stackelberg
from cestrade.storage import BatteryParams


def one_player_table(costs):
    costs = np.asarray(costs, dtype=float)
    k = costs.size
    return CostTable(
        participant_ids=(1,),
        starts=[tuple(range(1, k + 1))],
        U=costs.reshape(k, 1),
        R=np.zeros(k),
        L=np.ones((k, 2)),
        PAR=np.ones(k),
    )


def pure(k, j):
    v = np.zeros(k)
    v[j] = 1.0
    return v


# --- cost table -------------------------------------------------------------------


def test_s1_table_entries(s1, s1_table):
    assert len(s1_table) == 4 and len(s1_table.entries()) == 4
    for h in itertools.product([1, 2], repeat=2):
        sol = solve_stackelberg(s1, h)
        e = s1_table[h]
        assert np.array_equal(e.U, sol.daily_costs)
        assert e.R == sol.revenue
        assert np.array_equal(e.L, sol.total_load)


def test_single_profile_table():
    sc = Scenario(
        TimeGrid(2),
        PriceParams(np.ones(2), np.full(2, 0.1)),
        (UserProfile(1, [1.0, 0.0], [0.0, 1.0], True, (1,)),),
        BatteryParams(capacity=10, q0=5),
    )
    table = build_cost_table(sc)
    assert len(table) == 1 and list(table.profiles()) == [(1,)]


def test_full_scale_table(default_table):
    assert default_table.shape == (3,) * 6
    assert len(default_table) == 729
    assert len(set(default_table.profiles())) == 729
    assert np.all(np.isfinite(default_table.U)) and not default_table.projected.any()


def test_parallel_matches_serial(s1, s1_table):
    par_table = build_cost_table(s1, workers=2)
    assert np.array_equal(par_table.U, s1_table.U) and np.array_equal(par_table.R, s1_table.R)


def test_failure_names_profile(s1, monkeypatch):
    import cestrade.participation as part

    real = part.solve_stackelberg

    def flaky(scenario, h, options=None):
        if tuple(h) == (2, 1):
            raise InfeasibleError("boom")
        return real(scenario, h, options)

    monkeypatch.setattr(part, "solve_stackelberg", flaky)
    with pytest.raises(InfeasibleError, match=r"h=\(2, 1\)"):
        build_cost_table(s1)


def test_missing_profile(s1_table):
    with pytest.raises(KeyError):
        s1_table[(1, 3)]


# --- Prelec weighting -------------------------------------------------------------


def test_prelec_examples():
    assert prelec_weight(0.3, 1.0) == 0.3
    assert prelec_weight(math.exp(-1), 0.37) == pytest.approx(math.exp(-1), abs=1e-15)
    assert prelec_weight(0.5, 0.5) == pytest.approx(math.exp(-math.sqrt(math.log(2))), abs=1e-15)
    oracle = mpmath.exp(-mpmath.sqrt(mpmath.log(2)))
    assert prelec_weight(0.5, 0.5) == pytest.approx(float(oracle), abs=1e-15)
    assert round(prelec_weight(0.5, 0.5), 5) == 0.43494
    assert prelec_weight(0.0, 0.4) == 0.0 and prelec_weight(1.0, 0.4) == 1.0


@pytest.mark.parametrize("y, alpha", [(-0.1, 0.5), (1.1, 0.5), (0.5, 0.0), (0.5, 1.2)])
def test_prelec_domain(y, alpha):
    with pytest.raises(ValueError):
        prelec_weight(y, alpha)


@given(st.floats(0, 1), st.floats(0.01, 1))
def test_prelec_range(y, alpha):
    w = prelec_weight(y, alpha)
    assert 0.0 <= w <= 1.0


# --- expectations ------------------------------------------------------------------


def test_eut_pure(s1_table):
    for h in s1_table.profiles():
        idx = s1_table.index(h)
        y = [pure(2, j) for j in idx]
        for n in range(2):
            assert eut_expected_cost(n, y, s1_table) == s1_table[h].U[n]


def test_eut_uniform_s1(s1_table):
    y = [np.full(2, 0.5)] * 2
    for n in range(2):
        mean = np.mean([s1_table[h].U[n] for h in s1_table.profiles()])
        assert eut_expected_cost(n, y, s1_table) == pytest.approx(mean, abs=1e-12)


def test_eut_affine_in_own(s1_table):
    rng = np.random.default_rng(3)
    y = random_mixed(rng, (2, 2))
    a, b = pure(2, 0), pure(2, 1)
    ea = eut_expected_cost(0, [a, y[1]], s1_table)
    eb = eut_expected_cost(0, [b, y[1]], s1_table)
    t = 0.37
    assert eut_expected_cost(0, [t * a + (1 - t) * b, y[1]], s1_table) == pytest.approx(t * ea + (1 - t) * eb)


def test_pt_alpha_one(s1_table):
    rng = np.random.default_rng(4)
    y = random_mixed(rng, (2, 2))
    for n in range(2):
        assert abs(pt_expected_cost(n, y, s1_table, 1.0) - eut_expected_cost(n, y, s1_table)) <= 1e-12


def test_pt_pure_opponents(s1_table):
    y = [np.array([0.3, 0.7]), pure(2, 1)]
    assert pt_expected_cost(0, y, s1_table, 0.2) == pytest.approx(eut_expected_cost(0, y, s1_table), abs=1e-12)


def test_pt_s1_uniform_half(s1_table):
    # own probability 1/2 unweighted, opponent's 1/2 weighted to w = exp(-sqrt(ln 2))
    w = math.exp(-math.sqrt(math.log(2)))
    y = [np.full(2, 0.5)] * 2
    U = {h: s1_table[h].U for h in s1_table.profiles()}
    expected0 = sum(0.5 * w * U[h][0] for h in U)
    expected1 = sum(0.5 * w * U[h][1] for h in U)
    assert pt_expected_cost(0, y, s1_table, 0.5) == pytest.approx(expected0, abs=1e-12)
    assert pt_expected_cost(1, y, s1_table, 0.5) == pytest.approx(expected1, abs=1e-12)
    # pure response for user 1 at h_1 = 1
    assert pure_response_cost(0, 1, y, s1_table, "pt", 0.5) == pytest.approx(
        w * (U[(1, 1)][0] + U[(1, 2)][0]), abs=1e-12
    )


def test_pure_response_lookup(s1_table):
    y = [np.full(2, 0.5), pure(2, 0)]
    assert pure_response_cost(0, 2, y, s1_table) == s1_table[(2, 1)].U[0]
    assert pure_response_cost(0, 1, y, s1_table) == eut_expected_cost(0, [pure(2, 0), y[1]], s1_table)


def test_expected_cost_dispatch(s1_table):
    y = [np.array([0.2, 0.8]), np.array([0.6, 0.4])]
    assert expected_cost(1, y, s1_table) == eut_expected_cost(1, y, s1_table)
    assert expected_cost(1, y, s1_table, "pt", 0.4) == pt_expected_cost(1, y, s1_table, 0.4)
    with pytest.raises(ValueError):
        pure_response_cost(0, 1, y, s1_table, "bogus")


@pytest.mark.parametrize("shape", [(2, 2), (3, 3, 3), (3, 3, 3, 3), (2, 3, 1, 2)])
def test_enumeration_oracle(shape):
    rng = np.random.default_rng(len(shape))
    table = random_table(rng, shape)
    alphas = rng.uniform(0.1, 1.0, len(shape))
    for _ in range(5):
        y = random_mixed(rng, shape)
        for n in range(len(shape)):
            e = naive_expected(table.U[..., n], y, lambda r, p: p)
            assert eut_expected_cost(n, y, table) == pytest.approx(e, abs=1e-10)
            pt = naive_expected(
                table.U[..., n], y, lambda r, p, n=n: p if r == n else math.exp(-((-math.log(p)) ** alphas[n]))
            )
            assert pt_expected_cost(n, y, table, alphas) == pytest.approx(pt, abs=1e-10)
        assert expected_revenue(y, table) == pytest.approx(naive_expected(table.R, y, lambda r, p: p), abs=1e-10)


# --- best response and dynamics ---------------------------------------------------


def test_best_response_dominant():
    assert best_response_indicator(0, [np.full(3, 1 / 3)], one_player_table([3, 1, 2])).tolist() == [0, 1, 0]


def test_best_response_tie_earliest():
    assert best_response_indicator(0, [np.full(3, 1 / 3)], one_player_table([1, 1, 2])).tolist() == [1, 0, 0]


def test_best_response_s1_uniform(s1_table):
    y = [np.full(2, 0.5)] * 2
    for n in range(2):
        costs = [pure_response_cost(n, h, y, s1_table) for h in (1, 2)]
        assert best_response_indicator(n, y, s1_table).tolist() == pure(2, int(np.argmin(costs))).tolist()


def test_fictitious_step_example():
    table = one_player_table([0.0, 1.0, 2.0])
    y = fictitious_step([np.array([0.3, 0.3, 0.4])], 1, 0.7, table)
    assert y[0] == pytest.approx([0.79, 0.09, 0.12], abs=1e-15)


def test_fictitious_step_fixed_point():
    table = one_player_table([0.0, 1.0, 2.0])
    assert fictitious_step([pure(3, 0)], 5, 0.7, table)[0].tolist() == [1.0, 0.0, 0.0]


def test_fictitious_step_arguments():
    table = one_player_table([0.0, 1.0])
    with pytest.raises(ValueError):
        fictitious_step([np.full(2, 0.5)], 0, 0.7, table)
    with pytest.raises(ValueError):
        fictitious_step([np.full(2, 0.5)], 1, 1.0, table)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 500), st.floats(0.05, 0.95))
def test_step_bound_and_simplex(seed, i, eta):
    rng = np.random.default_rng(seed)
    table = random_table(rng, (3, 2, 3))
    y = random_mixed(rng, table.shape)
    new = fictitious_step(y, i, eta, table, "pt", 0.5)
    for a, b in zip(y, new):
        assert np.abs(b - a).max() <= eta / i + 1e-15
        assert np.all(b >= 0) and abs(b.sum() - 1) <= 1e-12


def test_single_user_dynamics():
    y, trace = run_dynamics(one_player_table([2.0, 0.5, 1.0]), y0=[0.3, 0.3, 0.4])
    assert int(np.argmax(y[0])) == 1
    assert trace.converged_at is not None


def test_dynamics_s1_eut(s1_table):
    y, trace = run_dynamics(s1_table, "eut", y0=[0.5, 0.5], eps=1e-3)
    ok, worst = check_epsilon_nash(y, s1_table, "eut", eps=1e-3)
    assert ok and worst == trace.epsilon_achieved and trace.converged_at is not None
    for it in trace.iterates:
        for v in it:
            assert np.all(v >= 0) and abs(v.sum() - 1) <= 1e-12


def test_dynamics_pt_alpha_one_identical(s1_table):
    _, a = run_dynamics(s1_table, "eut", max_iter=300)
    _, b = run_dynamics(s1_table, "pt", 1.0, max_iter=300)
    assert len(a.iterates) == len(b.iterates)
    for ya, yb in zip(a.iterates, b.iterates):
        assert all(np.array_equal(u, v) for u, v in zip(ya, yb))


def test_dynamics_reports_best_when_not_converged(s1_table):
    y, trace = run_dynamics(s1_table, max_iter=3, eps=1e-12)
    assert trace.converged_at is None
    assert trace.epsilon_achieved == min(trace.deviations)
    assert all(np.array_equal(u, v) for u, v in zip(y, trace.iterates[trace.best_iteration]))


def test_epsilon_check_examples(s1_table):
    # pure profile at each user's best response
    table = one_player_table([2.0, 0.5])
    assert check_epsilon_nash([pure(2, 1)], table) == (True, 0.0)
    ok, worst = check_epsilon_nash([np.full(2, 0.5)], table)
    assert not ok and worst == pytest.approx(0.75)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vertex_deviation_sufficient(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng, (3, 3, 2))
    y = random_mixed(rng, table.shape)
    for n in range(3):
        vertex_best = min(
            eut_expected_cost(n, [pure(table.shape[n], j) if r == n else v for r, v in enumerate(y)], table)
            for j in range(table.shape[n])
        )
        for _ in range(100):
            dev = rng.dirichlet(np.ones(table.shape[n]))
            val = eut_expected_cost(n, [dev if r == n else v for r, v in enumerate(y)], table)
            assert val >= vertex_best - 1e-12


def test_initial_profile_validation(s1_table):
    assert [v.tolist() for v in initial_profile(s1_table)] == [[0.5, 0.5]] * 2
    with pytest.raises(ValueError):
        initial_profile(s1_table, [0.7, 0.7])
    per_user = initial_profile(s1_table, [[1.0, 0.0], [0.0, 1.0]])
    assert per_user[1].tolist() == [0.0, 1.0]


# --- revenue and metrics ----------------------------------------------------------


def test_expected_revenue_examples(s1_table):
    assert expected_revenue([pure(2, 0), pure(2, 1)], s1_table) == s1_table[(1, 2)].R
    uniform = [np.full(2, 0.5)] * 2
    assert expected_revenue(uniform, s1_table) == pytest.approx(np.mean(s1_table.R))
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = expected_revenue(random_mixed(rng, (2, 2)), s1_table)
        assert s1_table.R.min() - 1e-12 <= w <= s1_table.R.max() + 1e-12


def test_par():
    assert par([2.0, 2.0, 2.0]) == 1.0
    assert par([1.0, 3.0]) == 1.5
    assert math.isnan(par([1.0, -1.0]))


def test_metrics_no_change():
    table = one_player_table([4.0, 4.0])
    m = expectation_metrics([np.full(2, 0.5)], table, ([4.0], np.ones(2)))
    assert m.savings_pct == [0.0] and m.expected_par == 1.0 and m.par_reduction_pct == 0.0


def test_metrics_s1(s1, s1_table):
    # baseline costs (4, 6); equilibrium of S1 is both users starting at slot 2
    base = participant_baseline(s1)
    assert base[0].tolist() == [4.0, 6.0]
    m = expectation_metrics([pure(2, 1), pure(2, 1)], s1_table, base)
    assert m.expected_costs == pytest.approx([2.0, 4.0])
    assert m.savings_pct == pytest.approx([50.0, 100 / 3])
    assert m.expected_revenue == pytest.approx(2.0)
    assert m.mean_savings_pct == pytest.approx((50 + 100 / 3) / 2)


def test_metrics_nonpositive_baseline():
    table = one_player_table([1.0])
    m = expectation_metrics([np.ones(1)], table, ([-2.0], np.ones(2)))
    assert m.savings_pct == [None] and m.savings_abs[0] == -3.0 and m.mean_savings_pct is None
