import numpy as np
import pytest
from scipy.optimize import minimize

from cestrade.exceptions import InfeasibleError
from cestrade.qp import solve_qp


def random_qp(rng, n, m_in, m_eq):
    M = rng.normal(size=(n, n))
    G = M @ M.T + n * np.eye(n)
    c = rng.normal(size=n)
    x_feas = rng.normal(size=n)
    A_in = rng.normal(size=(m_in, n))
    b_in = A_in @ x_feas - rng.uniform(0, 1, m_in)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ x_feas
    return G, c, A_eq, b_eq, A_in, b_in


def test_unconstrained():
    res = solve_qp(np.array([2.0, 4.0]), np.array([-2.0, -4.0]))
    assert np.allclose(res.x, [1.0, 1.0])
    assert res.value == pytest.approx(-3.0)


def test_single_bound_active():
    # min (x-1)^2 s.t. x >= 2
    res = solve_qp(np.array([2.0]), np.array([-2.0]), A_in=[[1.0]], b_in=[2.0])
    assert res.x[0] == pytest.approx(2.0)
    assert res.in_multipliers[0] == pytest.approx(2.0)
    assert res.active == [0]


def test_equality():
    # min x^2 + y^2 s.t. x + y = 2
    res = solve_qp(np.ones(2) * 2, np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[2.0])
    assert np.allclose(res.x, [1.0, 1.0])
    assert res.eq_multipliers[0] == pytest.approx(2.0)


def test_infeasible():
    with pytest.raises(InfeasibleError):
        solve_qp(np.ones(1), np.zeros(1), A_in=[[1.0], [-1.0]], b_in=[1.0, 0.0])


@pytest.mark.parametrize("seed", range(40))
def test_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    G, c, A_eq, b_eq, A_in, b_in = random_qp(rng, n, int(rng.integers(1, 12)), int(rng.integers(0, 2)))
    res = solve_qp(G, c, A_eq, b_eq, A_in, b_in)
    cons = [{"type": "ineq", "fun": lambda x: A_in @ x - b_in, "jac": lambda x: A_in}]
    if len(b_eq):
        cons.append({"type": "eq", "fun": lambda x: A_eq @ x - b_eq, "jac": lambda x: A_eq})
    ref = minimize(
        lambda x: 0.5 * x @ G @ x + c @ x,
        np.zeros(n),
        jac=lambda x: G @ x + c,
        constraints=cons,
        method="SLSQP",
        options={"ftol": 1e-13, "maxiter": 1000},
    )
    ref_feasible = np.all(A_in @ ref.x >= b_in - 1e-9) and np.allclose(A_eq @ ref.x, b_eq, atol=1e-9)
    if ref.success:
        assert res.value == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))
    elif ref_feasible:
        # SLSQP may stop early; a feasible point it found must not beat ours
        assert res.value <= ref.fun + 1e-9 * (1 + abs(ref.fun))
    assert np.all(A_in @ res.x >= b_in - 1e-9)
    if len(b_eq):
        assert np.allclose(A_eq @ res.x, b_eq, atol=1e-9)
    # KKT: stationarity with non-negative inequality multipliers
    lam = res.in_multipliers
    assert np.all(lam >= -1e-12)
    grad = G @ res.x + c - A_in.T @ lam - (A_eq.T @ res.eq_multipliers if len(b_eq) else 0)
    assert np.abs(grad).max() <= 1e-8 * (1 + np.abs(c).max())
    # complementary slackness
    assert np.abs(lam * (A_in @ res.x - b_in)).max() <= 1e-8
