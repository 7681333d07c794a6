"""Storage operator (leader) optimisation and assembly of the full Stackelberg equilibrium.

For a participation profile ``h`` the operator picks a price ``a_t`` and a grid
trade ``l_q,t`` for every slot. Active participants respond with the interior
equilibrium ``x = s + gamma_t``, and substituting that response into the
operator revenue gives the concave quadratic

    sum_t lam1 a_t^2 + lam2 a_t + lam3 l_t^2 + lam4 l_t

which is maximised subject to the battery limits. Loads of participants that
have not started trading are folded into the slot's background load.

Battery constraints act on the net storage inflow ``n_t = sum_k x_k,t + l_q,t``
with charge efficiency on positive and discharge efficiency on negative
inflow. That makes the feasible set a union of polyhedra, one per sign
pattern of ``n``; each piece is a strictly convex QP and the solver walks
between adjacent pieces while the sign multipliers say it pays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .exceptions import InfeasibleError, ScenarioError
from .qp import solve_qp
from .scenario import Scenario, active_mask
from .slot_game import SlotContext, SlotNash, nash_closed_form, project_nash
from .storage import (
    ChargeTrajectory,
    FeasibilityReport,
    build_kappa_gamma,
    check_feasible,
    trajectory_from_net,
)


@dataclass(frozen=True)
class CesStrategy:
    a: NDArray[np.float64]
    l_q: NDArray[np.float64]

    def __post_init__(self) -> None:
        a = np.array(self.a, dtype=float)
        l_q = np.array(self.l_q, dtype=float)
        if a.shape != l_q.shape or not (np.all(np.isfinite(a)) and np.all(np.isfinite(l_q))):
            raise ValueError("strategy vectors must be finite and of equal length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "l_q", l_q)


@dataclass
class SolverOptions:
    #: add linear constraints keeping the interior follower response inside the trade boxes
    follower_boxes: bool = True
    max_pattern_moves: int = 200
    feas_tol: float = 1e-11


@dataclass
class StackelbergSolution:
    h: tuple[int, ...]
    participant_ids: tuple[int, ...]
    strategy: CesStrategy
    slots: list[SlotNash | None]
    x: NDArray[np.float64]  # (I, K) trades with the storage, 0 before a user starts
    loads: NDArray[np.float64]  # (I, K) participants' grid loads
    background: NDArray[np.float64]  # (K,) non-participant load
    total_load: NDArray[np.float64]
    price: NDArray[np.float64]
    trajectory: ChargeTrajectory
    feasibility: FeasibilityReport
    revenue: float
    daily_costs: NDArray[np.float64]
    objective: float
    projected: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def net_inflow(self) -> NDArray[np.float64]:
        return self.x.sum(axis=0) + self.strategy.l_q


# --- per-profile slot data --------------------------------------------------------


@dataclass(frozen=True)
class SlotData:
    """Profile-dependent slot quantities used by both leader and followers."""

    mask: NDArray[np.bool_]  # (I, K)
    n_active: NDArray[np.int64]  # (K,)
    surplus_sum: NDArray[np.float64]  # (K,) over active participants
    background: NDArray[np.float64]  # (K,) non-participants + waiting participants
    gamma_lo: NDArray[np.float64]
    gamma_hi: NDArray[np.float64]


def slot_data(scenario: Scenario, h: Sequence[int]) -> SlotData:
    s = scenario.surplus_matrix
    mask = active_mask(h, scenario.K)
    n_active = mask.sum(axis=0)
    surplus_sum = np.where(mask, s, 0.0).sum(axis=0)
    background = scenario.nonparticipant_load + np.where(mask, 0.0, -s).sum(axis=0)
    # x_k = s_k + gamma must stay in its box: gamma in [-max(s,0), max(-s,0)] for each k
    gamma_lo = np.where(mask, -np.maximum(s, 0.0), -np.inf).max(axis=0, initial=-np.inf)
    gamma_hi = np.where(mask, np.maximum(-s, 0.0), np.inf).min(axis=0, initial=np.inf)
    return SlotData(mask, n_active, surplus_sum, background, gamma_lo, gamma_hi)


def objective_coefficients(scenario: Scenario, data: SlotData) -> tuple[NDArray, ...]:
    """Per-slot ``(lam1, lam2, lam3, lam4)`` of the operator objective."""
    phi, delta = scenario.prices.phi, scenario.prices.delta
    I_t = data.n_active.astype(float)
    c = I_t / (I_t + 1.0)
    bg = data.background
    lam1 = -c / phi
    lam2 = c * (bg + delta / phi) - data.surplus_sum
    lam3 = -phi / (I_t + 1.0)
    lam4 = -(phi * bg + delta) / (I_t + 1.0)
    return lam1, lam2, lam3, lam4


def leader_objective(strategy: CesStrategy, scenario: Scenario, h: Sequence[int]) -> float:
    """Operator revenue written as the closed-form quadratic in ``(a, l_q)``."""
    lam1, lam2, lam3, lam4 = objective_coefficients(scenario, slot_data(scenario, h))
    a, l = strategy.a, strategy.l_q
    return float(np.sum(lam1 * a**2 + lam2 * a + lam3 * l**2 + lam4 * l))


def slot_contexts(scenario: Scenario, h: Sequence[int], strategy: CesStrategy) -> list[SlotContext]:
    data = slot_data(scenario, h)
    s = scenario.surplus_matrix
    ids = [u.id for u in scenario.participants]
    out = []
    for t in range(scenario.K):
        active = np.flatnonzero(data.mask[:, t])
        out.append(
            SlotContext(
                t=t + 1,
                phi=float(scenario.prices.phi[t]),
                delta=float(scenario.prices.delta[t]),
                a=float(strategy.a[t]),
                l_q=float(strategy.l_q[t]),
                background=float(data.background[t]),
                s=s[active, t],
                ids=tuple(ids[i] for i in active),
            )
        )
    return out


def revenue_from_response(strategy: CesStrategy, scenario: Scenario, h: Sequence[int]) -> float:
    """Operator revenue ``sum_t -a_t sum_k x_k - p_t l_q`` evaluated on the interior responses."""
    total = 0.0
    for ctx in slot_contexts(scenario, h, strategy):
        if ctx.n_active:
            sol = nash_closed_form(ctx)
            total += -ctx.a * sol.storage_inflow - sol.price * ctx.l_q
        else:
            price = ctx.phi * (ctx.background + ctx.l_q) + ctx.delta
            total += -price * ctx.l_q
    return total


# --- leader QP --------------------------------------------------------------------


class LeaderProblem:
    """The operator problem for one profile, parametrised by the sign pattern of the inflow.

    Decision vector ``z = [a_t for slots with followers] + [l_q,t for all slots]``.
    """

    def __init__(self, scenario: Scenario, h: Sequence[int], options: SolverOptions | None = None):
        self.scenario = scenario
        self.h = tuple(h)
        self.options = options or SolverOptions()
        self.data = data = slot_data(scenario, h)
        K = scenario.K
        phi, delta = scenario.prices.phi, scenario.prices.delta
        self.lam = objective_coefficients(scenario, data)
        self.price_slots = np.flatnonzero(data.n_active > 0)
        m = self.price_slots.size
        self.n_var = m + K
        I_t = data.n_active.astype(float)
        c = I_t / (I_t + 1.0)

        # inflow n = n0 + Dn @ z and gamma = g0 + Dg @ z
        self.n0 = data.surplus_sum - c * (delta / phi + data.background)
        self.Dn = np.zeros((K, self.n_var))
        self.Dn[self.price_slots, np.arange(m)] = (c / phi)[self.price_slots]
        self.Dn[np.arange(K), m + np.arange(K)] = 1.0 / (I_t + 1.0)
        self.g0 = -(delta / phi + data.background) / (I_t + 1.0)
        self.Dg = np.zeros((K, self.n_var))
        self.Dg[self.price_slots, np.arange(m)] = (1.0 / ((I_t + 1.0) * phi))[self.price_slots]
        self.Dg[np.arange(K), m + np.arange(K)] = -1.0 / (I_t + 1.0)

        lam1, lam2, lam3, lam4 = self.lam
        self.hess = np.concatenate([-2.0 * lam1[self.price_slots], -2.0 * lam3])
        self.lin = np.concatenate([-lam2[self.price_slots], -lam4])
        self.kappa, self.gamma_mat = build_kappa_gamma(scenario.battery.tau, K)

    # conversions
    def to_z(self, strategy: CesStrategy) -> NDArray:
        return np.concatenate([strategy.a[self.price_slots], strategy.l_q])

    def to_strategy(self, z: NDArray) -> CesStrategy:
        m = self.price_slots.size
        a = self.scenario.prices.delta.astype(float).copy()
        a[self.price_slots] = z[:m]
        return CesStrategy(a=a, l_q=z[m:].copy())

    def inflow(self, z: NDArray) -> NDArray:
        return self.n0 + self.Dn @ z

    def value(self, z: NDArray) -> float:
        return float(-(0.5 * z @ (self.hess * z) + self.lin @ z))

    def unconstrained(self) -> NDArray:
        return -self.lin / self.hess

    def constraints(self, signs: NDArray) -> tuple[NDArray, NDArray, NDArray, NDArray]:
        """``(A_eq, b_eq, A_in, b_in)`` for sign pattern ``signs`` (+1 charge, -1 discharge)."""
        bat = self.scenario.battery
        K = self.scenario.K
        beta = np.where(signs > 0, bat.beta_plus, bat.beta_minus)
        # q = q0 kappa + Gamma diag(beta) (n0 + Dn z)
        M = self.gamma_mat * beta[None, :]
        q_off = bat.q0 * self.kappa + M @ self.n0
        Qz = M @ self.Dn
        lo = 2.0 * bat.lower_bound
        hi = bat.capacity * (1.0 - 1e-10)
        A_in = [Qz, -Qz, signs[:, None] * self.Dn]
        b_in = [lo - q_off, q_off - hi, -signs * self.n0]
        A_eq = [Qz[K - 1 : K]]
        b_eq = [np.array([bat.q0 - q_off[K - 1]])]
        if self.options.follower_boxes:
            ps = self.price_slots
            lo_g, hi_g = self.data.gamma_lo[ps], self.data.gamma_hi[ps]
            pinned = hi_g - lo_g <= 0.0
            Dg, g0 = self.Dg[ps], self.g0[ps]
            A_eq.append(Dg[pinned])
            b_eq.append(lo_g[pinned] - g0[pinned])
            free = ~pinned
            fin_lo = free & np.isfinite(lo_g)
            fin_hi = free & np.isfinite(hi_g)
            A_in += [Dg[fin_lo], -Dg[fin_hi]]
            b_in += [lo_g[fin_lo] - g0[fin_lo], g0[fin_hi] - hi_g[fin_hi]]
        return np.vstack(A_eq), np.concatenate(b_eq), np.vstack(A_in), np.concatenate(b_in)

    def solve_pattern(self, signs: NDArray):
        A_eq, b_eq, A_in, b_in = self.constraints(signs)
        res = solve_qp(self.hess, self.lin, A_eq, b_eq, A_in, b_in, feas_tol=self.options.feas_tol)
        K = self.scenario.K
        sign_mult = res.in_multipliers[2 * K : 3 * K]
        return res.x, -res.value, sign_mult

    def project(self, point: NDArray, signs: NDArray) -> NDArray:
        """Euclidean projection of ``point`` onto the polyhedron of ``signs``."""
        A_eq, b_eq, A_in, b_in = self.constraints(signs)
        res = solve_qp(np.ones(self.n_var), -point, A_eq, b_eq, A_in, b_in, feas_tol=self.options.feas_tol)
        return res.x


def _signs_of(n: NDArray) -> NDArray:
    return np.where(n >= 0.0, 1.0, -1.0)


def solve_leader(
    scenario: Scenario, h: Sequence[int], options: SolverOptions | None = None
) -> CesStrategy:
    return _solve_leader(LeaderProblem(scenario, h, options))[0]


def _solve_leader(problem: LeaderProblem) -> tuple[CesStrategy, float, dict]:
    K = problem.scenario.K
    starts = [_signs_of(problem.inflow(problem.unconstrained())), np.ones(K)]
    best: tuple[float, NDArray, NDArray] | None = None
    visited: set[bytes] = set()
    moves = 0
    for signs in starts:
        current = None
        while signs.tobytes() not in visited and moves < problem.options.max_pattern_moves:
            visited.add(signs.tobytes())
            moves += 1
            try:
                z, val, sign_mult = problem.solve_pattern(signs)
            except InfeasibleError:
                break
            if current is not None and val <= current[0]:
                break
            current = (val, z, signs)
            # a binding sign constraint means the optimum wants to cross to the other side
            flip = sign_mult > 1e-12 * (1.0 + abs(val))
            if not flip.any():
                break
            signs = np.where(flip, -signs, signs)
        if current is not None and (best is None or current[0] > best[0]):
            best = current
    if best is None:
        raise InfeasibleError(
            "no operator strategy satisfies the battery limits and end-of-day continuity"
        )
    val, z, signs = best
    return problem.to_strategy(z), val, {"pattern_moves": moves, "signs": signs}


# --- equilibrium assembly -----------------------------------------------------------


def evaluate_strategy(
    scenario: Scenario, h: Sequence[int], strategy: CesStrategy, objective: float | None = None
) -> StackelbergSolution:
    """Followers' box-constrained equilibrium under ``strategy`` and all derived quantities."""
    h = scenario.validate_profile(h)
    K, I = scenario.K, scenario.I
    s = scenario.surplus_matrix
    data = slot_data(scenario, h)
    x = np.zeros((I, K))
    slots: list[SlotNash | None] = []
    projected = False
    for ctx in slot_contexts(scenario, h, strategy):
        if ctx.n_active == 0:
            slots.append(None)
            continue
        sol = project_nash(ctx)
        projected |= sol.projected
        x[data.mask[:, ctx.t - 1], ctx.t - 1] = sol.x
        slots.append(sol)
    loads = x - s
    background = scenario.nonparticipant_load
    total = loads.sum(axis=0) + background + strategy.l_q
    price = scenario.prices.phi * total + scenario.prices.delta
    revenue = float(np.sum(-strategy.a * x.sum(axis=0) - price * strategy.l_q))
    costs = (loads * price[None, :] - x * strategy.a[None, :]).sum(axis=1)
    traj = trajectory_from_net(scenario.battery, x.sum(axis=0) + strategy.l_q)
    return StackelbergSolution(
        h=h,
        participant_ids=tuple(u.id for u in scenario.participants),
        strategy=strategy,
        slots=slots,
        x=x,
        loads=loads,
        background=background,
        total_load=total,
        price=price,
        trajectory=traj,
        feasibility=check_feasible(scenario.battery, traj.q),
        revenue=revenue,
        daily_costs=costs,
        objective=leader_objective(strategy, scenario, h) if objective is None else objective,
        projected=projected,
    )


def solve_stackelberg(
    scenario: Scenario, h: Sequence[int], options: SolverOptions | None = None
) -> StackelbergSolution:
    h = scenario.validate_profile(h)
    strategy, value, info = _solve_leader(LeaderProblem(scenario, h, options))
    sol = evaluate_strategy(scenario, h, strategy, objective=value)
    sol.meta.update(info)
    return sol


def revenue(solution: StackelbergSolution) -> float:
    a, l_q = solution.strategy.a, solution.strategy.l_q
    return float(np.sum(-a * solution.x.sum(axis=0) - solution.price * l_q))


def daily_cost(solution: StackelbergSolution, participant_id: int) -> float:
    try:
        n = solution.participant_ids.index(participant_id)
    except ValueError:
        raise ScenarioError(f"unknown participant id {participant_id}") from None
    return float(np.sum(solution.price * solution.loads[n] - solution.strategy.a * solution.x[n]))


# --- optimality certificate -------------------------------------------------------


@dataclass
class Certificate:
    value: float
    max_gain: float
    n_tested: int
    passed: bool


def certify_leader(
    scenario: Scenario,
    h: Sequence[int],
    strategy: CesStrategy,
    n_perturb: int = 200,
    step: float = 1e-3,
    seed: int = 0,
    rtol: float = 1e-8,
    options: SolverOptions | None = None,
) -> Certificate:
    """Check that no nearby feasible strategy earns more.

    Random points within ``step`` of the strategy are projected onto a feasible
    piece (sign pattern of the current inflow, with slots sitting at zero
    inflow assigned a random side). Each candidate's battery trajectory is
    re-simulated independently and infeasible candidates are discarded.
    """
    problem = LeaderProblem(scenario, h, options)
    rng = np.random.default_rng(seed)
    z0 = problem.to_z(strategy)
    value = problem.value(z0)
    n0 = problem.inflow(z0)
    near_zero = np.abs(n0) <= 1e-9 * (1.0 + scenario.battery.capacity)
    bat = scenario.battery
    max_gain = -np.inf
    tested = 0
    attempts = 0
    while tested < n_perturb and attempts < 20 * n_perturb:
        attempts += 1
        d = rng.normal(size=problem.n_var)
        d *= step * rng.uniform() / np.linalg.norm(d)
        signs = _signs_of(n0)
        signs[near_zero] = rng.choice([-1.0, 1.0], size=int(near_zero.sum()))
        try:
            z = problem.project(z0 + d, signs)
        except InfeasibleError:
            continue
        cand = problem.to_strategy(z)
        traj = trajectory_from_net(bat, problem.inflow(z))
        if not check_feasible(bat, traj.q).feasible:
            continue
        if problem.options.follower_boxes:
            g = problem.g0 + problem.Dg @ z
            ps = problem.price_slots
            slack = 1e-9 * (1.0 + np.abs(g[ps]))
            if np.any(g[ps] < problem.data.gamma_lo[ps] - slack) or np.any(
                g[ps] > problem.data.gamma_hi[ps] + slack
            ):
                continue
        gain = leader_objective(cand, scenario, h) - value
        max_gain = max(max_gain, gain)
        tested += 1
    return Certificate(
        value=value,
        max_gain=float(max_gain),
        n_tested=tested,
        passed=tested == n_perturb and max_gain <= rtol * (1.0 + abs(value)),
    )
