"""Start-time selection game between participants.

Every action profile ``h`` (one start slot per participant) is mapped to the
daily costs, operator revenue and grid load of its Stackelberg equilibrium.
Users then randomise over start slots; their expected cost is evaluated either
with objective probabilities (expected utility) or with opponents'
probabilities distorted by the Prelec weighting function (prospect theory).
Mixed profiles are found with inertia-weighted fictitious play.

Mixed profiles are lists of probability vectors, one per participant, ordered
like ``Scenario.participants``; entry ``j`` of user ``n``'s vector refers to
``allowed_starts[n][j]``.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import CesTradeError
from .scenario import Scenario, baseline_solve
from .stackelberg import SolverOptions, solve_stackelberg

log = logging.getLogger(__name__)

Model = Literal["eut", "pt"]
MixedProfile = list[NDArray[np.float64]]

MAX_PROFILES = 10**6
WORKERS_ENV = "CESTRADE_WORKERS"


def par(load: ArrayLike) -> float:
    """Peak-to-average ratio ``K * max_t L_t / sum_t L_t``."""
    load = np.asarray(load, dtype=float)
    total = float(load.sum())
    if total == 0.0:
        return float("nan")
    return float(load.size * load.max() / total)


@dataclass(frozen=True)
class CostEntry:
    U: NDArray[np.float64]
    R: float
    L: NDArray[np.float64]
    PAR: float


@dataclass
class CostTable:
    """Equilibrium outcomes for every action profile, stored as dense arrays.

    ``U`` has shape ``(|H_1|, ..., |H_I|, I)``, ``R`` and ``PAR`` have shape
    ``(|H_1|, ..., |H_I|)`` and ``L`` has a trailing slot axis.
    """

    participant_ids: tuple[int, ...]
    starts: list[tuple[int, ...]]
    U: NDArray[np.float64]
    R: NDArray[np.float64]
    L: NDArray[np.float64]
    PAR: NDArray[np.float64]
    projected: NDArray[np.bool_] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.starts)

    @property
    def n_players(self) -> int:
        return len(self.starts)

    def __len__(self) -> int:
        return math.prod(self.shape)

    def profiles(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*self.starts)

    def index(self, h: Sequence[int]) -> tuple[int, ...]:
        try:
            return tuple(s.index(hn) for s, hn in zip(self.starts, h, strict=True))
        except ValueError:
            raise KeyError(f"profile {tuple(h)} not in table") from None

    def __getitem__(self, h: Sequence[int]) -> CostEntry:
        idx = self.index(h)
        return CostEntry(U=self.U[idx].copy(), R=float(self.R[idx]), L=self.L[idx].copy(), PAR=float(self.PAR[idx]))

    def entries(self) -> dict[tuple[int, ...], CostEntry]:
        return {h: self[h] for h in self.profiles()}


def _solve_one(args):
    scenario, h, options = args
    try:
        sol = solve_stackelberg(scenario, h, options)
    except CesTradeError as exc:
        return h, exc
    return h, (sol.daily_costs, sol.revenue, sol.total_load, sol.projected)


def build_cost_table(
    scenario: Scenario, options: SolverOptions | None = None, workers: int | None = None
) -> CostTable:
    """Solve the Stackelberg game once per action profile.

    ``workers`` defaults to the ``CESTRADE_WORKERS`` environment variable (1 if unset).
    """
    starts = scenario.allowed_starts
    shape = tuple(len(s) for s in starts)
    total = math.prod(shape)
    if total > MAX_PROFILES:
        raise CesTradeError(f"{total} action profiles exceed the enumeration limit {MAX_PROFILES}")
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    I, K = scenario.I, scenario.K
    U = np.empty(shape + (I,))
    R = np.empty(shape)
    L = np.empty(shape + (K,))
    PAR = np.empty(shape)
    projected = np.zeros(shape, dtype=bool)
    jobs = [(scenario, h, options) for h in itertools.product(*starts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_one, jobs, chunksize=max(1, total // (4 * workers))))
    else:
        results = map(_solve_one, jobs)
    for h, res in results:
        if isinstance(res, Exception):
            raise type(res)(f"Stackelberg solve failed for profile h={h}: {res}") from res
        idx = tuple(s.index(hn) for s, hn in zip(starts, h))
        U[idx], R[idx], L[idx], projected[idx] = res
        PAR[idx] = par(L[idx])
    if projected.any():
        log.warning("%d profiles needed box projection of follower trades", int(projected.sum()))
    return CostTable(
        participant_ids=tuple(u.id for u in scenario.participants),
        starts=[tuple(s) for s in starts],
        U=U,
        R=R,
        L=L,
        PAR=PAR,
        projected=projected,
    )


# --- probability weighting and expectations ---------------------------------------


def prelec_weight(y: ArrayLike, alpha: float) -> NDArray[np.float64] | float:
    """Prelec weighting ``exp(-(-ln y)**alpha)`` with ``w(0) = 0`` and ``w(1) = 1``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha={alpha}: require 0 < alpha <= 1")
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if alpha == 1.0:
        out = arr.copy()
    else:
        out = np.zeros_like(arr)
        pos = arr > 0.0
        out[pos] = np.exp(-((-np.log(arr[pos])) ** alpha))
    return float(out) if out.ndim == 0 else out


def _alphas(alpha: float | Sequence[float] | None, n_players: int) -> NDArray[np.float64]:
    if alpha is None:
        return np.ones(n_players)
    arr = np.broadcast_to(np.asarray(alpha, dtype=float), (n_players,)).copy()
    if np.any(arr <= 0.0) or np.any(arr > 1.0):
        raise ValueError("every alpha must satisfy 0 < alpha <= 1")
    return arr


def _contract(arr: NDArray, weights: Sequence[NDArray], keep: int | None = None) -> NDArray:
    """Contract the leading player axes of ``arr`` with ``weights``, except axis ``keep``."""
    out = arr
    for r in reversed(range(len(weights))):
        if r != keep:
            out = np.tensordot(out, weights[r], axes=([r], [0]))
    return out


def _check_profile(y: Sequence[ArrayLike], table: CostTable) -> MixedProfile:
    y = [np.asarray(v, dtype=float) for v in y]
    if [v.size for v in y] != list(table.shape):
        raise ValueError(f"mixed profile sizes {[v.size for v in y]} do not match {list(table.shape)}")
    return y


def opponent_weights(
    n: int, y: MixedProfile, model: Model, alpha: NDArray[np.float64]
) -> list[NDArray[np.float64]]:
    """Probabilities user ``n`` attaches to each opponent's actions."""
    if model == "eut":
        return list(y)
    if model == "pt":
        return [v if r == n else prelec_weight(v, alpha[n]) for r, v in enumerate(y)]
    raise ValueError(f"unknown model {model!r}")


def pure_response_costs(
    n: int,
    y: Sequence[ArrayLike],
    table: CostTable,
    model: Model = "eut",
    alpha: float | Sequence[float] | None = None,
) -> NDArray[np.float64]:
    """Expected cost of user ``n`` for each of its pure start slots against ``y_{-n}``."""
    y = _check_profile(y, table)
    weights = opponent_weights(n, y, model, _alphas(alpha, table.n_players))
    return _contract(table.U[..., n], weights, keep=n)


def pure_response_cost(
    n: int,
    h_n: int,
    y: Sequence[ArrayLike],
    table: CostTable,
    model: Model = "eut",
    alpha: float | Sequence[float] | None = None,
) -> float:
    costs = pure_response_costs(n, y, table, model, alpha)
    return float(costs[table.starts[n].index(h_n)])


def eut_expected_cost(n: int, y: Sequence[ArrayLike], table: CostTable) -> float:
    y = _check_profile(y, table)
    return float(_contract(table.U[..., n], y))


def pt_expected_cost(
    n: int, y: Sequence[ArrayLike], table: CostTable, alpha: float | Sequence[float]
) -> float:
    """Own probabilities enter unweighted; each opponent's probability is Prelec-weighted."""
    y = _check_profile(y, table)
    return float(y[n] @ pure_response_costs(n, y, table, "pt", alpha))


def expected_cost(
    n: int,
    y: Sequence[ArrayLike],
    table: CostTable,
    model: Model = "eut",
    alpha: float | Sequence[float] | None = None,
) -> float:
    if model == "eut":
        return eut_expected_cost(n, y, table)
    return pt_expected_cost(n, y, table, _alphas(alpha, table.n_players))


def _argmin_earliest(costs: NDArray, rtol: float = 1e-12) -> int:
    lo = costs.min()
    return int(np.flatnonzero(costs <= lo + rtol * (1.0 + abs(lo)))[0])


def best_response_indicator(
    n: int,
    y: Sequence[ArrayLike],
    table: CostTable,
    model: Model = "eut",
    alpha: float | Sequence[float] | None = None,
) -> NDArray[np.float64]:
    """Unit vector on the cheapest pure start; ties go to the earliest slot."""
    costs = pure_response_costs(n, y, table, model, alpha)
    v = np.zeros(costs.size)
    v[_argmin_earliest(costs)] = 1.0
    return v


def fictitious_step(
    y: Sequence[ArrayLike],
    i: int,
    eta: float,
    table: CostTable,
    model: Model = "eut",
    alpha: float | Sequence[float] | None = None,
) -> MixedProfile:
    """One simultaneous update ``y + (eta / i) (v - y)`` for every user."""
    if i < 1:
        raise ValueError("iteration index starts at 1")
    if not 0.0 < eta < 1.0:
        raise ValueError("inertia weight must satisfy 0 < eta < 1")
    y = _check_profile(y, table)
    step = eta / i
    return [
        yn + step * (best_response_indicator(n, y, table, model, alpha) - yn) for n, yn in enumerate(y)
    ]


def check_epsilon_nash(
    y: Sequence[ArrayLike],
    table: CostTable,
    model: Model = "eut",
    alpha: float | Sequence[float] | None = None,
    eps: float = 1e-3,
) -> tuple[bool, float]:
    """Worst gain from a unilateral deviation; pure deviations suffice since cost is linear in ``y_n``."""
    y = _check_profile(y, table)
    worst = 0.0
    for n in range(table.n_players):
        costs = pure_response_costs(n, y, table, model, alpha)
        worst = max(worst, float(y[n] @ costs - costs.min()))
    return worst <= eps, worst


@dataclass
class DynamicsTrace:
    iterates: list[MixedProfile]
    eta: float
    deviations: list[float] = field(default_factory=list)
    converged_at: int | None = None
    epsilon_achieved: float = float("inf")
    best_iteration: int = 0


def initial_profile(table: CostTable, y0: ArrayLike | Sequence[ArrayLike] | None = None) -> MixedProfile:
    """Uniform when ``y0`` is None; a single vector is shared by users with matching action counts."""
    if y0 is None:
        return [np.full(k, 1.0 / k) for k in table.shape]
    first = np.asarray(y0[0]) if len(y0) else None
    if first is not None and first.ndim == 0:
        shared = np.asarray(y0, dtype=float)
        y = [shared.copy() if k == shared.size else np.full(k, 1.0 / k) for k in table.shape]
    else:
        y = [np.asarray(v, dtype=float).copy() for v in y0]
    y = _check_profile(y, table)
    for v in y:
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
            raise ValueError("initial probabilities must be non-negative and sum to 1")
    return y


def run_dynamics(
    table: CostTable,
    model: Model = "eut",
    alpha: float | Sequence[float] | None = None,
    eta: float = 0.7,
    y0: ArrayLike | Sequence[ArrayLike] | None = None,
    max_iter: int = 5000,
    eps: float = 1e-3,
) -> tuple[MixedProfile, DynamicsTrace]:
    """Fictitious play until the profile is an ``eps``-Nash equilibrium or ``max_iter`` steps.

    Returns the first profile passing the check, otherwise the profile with the
    smallest deviation seen.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("inertia weight must satisfy 0 < eta < 1")
    alphas = _alphas(alpha, table.n_players)
    y = initial_profile(table, y0)
    trace = DynamicsTrace(iterates=[y], eta=eta)
    best_y = y
    for i in range(1, max_iter + 2):
        costs = [pure_response_costs(n, y, table, model, alphas) for n in range(table.n_players)]
        dev = max(float(y[n] @ c - c.min()) for n, c in enumerate(costs))
        trace.deviations.append(dev)
        if dev < trace.epsilon_achieved:
            trace.epsilon_achieved, trace.best_iteration, best_y = dev, i - 1, y
        if dev <= eps:
            trace.converged_at = i - 1
            return y, trace
        if i > max_iter:
            break
        step = eta / i
        new = []
        for yn, c in zip(y, costs):
            v = np.zeros(c.size)
            v[_argmin_earliest(c)] = 1.0
            new.append(yn + step * (v - yn))
        y = new
        trace.iterates.append(y)
    return best_y, trace


def expected_revenue(y: Sequence[ArrayLike], table: CostTable) -> float:
    """Operator revenue averaged with the unweighted equilibrium probabilities."""
    return float(_contract(table.R, _check_profile(y, table)))


@dataclass
class ExpectationMetrics:
    expected_costs: NDArray[np.float64]
    baseline_costs: NDArray[np.float64]
    savings_pct: list[float | None]
    savings_abs: NDArray[np.float64]
    expected_revenue: float
    expected_par: float
    baseline_par: float
    par_reduction_pct: float
    expected_load: NDArray[np.float64]

    @property
    def mean_savings_pct(self) -> float | None:
        vals = [v for v in self.savings_pct if v is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "expected_costs": self.expected_costs.tolist(),
            "baseline_costs": self.baseline_costs.tolist(),
            "savings_pct": self.savings_pct,
            "savings_abs": self.savings_abs.tolist(),
            "mean_savings_pct": self.mean_savings_pct,
            "expected_revenue": self.expected_revenue,
            "expected_par": self.expected_par,
            "baseline_par": self.baseline_par,
            "par_reduction_pct": self.par_reduction_pct,
            "expected_load": self.expected_load.tolist(),
        }


def participant_baseline(scenario: Scenario) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Baseline daily costs of the participants only, and the baseline total load."""
    costs, load = baseline_solve(scenario)
    mask = np.array([u.participant for u in scenario.users])
    return costs[mask], load


def expectation_metrics(
    y: Sequence[ArrayLike],
    table: CostTable,
    baseline: tuple[ArrayLike, ArrayLike],
) -> ExpectationMetrics:
    """Expected savings against the no-storage baseline, expected revenue and PAR reduction.

    ``baseline`` is ``(participant baseline costs, baseline total load)``.
    Savings are undefined for a user whose baseline cost is not positive; only
    the absolute difference is reported for them.
    """
    y = _check_profile(y, table)
    base_costs = np.asarray(baseline[0], dtype=float)
    base_load = np.asarray(baseline[1], dtype=float)
    exp_costs = np.array([eut_expected_cost(n, y, table) for n in range(table.n_players)])
    savings_abs = base_costs - exp_costs
    savings_pct = [
        float(100.0 * d / b) if b > 0 else None for d, b in zip(savings_abs, base_costs)
    ]
    base_par = par(base_load)
    exp_par = float(_contract(table.PAR, y))
    return ExpectationMetrics(
        expected_costs=exp_costs,
        baseline_costs=base_costs,
        savings_pct=savings_pct,
        savings_abs=savings_abs,
        expected_revenue=expected_revenue(y, table),
        expected_par=exp_par,
        baseline_par=base_par,
        par_reduction_pct=float(100.0 * (base_par - exp_par) / base_par),
        expected_load=_contract(table.L, y),
    )
