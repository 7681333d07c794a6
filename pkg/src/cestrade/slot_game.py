"""Single-slot follower game among the participants already trading.

User ``k`` sells ``x_k`` to the storage at price ``a`` (negative ``x_k`` buys),
takes ``l_k = x_k - s_k`` from the grid and pays

    C_k = p * l_k - a * x_k,    p = phi * L + delta,
    L = sum_j l_j + background + l_q

where ``background`` is every load that is not an active participant's
(non-participants and participants that have not started trading yet).
The trade is boxed to ``[0, s_k]`` for a surplus user and ``[s_k, 0]`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ConvergenceError

BOX_TOL = 1e-9


def trade_box(s: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    s = np.asarray(s, dtype=float)
    return np.minimum(s, 0.0), np.maximum(s, 0.0)


@dataclass(frozen=True)
class SlotContext:
    t: int  # 1-based slot
    phi: float
    delta: float
    a: float
    l_q: float
    background: float
    s: NDArray[np.float64]  # surplus of the active participants
    ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        object.__setattr__(self, "s", s)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(range(s.size)))
        if len(self.ids) != s.size:
            raise ValueError("ids and surplus lengths differ")

    @property
    def n_active(self) -> int:
        return self.s.size

    @property
    def box(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return trade_box(self.s)


@dataclass(frozen=True)
class SlotNash:
    x: NDArray[np.float64]
    gamma: float
    grid_loads: NDArray[np.float64]
    total_load: float
    price: float
    projected: bool

    @property
    def storage_inflow(self) -> float:
        return float(self.x.sum())


def _assemble(ctx: SlotContext, x: NDArray, gamma: float, projected: bool) -> SlotNash:
    loads = x - ctx.s
    L = float(loads.sum() + ctx.background + ctx.l_q)
    return SlotNash(
        x=x, gamma=gamma, grid_loads=loads, total_load=L, price=ctx.phi * L + ctx.delta, projected=projected
    )


def load_excluding(ctx: SlotContext, x: ArrayLike, k: int) -> float:
    x = np.asarray(x, dtype=float)
    loads = x - ctx.s
    return float(loads.sum() - loads[k] + ctx.background + ctx.l_q)


def cost_coefficients(ctx: SlotContext, x: ArrayLike, k: int) -> tuple[float, float, float]:
    """``(w1, w2, w3)`` with ``C_k = w1 x_k^2 + w2 x_k + w3`` for fixed opponents."""
    L_other = load_excluding(ctx, x, k)
    s = float(ctx.s[k])
    w1 = ctx.phi
    w2 = ctx.phi * (L_other - 2.0 * s) + ctx.delta - ctx.a
    w3 = ctx.phi * s * (s - L_other) - ctx.delta * s
    return w1, w2, w3


def user_cost(ctx: SlotContext, x: ArrayLike, k: int, x_k: float | None = None) -> float:
    """Cost of user ``k`` under profile ``x``, optionally with ``x_k`` substituted."""
    x = np.array(x, dtype=float)
    if x_k is not None:
        x[k] = x_k
    L = float((x - ctx.s).sum() + ctx.background + ctx.l_q)
    p = ctx.phi * L + ctx.delta
    return float(p * (x[k] - ctx.s[k]) - ctx.a * x[k])


def nash_closed_form(ctx: SlotContext) -> SlotNash:
    """Interior equilibrium: every user shifts its surplus by the same ``gamma``; boxes ignored."""
    I = ctx.n_active
    if I == 0:
        raise ValueError(f"slot {ctx.t}: no active participants, no follower game")
    gamma = ((ctx.a - ctx.delta) / ctx.phi - ctx.background - ctx.l_q) / (I + 1)
    return _assemble(ctx, ctx.s + gamma, float(gamma), projected=False)


def in_box(ctx: SlotContext, x: ArrayLike, tol: float = BOX_TOL) -> bool:
    lo, hi = ctx.box
    x = np.asarray(x, dtype=float)
    return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


def project_nash(ctx: SlotContext, tol: float = 1e-10, max_sweeps: int = 10000) -> SlotNash:
    """Box-constrained equilibrium by cyclic clipped best responses."""
    sol = nash_closed_form(ctx)
    if in_box(ctx, sol.x):
        return sol
    lo, hi = ctx.box
    x = np.clip(sol.x, lo, hi)
    loads_sum = float((x - ctx.s).sum())
    for _ in range(max_sweeps):
        change = 0.0
        for k in range(x.size):
            L_other = loads_sum - (x[k] - ctx.s[k]) + ctx.background + ctx.l_q
            best = ctx.s[k] + (ctx.a - ctx.delta - ctx.phi * L_other) / (2.0 * ctx.phi)
            new = min(max(best, lo[k]), hi[k])
            change = max(change, abs(new - x[k]))
            loads_sum += new - x[k]
            x[k] = new
        if change <= tol:
            return _assemble(ctx, x, sol.gamma, projected=True)
    raise ConvergenceError(f"slot {ctx.t}: best-response sweeps did not converge in {max_sweeps}")


def deviation_gains(sol: SlotNash, ctx: SlotContext, grid_points: int = 201) -> NDArray[np.float64]:
    """Per-user largest cost decrease from a unilateral move on a grid over the box."""
    if grid_points < 3:
        raise ValueError("grid_points must be >= 3")
    lo, hi = ctx.box
    gains = np.zeros(ctx.n_active)
    x = sol.x
    loads = x - ctx.s
    for k in range(ctx.n_active):
        L_other = float(loads.sum() - loads[k] + ctx.background + ctx.l_q)
        cand = np.concatenate([np.linspace(lo[k], hi[k], grid_points), [lo[k], hi[k]]])
        lk = cand - ctx.s[k]
        costs = (ctx.phi * (L_other + lk) + ctx.delta) * lk - ctx.a * cand
        current = (ctx.phi * (L_other + loads[k]) + ctx.delta) * loads[k] - ctx.a * x[k]
        gains[k] = max(0.0, current - float(costs.min()))
    return gains


def verify_nash(sol: SlotNash, ctx: SlotContext, grid_points: int = 201) -> float:
    """Largest unilateral improvement available to any user (0 at an exact equilibrium)."""
    return float(deviation_gains(sol, ctx, grid_points).max(initial=0.0))


def nash_accepted(sol: SlotNash, ctx: SlotContext, grid_points: int = 201, rtol: float = 1e-6) -> bool:
    gains = deviation_gains(sol, ctx, grid_points)
    costs = np.array([user_cost(ctx, sol.x, k) for k in range(ctx.n_active)])
    return bool(np.all(gains <= rtol * (1.0 + np.abs(costs))))
