"""Community battery model: leakage, charging efficiencies and feasibility.

Charge levels follow

    q_t = tau**t * q0 + sum_{m <= t} tau**(t - m) * (beta_plus * lplus_m - beta_minus * lminus_m)

which in matrix form is ``q = q0 * kappa + Gamma @ (beta_plus * lplus - beta_minus * lminus)``.
Slots are 1-based in the formulas and 0-based in the arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ScenarioError

#: strict lower bound ``q_t > 0`` is enforced as ``q_t >= LOWER_FRACTION * B``
LOWER_FRACTION = 1e-9
#: end-of-day continuity tolerance as a fraction of capacity
CONTINUITY_FRACTION = 1e-6


@dataclass(frozen=True)
class BatteryParams:
    capacity: float
    q0: float
    tau: float = 1.0
    beta_plus: float = 1.0
    beta_minus: float = 1.0

    def __post_init__(self) -> None:
        problems = self.violations()
        if problems:
            raise ScenarioError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not 0.0 < self.tau <= 1.0:
            out.append(f"battery.tau={self.tau}: require 0 < tau <= 1")
        if not 0.0 < self.beta_plus <= 1.0:
            out.append(f"battery.beta_plus={self.beta_plus}: require 0 < beta_plus <= 1")
        if not self.beta_minus >= 1.0:
            out.append(f"battery.beta_minus={self.beta_minus}: require beta_minus >= 1")
        if not 0.0 < self.q0 <= self.capacity:
            out.append(f"battery.q0={self.q0}: require 0 < q0 <= capacity={self.capacity}")
        return out

    @property
    def lower_bound(self) -> float:
        return LOWER_FRACTION * self.capacity

    @property
    def continuity_tol(self) -> float:
        return CONTINUITY_FRACTION * self.capacity


@dataclass(frozen=True)
class ChargeTrajectory:
    q: NDArray[np.float64]
    lplus: NDArray[np.float64]
    lminus: NDArray[np.float64]


@dataclass
class FeasibilityReport:
    """Per-slot violations of ``lower <= q_t <= B`` and of ``|q_K - q0| <= tol``."""

    lower_violations: list[int] = field(default_factory=list)
    capacity_violations: list[int] = field(default_factory=list)
    continuity_gap: float = 0.0
    continuity_ok: bool = True

    @property
    def feasible(self) -> bool:
        return not self.lower_violations and not self.capacity_violations and self.continuity_ok

    def describe(self) -> str:
        if self.feasible:
            return "feasible"
        parts = []
        if self.lower_violations:
            parts.append(f"charge below lower bound at slots {[t + 1 for t in self.lower_violations]}")
        if self.capacity_violations:
            parts.append(f"capacity exceeded at slots {[t + 1 for t in self.capacity_violations]}")
        if not self.continuity_ok:
            parts.append(f"continuity gap |q_K - q0| = {self.continuity_gap:.6g}")
        return "; ".join(parts)


def build_kappa_gamma(tau: float, K: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return ``kappa_l = tau**l`` and the lower-triangular ``Gamma_lm = tau**(l-m)``."""
    idx = np.arange(1, K + 1)
    kappa = tau ** idx.astype(float)
    diff = idx[:, None] - idx[None, :]
    gamma = np.where(diff >= 0, tau ** np.maximum(diff, 0).astype(float), 0.0)
    return kappa, gamma


def split_flows(net: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    net = np.asarray(net, dtype=float)
    return np.maximum(net, 0.0), np.maximum(-net, 0.0)


def charge_trajectory(
    params: BatteryParams, lplus: ArrayLike, lminus: ArrayLike
) -> NDArray[np.float64]:
    lplus = np.asarray(lplus, dtype=float)
    lminus = np.asarray(lminus, dtype=float)
    if np.any(lplus < 0) or np.any(lminus < 0):
        raise ValueError("charging and discharging amounts must be non-negative")
    kappa, gamma = build_kappa_gamma(params.tau, lplus.size)
    return params.q0 * kappa + gamma @ (params.beta_plus * lplus - params.beta_minus * lminus)


def trajectory_from_net(params: BatteryParams, net: ArrayLike) -> ChargeTrajectory:
    lplus, lminus = split_flows(net)
    return ChargeTrajectory(charge_trajectory(params, lplus, lminus), lplus, lminus)


def check_feasible(
    params: BatteryParams,
    q: ArrayLike,
    tol: float | None = None,
    lower: float | None = None,
) -> FeasibilityReport:
    q = np.asarray(q, dtype=float)
    tol = params.continuity_tol if tol is None else tol
    lower = params.lower_bound if lower is None else lower
    gap = abs(float(q[-1]) - params.q0)
    return FeasibilityReport(
        lower_violations=[int(t) for t in np.flatnonzero(q < lower)],
        capacity_violations=[int(t) for t in np.flatnonzero(q > params.capacity)],
        continuity_gap=gap,
        continuity_ok=gap <= tol,
    )
