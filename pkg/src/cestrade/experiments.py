"""Alpha sweeps over the start-time game and their tabular reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .participation import (
    CostTable,
    DynamicsTrace,
    ExpectationMetrics,
    MixedProfile,
    build_cost_table,
    expectation_metrics,
    participant_baseline,
    run_dynamics,
)
from .scenario import Scenario
from .stackelberg import SolverOptions

DEFAULT_Y0 = (0.3, 0.3, 0.4)
DEFAULT_ETA = 0.7


@dataclass
class RunResult:
    model: str
    alpha: float | None
    y: MixedProfile
    trace: DynamicsTrace
    metrics: ExpectationMetrics

    @property
    def label(self) -> str:
        return "EUT" if self.model == "eut" else f"PT(alpha={self.alpha:g})"

    def summary(self) -> dict:
        return {
            "model": self.model,
            "alpha": self.alpha,
            "iterations": len(self.trace.iterates) - 1,
            "converged_at": self.trace.converged_at,
            "epsilon": self.trace.epsilon_achieved,
            "probabilities": [v.tolist() for v in self.y],
            **self.metrics.to_dict(),
        }


@dataclass
class SweepResult:
    scenario_name: str
    participant_ids: tuple[int, ...]
    starts: list[tuple[int, ...]]
    runs: list[RunResult]
    settings: dict = field(default_factory=dict)

    @property
    def eut(self) -> RunResult:
        return next(r for r in self.runs if r.model == "eut")

    def pt_runs(self) -> list[RunResult]:
        return sorted((r for r in self.runs if r.model == "pt"), key=lambda r: -r.alpha)

    def probability_rows(self) -> list[dict]:
        """One row per user; columns ``<label> h=<start>`` like a participation-probability table."""
        rows = []
        ordered = [self.eut, *self.pt_runs()]
        for n, uid in enumerate(self.participant_ids):
            row: dict = {"user": uid}
            for run in ordered:
                for h, p in zip(self.starts[n], run.y[n]):
                    row[f"{run.label} h={h}"] = float(p)
            rows.append(row)
        return rows

    def metric_rows(self) -> list[dict]:
        rows = []
        for run in [self.eut, *self.pt_runs()]:
            m = run.metrics
            row = {
                "model": run.model,
                "alpha": "" if run.alpha is None else run.alpha,
                "mean_savings_pct": m.mean_savings_pct,
                "expected_revenue": m.expected_revenue,
                "expected_par": m.expected_par,
                "baseline_par": m.baseline_par,
                "par_reduction_pct": m.par_reduction_pct,
                "epsilon": run.trace.epsilon_achieved,
                "converged_at": "" if run.trace.converged_at is None else run.trace.converged_at,
            }
            for uid, s in zip(self.participant_ids, m.savings_pct):
                row[f"savings_pct_user{uid}"] = "" if s is None else s
            rows.append(row)
        return rows


def sweep_alpha(
    scenario: Scenario,
    alphas: Sequence[float],
    table: CostTable | None = None,
    eta: float = DEFAULT_ETA,
    y0=DEFAULT_Y0,
    eps: float = 1e-3,
    max_iter: int = 5000,
    options: SolverOptions | None = None,
    workers: int | None = None,
) -> SweepResult:
    """EUT run plus one prospect-theory run per alpha, all sharing one cost table."""
    if not len(alphas):
        raise ValueError("alpha grid is empty")
    for a in alphas:
        if not 0.0 < a <= 1.0:
            raise ValueError(f"alpha={a}: require 0 < alpha <= 1")
    if table is None:
        table = build_cost_table(scenario, options, workers)
    baseline = participant_baseline(scenario)
    runs = []
    for model, alpha in [("eut", None)] + [("pt", float(a)) for a in alphas]:
        y, trace = run_dynamics(table, model, alpha, eta=eta, y0=y0, max_iter=max_iter, eps=eps)
        runs.append(RunResult(model, alpha, y, trace, expectation_metrics(y, table, baseline)))
    return SweepResult(
        scenario_name=scenario.name,
        participant_ids=table.participant_ids,
        starts=table.starts,
        runs=runs,
        settings={"eta": eta, "y0": list(y0) if y0 is not None else None, "eps": eps, "max_iter": max_iter},
    )


def robustness_rows(
    result: SweepResult, alpha_min: float = 0.4, savings_pp: float = 2.0, revenue_rel: float = 0.02
) -> list[dict]:
    """Compare every PT run with ``alpha >= alpha_min`` against the EUT run.

    Every user's expected savings, and their mean, must stay within
    ``savings_pp`` percentage points; expected operator revenue within
    ``revenue_rel`` relative difference.
    """
    eut = result.eut.metrics
    rows = []
    for run in result.pt_runs():
        if run.alpha < alpha_min:
            continue
        m = run.metrics
        d_sav = abs((m.mean_savings_pct or 0.0) - (eut.mean_savings_pct or 0.0))
        per_user = [
            abs(a - b) for a, b in zip(m.savings_pct, eut.savings_pct) if a is not None and b is not None
        ]
        d_user = max(per_user, default=0.0)
        d_rev = abs(m.expected_revenue - eut.expected_revenue) / max(abs(eut.expected_revenue), 1e-12)
        rows.append(
            {
                "alpha": run.alpha,
                "savings_pct": m.mean_savings_pct,
                "eut_savings_pct": eut.mean_savings_pct,
                "savings_diff_pp": d_sav,
                "max_user_savings_diff_pp": d_user,
                "revenue": m.expected_revenue,
                "eut_revenue": eut.expected_revenue,
                "revenue_rel_diff": d_rev,
                "savings_ok": bool(max(d_sav, d_user) <= savings_pp),
                "revenue_ok": bool(d_rev <= revenue_rel),
            }
        )
    return rows


def alpha_grid(spec: str) -> list[float]:
    """Parse ``"0.1,0.4,0.7"`` or a range ``"0.1:1.0:0.1"`` (inclusive stop)."""
    spec = spec.strip()
    if ":" in spec:
        start, stop, step = (float(v) for v in spec.split(":"))
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(v) for v in spec.split(",") if v.strip()]
