"""Start-time game: how much does probability weighting move the equilibrium?

Builds the payoff table for the three-household scenario, runs fictitious play
under expected utility and under prospect theory for a few alpha values, then
prints the participation probabilities and the expectation metrics.

Run: python3 demos/participation_sweep.py
"""

from __future__ import annotations

from cestrade import hetero3_scenario
from cestrade.experiments import robustness_rows, sweep_alpha

sc = hetero3_scenario()
result = sweep_alpha(sc, [0.1, 0.4, 0.7, 1.0])

print("participation probabilities")
for row in result.probability_rows():
    uid = row.pop("user")
    print(f"  user {uid}")
    for label, p in row.items():
        print(f"    {label:<22} {p:.4f}")

print("\nexpectations")
for run in [result.eut, *result.pt_runs()]:
    m = run.metrics
    print(
        f"  {run.label:<15} savings {m.mean_savings_pct:7.2f}%  W {m.expected_revenue:.4f}  "
        f"PAR {m.expected_par:.3f} (baseline {m.baseline_par:.3f})  converged at {run.trace.converged_at}"
    )

print("\nagainst expected utility")
for r in robustness_rows(result):
    print(
        f"  alpha={r['alpha']:.1f}: savings differ by {r['savings_diff_pp']:.3f} pp, "
        f"revenue by {100 * r['revenue_rel_diff']:.3f}%"
    )
