"""Solve the operator/household game for one participation profile and look inside.

Run: python3 demos/single_solve.py
"""

from __future__ import annotations

import numpy as np

from cestrade import default_scenario, fixture_s1, solve_stackelberg
from cestrade.stackelberg import certify_leader

np.set_printoptions(precision=3, suppress=True)

# The two-slot fixture: user 1 has 1 kWh spare in slot 1 and is short 1 kWh in
# slot 2, user 2 has 2 kWh spare in slot 1.
s1 = fixture_s1()
sol = solve_stackelberg(s1, (1, 1))
print("S1, both users trade from slot 1")
print("  storage price a  :", sol.strategy.a)
print("  grid trade l_q   :", sol.strategy.l_q)
print("  user trades x    :", sol.x.tolist())
print("  charge level q   :", sol.trajectory.q)
print(f"  revenue R = {sol.revenue:.4f}, daily costs U = {sol.daily_costs}")

cert = certify_leader(s1, (1, 1), sol.strategy)
print(f"  certificate: {cert.n_tested} feasible perturbations, best gain {cert.max_gain:.1e}")

# The 24-slot community: the battery leaks, so the operator has to buy back the
# lost energy over the day to end where it started.
sc = default_scenario()
h = (1, 12, 17, 1, 12, 17)
sol = solve_stackelberg(sc, h)
print(f"\n{sc.name}: {sc.I} participants, starts {h}")
print("  grid price p     :", sol.price)
print("  charge level q   :", sol.trajectory.q)
print(f"  q_K - q0 = {sol.trajectory.q[-1] - sc.battery.q0:.2e}, battery {sol.feasibility.describe()}")
print(f"  revenue R = {sol.revenue:.4f}")
for uid, cost in zip(sol.participant_ids, sol.daily_costs):
    print(f"  user {uid}: daily cost {cost:.4f}")
