"""Route two commodities over a small network with M/M/1 delay costs.

Every arc carries a Kleinrock delay z/(C - z). Each origin-destination pair
has a fixed demand that must be split among its candidate paths, so the
demand rows become equality constraints and x >= 0 becomes lower bounds;
both are handled by the method of multipliers on top of Newton-CG.

    OD pair A: paths 0, 1, 2     demand 1.2
    OD pair B: paths 3, 4        demand 0.8
"""

import numpy as np

from pathnewton import (
    CouplingBlock,
    EqualityConstraints,
    KleinrockDelay,
    NetworkInstance,
    NewtonConfig,
    Zero,
    gradient,
    refresh,
    solve_constrained,
)

capacity = [1.0, 1.5, 1.0, 2.0, 1.0]
# arcs used by each path
routes = {0: [0, 3], 1: [1, 3], 2: [2, 4], 3: [1, 4], 4: [3]}
entries = tuple((a, p, 1.0) for p, arcs in routes.items() for a in arcs)
block = CouplingBlock(entries, tuple(KleinrockDelay(c) for c in capacity))
demand = EqualityConstraints(
    (((0, 1.0), (1, 1.0), (2, 1.0)), ((3, 1.0), (4, 1.0))),
    (1.2, 0.8),
)
P = len(routes)
inst = NetworkInstance(P, (Zero(),) * P, (block,), demand, lower_bounds=(0.0,) * P)

x, lam, rep = solve_constrained(inst, np.zeros(P), NewtonConfig())
print("status:", rep.status.value, "after", len(rep.inner_reports), "multiplier updates")
print("path flows:", np.round(x, 6))
E = np.zeros((len(capacity), P))
for a, p, w in entries:
    E[a, p] = w
print("arc flows: ", np.round(E @ x, 6), " capacities", capacity)
print("demand multipliers:", lam)

# Wardrop-style check: used paths of one pair share the same marginal delay
g = gradient(refresh(inst, x))
for name, paths in (("A", [0, 1, 2]), ("B", [3, 4])):
    print(f"pair {name} marginal path delays:", {p: round(float(g[p]), 6) for p in paths})
print("violations per update:", ["%.1e" % v for v in rep.violations])
