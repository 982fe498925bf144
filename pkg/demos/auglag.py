"""Method of multipliers on a bound- and equality-constrained variant of T1.

Minimize the T1 objective subject to x0 + x1 = 2. KKT gives x = (2/3, 4/3)
and lambda = -10/3.
"""

import numpy as np

from pathnewton import AugLagConfig, EqualityConstraints, NetworkInstance, solve_constrained
from pathnewton.synthetic import t1

base = t1()
inst = NetworkInstance(2, base.path_costs, base.blocks, EqualityConstraints((((0, 1.0), (1, 1.0)),), (2.0,)))
x, lam, rep = solve_constrained(inst, np.zeros(2), al_config=AugLagConfig(feas_tol=1e-10))
print("x      =", x, " expected", [2 / 3, 4 / 3])
print("lambda =", lam, " expected", -10 / 3)
print(f"{'update':>6} {'penalty':>10} {'violation':>10} {'inner iters':>11}")
for k, (c, v, r) in enumerate(zip(rep.penalties, rep.violations, rep.inner_reports)):
    print(f"{k:>6} {c:>10.3g} {v:>10.2e} {r.iterations:>11}")

# a lower bound that binds: x1 >= 1.5 pushes flow back onto path 0
bounded = NetworkInstance(2, base.path_costs, base.blocks, inst.equality_constraints, lower_bounds=(-np.inf, 1.5))
x, lam, rep = solve_constrained(bounded, np.zeros(2))
print("\nwith x1 >= 1.5:", x, "lambda", lam, "bound multipliers", rep.bound_multipliers)
