"""Walk through the two-path, two-arc instance by hand.

Path 0 uses arcs 0 and 1, path 1 uses arc 1; all costs are z^2/2. At
x = (1, 1) the arc flows are (1, 2), so g = (4, 3) and H = [[3, 1], [1, 2]].
"""

import numpy as np

from pathnewton import (
    CgConfig,
    NewtonConfig,
    dense_hessian_oracle,
    gradient,
    hessian_vector_product,
    minimize,
    objective,
    refresh,
    serialize_instance,
    solve_plain,
)
from pathnewton.synthetic import t1

inst = t1()
print(serialize_instance(inst))

x = np.array([1.0, 1.0])
s = refresh(inst, x)
g = gradient(s)
print("F(x)   =", objective(s))
print("g(x)   =", g)
print("H e0   =", hessian_vector_product(s, np.array([1.0, 0.0])))
print("H e1   =", hessian_vector_product(s, np.array([0.0, 1.0])))
print("dense H =\n", dense_hessian_oracle(inst, x))
print("ops so far:", s.ops.count)

# CG on a 2x2 SPD system terminates in two iterations with H y = -g
out = solve_plain(s, g, CgConfig())
print("\nCG direction", out.y, "after", out.iters, "iterations,", out.termination.value)
print("residual norms", ["%.2e" % r for r in out.residual_norms])
print("model decrease C(y) =", out.model_decrease)

# the problem is quadratic, so one exact Newton step with alpha = 1 lands on x* = 0
x_star, rep = minimize(inst, x, NewtonConfig(forcing="fixed"))
print("\nminimizer", x_star, "status", rep.status.value)
for r in rep.rows:
    print(f"  k={r.outer_iter}  F={r.F:.3e}  |g|inf={r.grad_inf:.3e}  cg={r.cg_iters}  step={r.stepsize}")
