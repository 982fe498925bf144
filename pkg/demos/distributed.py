"""Run the same solve centrally and on simulated path/arc processors.

Each path and each arc is a processor; arc-path incidences are the links and
a spanning tree over all processors carries reductions and broadcasts. With
ordered reductions inner products are summed in the same order on both sides
and F is summed exactly, so the two traces agree bitwise.
"""

import numpy as np

from pathnewton import CgConfig, NewtonConfig, build_topology, minimize, run_distributed_newton
from pathnewton.synthetic import SOLVABLE_ARCS, SOLVABLE_PATHS, random_instance

inst, x0 = random_instance(3, max_paths=12, max_arcs=6, strongly_convex_r=True,
                           arc_families=SOLVABLE_ARCS, path_families=SOLVABLE_PATHS)
print(f"P={inst.num_paths}  A={inst.num_arcs}  T={inst.num_entries}")

cfg = NewtonConfig(cg=CgConfig(ordered_reductions=True))
_, central = minimize(inst, x0, cfg)
tree = build_topology(inst, seed=7, shape="random-member")
_, dist, stats = run_distributed_newton(inst, x0, cfg, tree)

print(f"{'k':>2} {'F central':>22} {'F distributed':>22}  cg")
for a, b in zip(central.rows, dist.rows):
    print(f"{a.outer_iter:>2} {a.F:>22.17g} {b.F:>22.17g}  {a.cg_iters}/{b.cg_iters}")
same = all((a.F, a.grad_inf, a.cg_iters, a.stepsize) == (b.F, b.grad_inf, b.cg_iters, b.stepsize)
           for a, b in zip(central.rows, dist.rows))
print("identical traces:", same)

print(f"\n{stats.rounds} rounds, {stats.messages} messages")
for kind, n in sorted(stats.by_kind.items()):
    print(f"  {kind:<17} {n}")
phase = stats.cg_iteration_phases()[0]
print(f"data messages in phase {phase!r}: {stats.data_messages(phase)} (2T = {2 * inst.num_entries})")
print("log digest:", stats.digest()[:16])
