"""Small canonical instances and a random instance generator.

The random generator always returns a point that lies strictly inside every
cost domain, together with the instance.
"""

from __future__ import annotations

import numpy as np

from .costs import KleinrockDelay, NegPartPenalty, PowerMonomial, Quadratic, Zero
from .instance import CouplingBlock, EqualityConstraints, NetworkInstance, single_block


def t1(path_cost=None, arc_cost=None) -> NetworkInstance:
    """Two paths, two arcs: path 0 uses arcs 0 and 1, path 1 uses arc 1."""
    path_cost = path_cost or Quadratic(1.0, 0.0, 0.0)
    arc_cost = arc_cost or Quadratic(1.0, 0.0, 0.0)
    return single_block(
        2,
        [(0, 0, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
        [arc_cost, arc_cost],
        [path_cost, path_cost],
        path_names=("p1", "p2"),
    )


def kleinrock_scalar() -> NetworkInstance:
    """``F(x) = x/(2-x) - 2x``, stationary at ``x = 1``."""
    return single_block(1, [(0, 0, 1.0)], [KleinrockDelay(2.0)], [Quadratic(0.0, 0.0, -2.0)])


def diagonal(q) -> NetworkInstance:
    """No coupling at all: ``H = diag(q)``."""
    q = np.asarray(q, dtype=float)
    return NetworkInstance(len(q), tuple(Quadratic(float(v), 0.0, 0.0) for v in q), (CouplingBlock((), ()),))


def equality_qp() -> NetworkInstance:
    """``min (x1^2 + x2^2)/2  s.t.  x1 + x2 = 1``."""
    base = diagonal([1.0, 1.0])
    return NetworkInstance(
        2, base.path_costs, base.blocks, equality_constraints=EqualityConstraints((((0, 1.0), (1, 1.0)),), (1.0,))
    )


# Families whose domains are open or guarded by a barrier, so a strongly
# convex R guarantees an interior minimizer (PowerMonomial's hard z >= 0 edge
# can pin the minimizer on the boundary).
SOLVABLE_ARCS = ("quadratic", "kleinrock", "negpart")
SOLVABLE_PATHS = ("quadratic", "kleinrock")


def _weight(rng, unit):
    if unit:
        return 1.0
    w = 0.0
    while abs(w) < 0.1:
        w = rng.uniform(-2.0, 2.0)
    return float(w)


def _arc_cost(rng, f, families):
    kind = families[rng.integers(len(families))]
    if kind == "kleinrock":
        return KleinrockDelay(float(max(f, 0.0) + rng.uniform(0.5, 3.0)))
    if kind == "power" and f > 0.05:
        return PowerMonomial(float(rng.uniform(0.2, 2.0)), int(rng.integers(2, 5)))
    if kind == "negpart":
        return NegPartPenalty(float(rng.uniform(0.5, 2.0)), float(f + rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 1.0)))
    return Quadratic(float(rng.uniform(0.2, 2.0)), float(rng.normal()), float(rng.normal()))


def _path_cost(rng, x, families, strongly_convex):
    if strongly_convex:
        kind = families[rng.integers(len(families))]
        if kind == "kleinrock":
            return KleinrockDelay(float(x + rng.uniform(0.5, 3.0)))
        if kind == "power":
            # k = 2 keeps R'' bounded away from 0 near x = 0
            return PowerMonomial(float(rng.uniform(0.5, 2.0)), 2)
        return Quadratic(float(rng.uniform(0.5, 2.0)), float(rng.normal()), float(rng.normal()))
    if tuple(families) == ("quadratic",):
        return Quadratic(float(rng.uniform(0.0, 2.0)), float(rng.normal()), float(rng.normal()))
    kind = rng.integers(4)
    if kind == 0:
        return Zero()
    if kind == 1:
        return PowerMonomial(float(rng.uniform(0.2, 2.0)), int(rng.integers(2, 4)))
    if kind == 2:
        return KleinrockDelay(float(x + rng.uniform(0.5, 3.0)))
    return Quadratic(float(rng.uniform(0.0, 2.0)), float(rng.normal()), float(rng.normal()))


def random_instance(
    rng,
    num_paths=None,
    num_arcs=None,
    max_paths=20,
    max_arcs=10,
    max_blocks=3,
    unit_weights=False,
    strongly_convex_r=False,
    arc_families=("quadratic", "kleinrock", "power", "negpart"),
    density=0.35,
    path_families=("quadratic", "kleinrock", "power"),
):
    """Random multi-block instance and a strictly feasible point.

    Every path has at least one coupling entry and every arc at least one
    member path. Total arcs across blocks equals ``num_arcs``.
    """
    rng = np.random.default_rng(rng)
    P = int(num_paths if num_paths is not None else rng.integers(2, max_paths + 1))
    A = int(num_arcs if num_arcs is not None else rng.integers(1, max_arcs + 1))
    m = int(rng.integers(1, min(max_blocks, A) + 1))
    cuts = np.sort(rng.choice(np.arange(1, A), size=m - 1, replace=False)) if m > 1 else np.array([], dtype=int)
    sizes = np.diff(np.concatenate([[0], cuts, [A]])).astype(int)
    x = rng.uniform(0.1, 1.0, size=P)

    memberships = []
    for na in sizes:
        mask = rng.random((na, P)) < density
        for a in range(na):
            if not mask[a].any():
                mask[a, rng.integers(P)] = True
        memberships.append(mask)
    for p in range(P):
        if not any(mask[:, p].any() for mask in memberships):
            b = int(rng.integers(m))
            memberships[b][rng.integers(sizes[b]), p] = True

    blocks = []
    for mask in memberships:
        entries = []
        for a, p in zip(*np.nonzero(mask)):
            entries.append((int(a), int(p), _weight(rng, unit_weights)))
        f = np.zeros(mask.shape[0])
        for a, p, w in entries:
            f[a] += w * x[p]
        costs = [_arc_cost(rng, f[a], arc_families) for a in range(mask.shape[0])]
        blocks.append(CouplingBlock(tuple(entries), tuple(costs)))
    path_costs = [_path_cost(rng, x[p], path_families, strongly_convex_r) for p in range(P)]
    return NetworkInstance(P, tuple(path_costs), tuple(blocks)), x
