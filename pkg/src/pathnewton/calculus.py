"""Objective, gradient, Hessian diagonal and Hessian-vector products.

Everything here works in sweeps over the coupling entries, so each call costs
O(T) where T is the number of entries. The Hessian

    H = diag(R'') + sum_blocks E' diag(D'') E

is never formed, except by :func:`dense_hessian_oracle`, which exists for
tests only.

Operation counting: one unit per coupling-entry touch, per scalar cost
evaluation, and per path or arc combination step. The counts are exact, not
asymptotic, and tests assert them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .costs import DomainError
from .instance import NetworkInstance

ORACLE_CAP = 200

_revision = itertools.count(1)


class OpCounter:
    __slots__ = ("count",)

    def __init__(self, count: int = 0):
        self.count = count

    def add(self, n: int) -> None:
        self.count += int(n)

    def __repr__(self):
        return f"OpCounter({self.count})"


class OracleCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowState:
    """Path flows plus everything cached at them.

    Arc quantities are stored in one array with arcs numbered block by block
    (see ``NetworkInstance.arc_offsets``).
    """

    instance: NetworkInstance
    x: np.ndarray
    arc_flows: np.ndarray
    path_vals: np.ndarray
    path_d1: np.ndarray
    path_d2: np.ndarray
    arc_vals: np.ndarray
    arc_d1: np.ndarray
    arc_d2: np.ndarray
    ops: OpCounter
    revision: int

    def block_flows(self, block: int) -> np.ndarray:
        off = self.instance.arc_offsets
        return self.arc_flows[off[block] : off[block + 1]]


def _arc_label(instance, g):
    b = int(np.searchsorted(instance.arc_offsets, g, side="right") - 1)
    a = int(g - instance.arc_offsets[b])
    names = instance.blocks[b].arc_names
    name = f" ({names[a]})" if names else ""
    return f"arc {a}{name} of block {b}"


def accumulate_arcs(instance: NetworkInstance, v: np.ndarray) -> np.ndarray:
    """``E v`` for every block at once: per arc, sum of ``c_ap v_p`` in entry order."""
    arcs, paths, w = instance.sweep_arrays
    return np.bincount(arcs, weights=w * v[paths], minlength=instance.num_arcs)


def accumulate_paths(instance: NetworkInstance, u: np.ndarray) -> np.ndarray:
    """``E' u``: per path, sum of ``c_ap u_a`` in sweep order."""
    arcs, paths, w = instance.sweep_arrays
    return np.bincount(paths, weights=w * u[arcs], minlength=instance.num_paths)


def refresh(instance: NetworkInstance, x, ops: Optional[OpCounter] = None) -> FlowState:
    """Compute arc flows and all first/second derivatives at ``x``.

    Raises
    ------
    DomainError
        If some ``x_p`` or ``f_a`` lies outside its cost's domain; the error
        names the offending path or arc.
    """
    instance.require_valid()
    x = np.array(x, dtype=float)
    P, A, T = instance.num_paths, instance.num_arcs, instance.num_entries
    if x.shape != (P,):
        raise ValueError(f"x must have shape ({P},), got {x.shape}")
    ops = OpCounter() if ops is None else ops
    f = accumulate_arcs(instance, x)
    pv, p1, p2 = np.empty(P), np.empty(P), np.empty(P)
    for p, fn in enumerate(instance.path_costs):
        try:
            pv[p], p1[p], p2[p] = fn.eval(float(x[p]))
        except DomainError as e:
            raise e.located(f"path {p}") from None
    av, a1, a2 = np.empty(A), np.empty(A), np.empty(A)
    for g, fn in enumerate(instance.arc_costs):
        try:
            av[g], a1[g], a2[g] = fn.eval(float(f[g]))
        except DomainError as e:
            raise e.located(_arc_label(instance, g)) from None
    ops.add(T + P + A)
    return FlowState(instance, x, f, pv, p1, p2, av, a1, a2, ops, next(_revision))


def objective(state: FlowState, exact: bool = False) -> float:
    """``F(x)``. With ``exact`` the terms are summed without rounding, so the
    value does not depend on summation order."""
    if exact:
        vals = np.concatenate([state.path_vals, state.arc_vals])
        if np.all(np.isfinite(vals)):
            return exact_sum(vals)
    return float(np.sum(state.path_vals) + np.sum(state.arc_vals))


def gradient(state: FlowState) -> np.ndarray:
    """``g_p = R_p' + sum_a c_ap D_a'``; one pass over the entries."""
    inst = state.instance
    state.ops.add(inst.num_entries + inst.num_paths)
    return state.path_d1 + accumulate_paths(inst, state.arc_d1)


def hessian_diagonal(state: FlowState) -> np.ndarray:
    """``H_pp = R_p'' + sum_a c_ap^2 D_a''``; one pass over the entries."""
    inst = state.instance
    arcs, paths, w = inst.sweep_arrays
    state.ops.add(inst.num_entries + inst.num_paths)
    return state.path_d2 + np.bincount(paths, weights=(w * w) * state.arc_d2[arcs], minlength=inst.num_paths)


def hessian_vector_product(state: FlowState, v) -> np.ndarray:
    """``H v`` by two sweeps: accumulate ``f_{a,v} = (E v)_a`` along the arcs,
    then ``w_p = R_p'' v_p + sum_a c_ap D_a'' f_{a,v}`` along the paths.
    """
    inst = state.instance
    v = np.asarray(v, dtype=float)
    if v.shape != (inst.num_paths,):
        raise ValueError(f"v must have shape ({inst.num_paths},), got {v.shape}")
    fav = accumulate_arcs(inst, v)
    w = state.path_d2 * v + accumulate_paths(inst, state.arc_d2 * fav)
    state.ops.add(2 * inst.num_entries + inst.num_paths + inst.num_arcs)
    return w


def dense_hessian_oracle(instance: NetworkInstance, x, cap: int = ORACLE_CAP) -> np.ndarray:
    """Explicit ``diag(R'') + sum_i E_i' diag(D_i'') E_i``. Test use only."""
    if instance.num_paths > cap:
        raise OracleCapExceeded(f"P={instance.num_paths} exceeds oracle cap {cap}")
    st = refresh(instance, x)
    P = instance.num_paths
    H = np.diag(st.path_d2.copy())
    for off, blk in zip(instance.arc_offsets, instance.blocks):
        E = np.zeros((blk.num_arcs, P))
        for a, p, w in blk.entries:
            E[a, p] = w
        d2 = st.arc_d2[off : off + blk.num_arcs]
        H += E.T @ (d2[:, None] * E)
    # matmul rounding is not symmetric; averaging restores exact symmetry
    return 0.5 * (H + H.T)


class ExactUnits(int):
    """A sum of doubles held exactly, as an integer count of 2**-1074."""

    SHIFT = 1074

    @classmethod
    def of(cls, v) -> "ExactUnits":
        n, d = float(v).as_integer_ratio()
        return cls(n * ((1 << cls.SHIFT) // d))

    def __add__(self, other):
        return ExactUnits(int(self) + int(other))

    __radd__ = __add__

    def __float__(self):
        # int / int true division is correctly rounded
        return int(self) / (1 << self.SHIFT)


def exact_sum(values) -> float:
    """Correctly rounded sum, independent of the order of ``values``."""
    total = ExactUnits(0)
    for v in values:
        total = total + ExactUnits.of(v)
    return float(total)


def sequential_dot(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product summed left to right, matching a tree reduction whose
    leader visits paths in ascending order."""
    prod = a * b
    if prod.size == 0:
        return 0.0
    return float(np.add.accumulate(prod)[-1])
