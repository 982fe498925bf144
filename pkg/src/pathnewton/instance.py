"""Static path-flow problem data.

A problem has ``P`` paths and one or more coupling blocks. Each block is a
sparse weighted arc-path matrix ``E`` (rows arcs, columns paths) with one
scalar cost per arc, so that the objective is

    F(x) = sum_p R_p(x_p) + sum_blocks sum_a D_a((E x)_a)

Entries are kept canonically sorted by ``(arc, path)`` inside each block; all
accumulation sweeps rely on that order for bitwise reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .costs import ScalarCostFn, Zero

Entry = Tuple[int, int, float]


class InvalidIdError(IndexError):
    pass


class InvalidInstanceError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid instance: " + "; ".join(self.violations))


@dataclass(frozen=True)
class CouplingBlock:
    entries: Tuple[Entry, ...]
    arc_costs: Tuple[ScalarCostFn, ...]
    arc_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        ents = tuple((int(a), int(p), float(w)) for a, p, w in self.entries)
        object.__setattr__(self, "entries", tuple(sorted(ents, key=lambda e: (e[0], e[1]))))
        object.__setattr__(self, "arc_costs", tuple(self.arc_costs))
        if self.arc_names is not None:
            object.__setattr__(self, "arc_names", tuple(self.arc_names))

    @property
    def num_arcs(self) -> int:
        return len(self.arc_costs)

    @property
    def num_entries(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class EqualityConstraints:
    """Rows of ``B x = b``; each row is a tuple of ``(path, coeff)`` pairs."""

    rows: Tuple[Tuple[Tuple[int, float], ...], ...]
    rhs: Tuple[float, ...]

    def __post_init__(self):
        rows = tuple(tuple(sorted((int(p), float(c)) for p, c in row)) for row in self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "rhs", tuple(float(b) for b in self.rhs))

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.rows))
        for i, row in enumerate(self.rows):
            s = 0.0
            for p, c in row:
                s += c * x[p]
            out[i] = s
        return out

    def rmatvec(self, lam: np.ndarray, num_paths: int) -> np.ndarray:
        out = np.zeros(num_paths)
        for i, row in enumerate(self.rows):
            for p, c in row:
                out[p] += c * lam[i]
        return out

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(x) - np.asarray(self.rhs)

    def dense(self, num_paths: int) -> np.ndarray:
        B = np.zeros((len(self.rows), num_paths))
        for i, row in enumerate(self.rows):
            for p, c in row:
                B[i, p] = c
        return B


@dataclass(frozen=True)
class NetworkInstance:
    num_paths: int
    path_costs: Tuple[ScalarCostFn, ...]
    blocks: Tuple[CouplingBlock, ...]
    equality_constraints: Optional[EqualityConstraints] = None
    lower_bounds: Optional[Tuple[float, ...]] = None
    path_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "path_costs", tuple(self.path_costs))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.lower_bounds is not None:
            object.__setattr__(self, "lower_bounds", tuple(float(b) for b in self.lower_bounds))
        if self.path_names is not None:
            object.__setattr__(self, "path_names", tuple(self.path_names))

    @property
    def num_arcs(self) -> int:
        return sum(b.num_arcs for b in self.blocks)

    @property
    def num_entries(self) -> int:
        return sum(b.num_entries for b in self.blocks)

    @property
    def has_constraints(self) -> bool:
        return self.equality_constraints is not None and self.equality_constraints.num_rows > 0

    @property
    def has_bounds(self) -> bool:
        return self.lower_bounds is not None and any(b > -math.inf for b in self.lower_bounds)

    @cached_property
    def arc_offsets(self) -> np.ndarray:
        """Global index of the first arc of each block (arcs numbered block by block)."""
        return np.cumsum([0] + [b.num_arcs for b in self.blocks])

    @cached_property
    def arc_costs(self) -> Tuple[ScalarCostFn, ...]:
        return tuple(c for b in self.blocks for c in b.arc_costs)

    @cached_property
    def sweep_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(global_arc, path, weight)`` over all entries, block order then entry order."""
        arcs, paths, weights = [], [], []
        for off, blk in zip(self.arc_offsets, self.blocks):
            for a, p, w in blk.entries:
                arcs.append(off + a)
                paths.append(p)
                weights.append(w)
        return (
            np.asarray(arcs, dtype=np.intp),
            np.asarray(paths, dtype=np.intp),
            np.asarray(weights, dtype=float),
        )

    @cached_property
    def report(self) -> "ValidationReport":
        return validate(self)

    def require_valid(self) -> None:
        if not self.report.ok:
            raise InvalidInstanceError(self.report.violations)

    def with_blocks(self, extra: Sequence[CouplingBlock], path_costs=None) -> "NetworkInstance":
        """Unconstrained copy with extra blocks appended (and optionally new path costs)."""
        return NetworkInstance(
            num_paths=self.num_paths,
            path_costs=self.path_costs if path_costs is None else tuple(path_costs),
            blocks=self.blocks + tuple(extra),
            path_names=self.path_names,
        )


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)
    num_paths: int = 0
    num_arcs: int = 0
    num_entries: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _finite(x) -> bool:
    try:
        return math.isfinite(x)
    except TypeError:
        return False


def validate(instance: NetworkInstance) -> ValidationReport:
    """Collect every invariant violation of ``instance``; never raises."""
    out = []
    P = instance.num_paths
    if not isinstance(P, (int, np.integer)) or P <= 0:
        out.append("num_paths must be positive")
        P = 0
    if len(instance.path_costs) != P:
        out.append(f"expected {P} path costs, got {len(instance.path_costs)}")
    if not instance.blocks:
        out.append("at least one coupling block is required")
    for bi, blk in enumerate(instance.blocks):
        seen = set()
        for a, p, w in blk.entries:
            if not 0 <= a < blk.num_arcs:
                out.append(f"block {bi}: entry references unknown arc {a}")
            if not 0 <= p < P:
                out.append(f"block {bi}: entry references unknown path {p}")
            if not _finite(w) or w == 0.0:
                out.append(f"block {bi}: entry ({a}, {p}) has non-finite or zero weight {w!r}")
            if (a, p) in seen:
                out.append(f"block {bi}: duplicate coupling entry ({a}, {p})")
            seen.add((a, p))
        if blk.arc_names is not None and len(blk.arc_names) != blk.num_arcs:
            out.append(f"block {bi}: arc name table length mismatch")
    ec = instance.equality_constraints
    if ec is not None:
        if len(ec.rows) != len(ec.rhs):
            out.append("constraint rows and rhs have different lengths")
        for i, row in enumerate(ec.rows):
            if not row:
                out.append(f"constraint {i} is empty")
            ps = [p for p, _ in row]
            if len(set(ps)) != len(ps):
                out.append(f"constraint {i} repeats a path")
            for p, c in row:
                if not 0 <= p < P:
                    out.append(f"constraint {i} references unknown path {p}")
                if not _finite(c):
                    out.append(f"constraint {i} has non-finite coefficient")
        if not all(_finite(b) for b in ec.rhs):
            out.append("constraint rhs must be finite")
    if instance.lower_bounds is not None:
        if len(instance.lower_bounds) != P:
            out.append("lower_bounds length must equal num_paths")
        if any(math.isnan(b) or b == math.inf for b in instance.lower_bounds):
            out.append("lower bounds must be finite or -inf")
    if instance.path_names is not None and len(instance.path_names) != P:
        out.append("path name table length mismatch")
    return ValidationReport(
        violations=out,
        num_paths=P,
        num_arcs=sum(b.num_arcs for b in instance.blocks),
        num_entries=sum(b.num_entries for b in instance.blocks),
    )


def incidence_row(instance: NetworkInstance, arc: int, block: int = 0) -> List[Tuple[int, float]]:
    """Paths coupled to ``arc`` of ``block`` as ``(path, weight)``, ascending path."""
    if not 0 <= block < len(instance.blocks):
        raise InvalidIdError(f"unknown block {block}")
    blk = instance.blocks[block]
    if not 0 <= arc < blk.num_arcs:
        raise InvalidIdError(f"unknown arc {arc} in block {block}")
    return [(p, w) for a, p, w in blk.entries if a == arc]


def path_entries(instance: NetworkInstance, path: int) -> List[Tuple[int, int, float]]:
    """Coupling entries of ``path`` as ``(block, arc, weight)`` in sweep order."""
    if not 0 <= path < instance.num_paths:
        raise InvalidIdError(f"unknown path {path}")
    return [(bi, a, w) for bi, blk in enumerate(instance.blocks) for a, p, w in blk.entries if p == path]


def single_block(num_paths, entries, arc_costs, path_costs=None, **kw) -> NetworkInstance:
    """Convenience constructor for the classic one-block problem."""
    if path_costs is None:
        path_costs = [Zero()] * num_paths
    return NetworkInstance(
        num_paths=num_paths,
        path_costs=tuple(path_costs),
        blocks=(CouplingBlock(tuple(entries), tuple(arc_costs)),),
        **kw,
    )
