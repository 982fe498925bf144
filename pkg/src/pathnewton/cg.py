"""Conjugate gradient on the Newton model ``C(y) = g'y + y'Hy / 2``.

Matrix-free: the only access to ``H`` is :func:`calculus.hessian_vector_product`,
one call per iteration. A diagonal preconditioner is applied as an inverse
diagonal ``S``, so the preconditioned recursion reads

    y+ = y + a p,   a = r'Sr / p'Hp
    r+ = r + a Hp
    p+ = -S r+ + b p,   b = r+'S r+ / r'Sr

starting from ``y = 0, r = g, p = -S g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .calculus import FlowState, hessian_diagonal, hessian_vector_product, sequential_dot


class Termination(str, Enum):
    CONVERGED = "converged"
    ITER_BUDGET = "budget"
    ZERO_CURVATURE = "zero-curvature-escape"


class PrecondKind(str, Enum):
    NONE = "none"
    DIAG_HESSIAN = "diag-h"
    DIAG_R = "diag-r"


class NumericalBreakdown(ArithmeticError):
    def __init__(self, iteration, what):
        self.iteration = iteration
        super().__init__(f"non-finite {what} at CG iteration {iteration}")


class PreconditionerError(ValueError):
    pass


class ResidualMismatch(AssertionError):
    pass


@dataclass(frozen=True)
class Preconditioner:
    kind: PrecondKind
    values: Optional[np.ndarray] = None  # inverse diagonal actually applied; None = identity

    def apply(self, r):
        return r if self.values is None else self.values * r


def build_preconditioner(state: FlowState, kind) -> Preconditioner:
    """Inverse of ``diag(H)`` or of ``diag(R'')`` at ``state``.

    Raises PreconditionerError if any inverse entry is not finite and positive.
    """
    kind = PrecondKind(kind)
    if kind is PrecondKind.NONE:
        return Preconditioner(kind)
    if kind is PrecondKind.DIAG_HESSIAN:
        d = hessian_diagonal(state)
    else:
        d = state.path_d2.copy()
        state.ops.add(state.instance.num_paths)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    bad = ~(np.isfinite(inv) & (inv > 0.0))
    if bad.any():
        raise PreconditionerError(
            f"{kind.value} preconditioner needs positive diagonal; bad paths {np.flatnonzero(bad).tolist()}"
        )
    return Preconditioner(kind, inv)


@dataclass
class CgConfig:
    max_iters: Optional[int] = None  # None means P
    rel_residual_tol: float = 1e-10
    curvature_tol: float = 1e-14
    escape_step: float = 1.0
    verify_residual: bool = False
    ordered_reductions: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.rel_residual_tol > 0 and self.curvature_tol > 0 and self.escape_step > 0):
            raise ValueError("CG tolerances and escape_step must be positive")


@dataclass
class CgOutcome:
    y: np.ndarray
    iters: int
    residual_norms: List[float]
    termination: Termination
    model_decrease: float
    model_history: List[float] = field(default_factory=list)
    ops_per_iter: List[int] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)


def curvature_safeguard(g, y, p, k, config: CgConfig):
    """Descent ray used when CG meets (near) zero curvature along ``p``.

    At ``k = 0`` there is no CG progress yet, so fall back to ``-g``.
    Otherwise move from ``y`` along ``p``, which keeps decreasing the model.
    """
    if k == 0:
        return -g
    return y + config.escape_step * p


def _dot_fn(config):
    if config.ordered_reductions:
        return sequential_dot
    return lambda a, b: float(np.dot(a, b))


def _run(state: FlowState, g, precond: Preconditioner, config: CgConfig, tol: Optional[float]):
    dot = _dot_fn(config)
    tol = config.rel_residual_tol if tol is None else tol
    g = np.asarray(g, dtype=float)
    P = g.shape[0]
    max_iters = config.max_iters or P
    y = np.zeros(P)
    r = g.copy()
    z = precond.apply(r)
    rz = dot(r, z)
    rz0 = rz
    out = CgOutcome(y, 0, [math.sqrt(max(rz, 0.0))], Termination.CONVERGED, 0.0, [0.0])
    if config.keep_iterates:
        out.iterates.append(y.copy())
    if rz0 == 0.0:
        return out
    p = -z
    model = 0.0
    k = 0
    while True:
        ops_start = state.ops.count
        w = hessian_vector_product(state, p)
        pHp = dot(p, w)
        scale = math.sqrt(dot(p, p) * dot(w, w))
        if not (math.isfinite(pHp) and math.isfinite(scale)):
            raise NumericalBreakdown(k, "curvature")
        if pHp <= config.curvature_tol * scale:
            d = curvature_safeguard(g, y, p, k, config)
            if k == 0:
                gHg = pHp if precond.values is None else dot(g, hessian_vector_product(state, g))
                model = -dot(g, g) + 0.5 * gHg
            else:
                s = config.escape_step
                model = model + s * dot(p, r) + 0.5 * s * s * pHp
            out.y = d
            out.termination = Termination.ZERO_CURVATURE
            out.model_decrease = model
            out.iters = k
            return out
        alpha = rz / pHp
        y = y + alpha * p
        r = r + alpha * w
        z = precond.apply(r)
        rz_new = dot(r, z)
        model -= 0.5 * alpha * rz
        k += 1
        if not math.isfinite(rz_new):
            raise NumericalBreakdown(k, "residual")
        if config.verify_residual:
            r_true = g + hessian_vector_product(state, y)
            gap = float(np.linalg.norm(r_true - r))
            if gap > 1e-10 * max(float(np.linalg.norm(g)), 1e-300):
                raise ResidualMismatch(f"recursive residual drifted by {gap:.3e} at iteration {k}")
        out.ops_per_iter.append(state.ops.count - ops_start)
        out.residual_norms.append(math.sqrt(max(rz_new, 0.0)))
        out.model_history.append(model)
        if config.keep_iterates:
            out.iterates.append(y.copy())
        out.y, out.iters, out.model_decrease = y, k, model
        if math.sqrt(max(rz_new, 0.0)) <= tol * math.sqrt(rz0):
            out.termination = Termination.CONVERGED
            return out
        if k >= max_iters:
            out.termination = Termination.ITER_BUDGET
            return out
        beta = rz_new / rz
        rz = rz_new
        p = -z + beta * p


def solve_plain(state: FlowState, g, config: Optional[CgConfig] = None, tol: Optional[float] = None) -> CgOutcome:
    """Unpreconditioned CG from ``y = 0``.

    ``tol`` overrides ``config.rel_residual_tol`` (used by the outer forcing
    rule). Stops when ``||r|| <= tol * ||g||``, on the iteration budget, or on
    the zero-curvature safeguard.
    """
    return _run(state, g, Preconditioner(PrecondKind.NONE), config or CgConfig(), tol)


def solve_preconditioned(
    state: FlowState, g, precond: Preconditioner, config: Optional[CgConfig] = None, tol: Optional[float] = None
) -> CgOutcome:
    """Diagonally preconditioned CG; the stopping test uses the S-norm
    ``sqrt(r'Sr)``. With ``precond.kind == NONE`` this is ``solve_plain``."""
    return _run(state, g, precond, config or CgConfig(), tol)
