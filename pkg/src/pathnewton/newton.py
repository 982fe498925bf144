"""Truncated Newton-CG outer loop, with first-order baselines.

Each outer iteration computes a direction (CG on the Newton model, or a
scaled gradient), caps the trial stepsize so that every iterate stays strictly
inside barrier-like cost domains, and then applies either a constant stepsize
or Armijo backtracking.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Union

import numpy as np

from .calculus import (
    FlowState,
    OpCounter,
    accumulate_arcs,
    gradient,
    hessian_diagonal,
    objective,
    refresh,
    sequential_dot,
)
from .cg import CgConfig, PrecondKind, Termination, build_preconditioner, solve_preconditioned
from .costs import INF, DomainError, max_step_to_boundary
from .instance import NetworkInstance


class Method(str, Enum):
    NEWTON_CG = "newton-cg"
    DIAG_GRAD = "diag-grad"
    STEEPEST = "steepest"


class Status(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max-iters"
    LINE_SEARCH_FAILURE = "line-search-failure"


class LineSearchFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Constant:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("constant stepsize must be positive")


@dataclass(frozen=True)
class Armijo:
    sigma: float = 1e-4
    factor: float = 0.5
    initial: float = 1.0
    max_backtracks: int = 60

    def __post_init__(self):
        if not (0 < self.sigma < 1 and 0 < self.factor < 1 and self.initial > 0 and self.max_backtracks >= 0):
            raise ValueError("Armijo parameters out of range")


StepsizeRule = Union[Constant, Armijo]


@dataclass
class NewtonConfig:
    method: Method = Method.NEWTON_CG
    cg: CgConfig = field(default_factory=CgConfig)
    precond: PrecondKind = PrecondKind.NONE
    stepsize: StepsizeRule = field(default_factory=Armijo)
    grad_tol: float = 1e-8
    max_outer: int = 100
    feasibility_fraction: float = 0.99
    # "sqrt": CG tolerance min(0.5, sqrt(||g||)); "fixed": cg.rel_residual_tol
    forcing: str = "sqrt"
    record_iterates: bool = False

    def __post_init__(self):
        self.method = Method(self.method)
        self.precond = PrecondKind(self.precond)
        if not 0 < self.feasibility_fraction < 1:
            raise ValueError("feasibility_fraction must lie in (0, 1)")
        if self.forcing not in ("sqrt", "fixed"):
            raise ValueError("forcing must be 'sqrt' or 'fixed'")
        if self.grad_tol < 0 or self.max_outer < 0:
            raise ValueError("grad_tol and max_outer must be nonnegative")


@dataclass
class NewtonRow:
    outer_iter: int
    F: float
    grad_inf: float
    source: str
    cg_iters: int
    cg_termination: str
    stepsize: float
    op_delta: int
    elapsed: float


@dataclass
class NewtonReport:
    rows: List[NewtonRow] = field(default_factory=list)
    status: Status = Status.MAX_ITERS
    iterates: List[np.ndarray] = field(default_factory=list)
    ops_total: int = 0

    @property
    def iterations(self) -> int:
        return len(self.rows) - 1

    @property
    def unit_step_rate(self) -> float:
        steps = [r.stepsize for r in self.rows[1:]]
        return sum(s == 1.0 for s in steps) / len(steps) if steps else float("nan")


def _dot(config: NewtonConfig):
    if config.cg.ordered_reductions:
        return sequential_dot
    return lambda a, b: float(np.dot(a, b))


def forcing_tolerance(g, config: NewtonConfig) -> Optional[float]:
    if config.forcing == "fixed":
        return None
    return min(0.5, math.sqrt(math.sqrt(_dot(config)(g, g))))


def compute_direction(state: FlowState, g, config: NewtonConfig):
    """Return ``(y, source, cg_iters, cg_termination)``."""
    if config.method is Method.STEEPEST:
        return -g, "gradient", 0, ""
    if config.method is Method.DIAG_GRAD:
        d = hessian_diagonal(state)
        pos = d > 0.0
        y = -g.copy()
        y[pos] = -g[pos] / d[pos]
        return y, "diag", 0, ""
    pre = build_preconditioner(state, config.precond)
    out = solve_preconditioned(state, g, pre, config.cg, tol=forcing_tolerance(g, config))
    source = "escape" if out.termination is Termination.ZERO_CURVATURE else "cg"
    return out.y, source, out.iters, out.termination.value


def boundary_step(state: FlowState, y) -> float:
    """Distance (in stepsize units) along ``y`` to the nearest domain bound."""
    inst = state.instance
    cap = INF
    for p, fn in enumerate(inst.path_costs):
        cap = min(cap, max_step_to_boundary(fn, float(state.x[p]), float(y[p])))
    fy = accumulate_arcs(inst, y)
    state.ops.add(inst.num_entries)
    for a, fn in enumerate(inst.arc_costs):
        cap = min(cap, max_step_to_boundary(fn, float(state.arc_flows[a]), float(fy[a])))
    return cap


def _trial(state, alpha, y):
    try:
        return refresh(state.instance, state.x + alpha * y, state.ops)
    except DomainError:
        return None


def armijo_search(state: FlowState, y, config: NewtonConfig, F=None, gty=None, alpha0=None):
    """Backtrack ``alpha0 * factor^j`` until ``F(x + a y) <= F(x) + sigma a g'y``.

    Returns ``(alpha, trial_state)``. Raises LineSearchFailure after
    ``max_backtracks`` reductions.
    """
    rule = config.stepsize if isinstance(config.stepsize, Armijo) else Armijo()
    if F is None:
        F = objective(state, config.cg.ordered_reductions)
    if gty is None:
        gty = _dot(config)(gradient(state), y)
    if not gty < 0:
        raise ValueError("armijo_search needs a descent direction")
    if alpha0 is None:
        alpha0 = rule.initial
        cap = boundary_step(state, y)
        if cap < INF:
            alpha0 = min(alpha0, config.feasibility_fraction * cap)
    alpha = alpha0
    for _ in range(rule.max_backtracks + 1):
        trial = _trial(state, alpha, y)
        if trial is not None and objective(trial, config.cg.ordered_reductions) <= F + rule.sigma * alpha * gty:
            return alpha, trial
        alpha *= rule.factor
    raise LineSearchFailure(f"no acceptable stepsize after {rule.max_backtracks} backtracks")


def take_step(state: FlowState, F, g, y, config: NewtonConfig):
    """Choose the stepsize along ``y``; returns ``(alpha, new_state, y, fell_back)``."""
    dot = _dot(config)
    gty = dot(g, y)
    cap = boundary_step(state, y)
    fell_back = False
    if not gty < 0:
        y = -g
        fell_back = True
        gty = dot(g, y)
        cap = boundary_step(state, y)
        if not gty < 0:
            # g'g underflowed: no usable descent direction left
            raise LineSearchFailure("no descent direction")
    rule = config.stepsize
    alpha0 = rule.alpha if isinstance(rule, Constant) else rule.initial
    if cap < INF:
        alpha0 = min(alpha0, config.feasibility_fraction * cap)
    if isinstance(rule, Constant):
        trial = _trial(state, alpha0, y)
        if trial is None:
            raise LineSearchFailure("constant step left the cost domain")
        return alpha0, trial, y, fell_back
    alpha, trial = armijo_search(state, y, config, F=F, gty=gty, alpha0=alpha0)
    return alpha, trial, y, fell_back


def minimize(instance: NetworkInstance, x0, config: Optional[NewtonConfig] = None):
    """Minimize ``F`` from ``x0``; returns ``(x, NewtonReport)``.

    Stops when ``||g||_inf <= grad_tol`` (Converged), after ``max_outer``
    iterations (MaxIters), or when the line search fails. An infeasible
    ``x0`` raises DomainError.
    """
    config = config or NewtonConfig()
    instance.require_valid()
    ops = OpCounter()
    t0 = time.perf_counter()
    state = refresh(instance, x0, ops)
    F = objective(state, config.cg.ordered_reductions)
    g = gradient(state)
    gmax = float(np.max(np.abs(g)))
    report = NewtonReport()
    report.rows.append(NewtonRow(0, F, gmax, "initial", 0, "", 0.0, ops.count, time.perf_counter() - t0))
    if config.record_iterates:
        report.iterates.append(state.x.copy())
    k = 0
    while True:
        if gmax <= config.grad_tol:
            report.status = Status.CONVERGED
            break
        if k >= config.max_outer:
            report.status = Status.MAX_ITERS
            break
        ops_start = ops.count
        y, source, cg_iters, term = compute_direction(state, g, config)
        try:
            alpha, state, y, fell_back = take_step(state, F, g, y, config)
        except LineSearchFailure:
            report.status = Status.LINE_SEARCH_FAILURE
            break
        if fell_back:
            source = "gradient-fallback"
        k += 1
        F = objective(state, config.cg.ordered_reductions)
        g = gradient(state)
        gmax = float(np.max(np.abs(g)))
        report.rows.append(
            NewtonRow(k, F, gmax, source, cg_iters, term, alpha, ops.count - ops_start, time.perf_counter() - t0)
        )
        if config.record_iterates:
            report.iterates.append(state.x.copy())
    report.ops_total = ops.count
    return state.x.copy(), report
