"""Equality constraints and lower bounds by the method of multipliers.

For fixed multipliers the augmented objective

    F(x) + lam'(Bx - b) + c/2 ||Bx - b||^2

is again of the path-flow form: the rows of ``B`` become the arcs of one
extra coupling block, each carrying ``Quadratic(q=c, t=b_i, l=lam_i)``. Its
Hessian contribution ``c B'B`` is exactly an ``E' D E`` term, so calculus needs
nothing new. (The block's value differs from the expression above by the
constant ``lam'b``.)

Lower bounds ``x_p >= l_p`` use the inequality form of the augmented
Lagrangian, which reduces to a shifted ``NegPartPenalty(c, l_p + mu_p / c)``
added to ``R_p`` (up to a constant), with ``mu_p <- max(0, mu_p + c (l_p - x_p))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

import numpy as np

from .calculus import gradient, refresh
from .costs import CostSum, NegPartPenalty, Quadratic
from .instance import CouplingBlock, NetworkInstance
from .newton import NewtonConfig, NewtonReport, Status, minimize


@dataclass
class AugLagState:
    multipliers: np.ndarray
    penalty: float
    growth: float = 10.0
    bound_multipliers: Optional[np.ndarray] = None
    violation_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.multipliers = np.asarray(self.multipliers, dtype=float)
        if not self.penalty > 0 or not self.growth > 1:
            raise ValueError("penalty must be > 0 and growth > 1")
        if self.bound_multipliers is not None:
            self.bound_multipliers = np.asarray(self.bound_multipliers, dtype=float)


@dataclass
class AugLagConfig:
    feas_tol: float = 1e-8
    max_updates: int = 50
    growth: float = 10.0
    initial_penalty: Optional[float] = None
    progress_factor: float = 4.0


class ALStatus(str, Enum):
    CONVERGED = "converged"
    BUDGET = "budget"
    INNER_FAILURE = "inner-failure"


@dataclass
class ConstrainedReport:
    status: ALStatus
    inner_reports: List[NewtonReport]
    violations: List[float]
    penalties: List[float]
    multipliers: List[np.ndarray]
    bound_multipliers: Optional[np.ndarray] = None


def augmented_objective(instance: NetworkInstance, aug: AugLagState) -> NetworkInstance:
    """Unconstrained instance whose objective is the augmented Lagrangian at ``aug``."""
    if not (instance.has_constraints or instance.has_bounds):
        raise ValueError("instance has neither equality constraints nor lower bounds")
    c = aug.penalty
    extra = []
    if instance.has_constraints:
        ec = instance.equality_constraints
        entries = [(i, p, coef) for i, row in enumerate(ec.rows) for p, coef in row]
        costs = [Quadratic(c, b, float(lam)) for b, lam in zip(ec.rhs, aug.multipliers)]
        extra.append(CouplingBlock(tuple(entries), tuple(costs)))
    path_costs = list(instance.path_costs)
    if instance.has_bounds:
        mu = aug.bound_multipliers
        if mu is None:
            mu = np.zeros(instance.num_paths)
        for p, lb in enumerate(instance.lower_bounds):
            if lb > -math.inf:
                pen = NegPartPenalty(c, lb + float(mu[p]) / c)
                path_costs[p] = CostSum((path_costs[p], pen))
    return instance.with_blocks(extra, path_costs)


def constraint_violation(instance: NetworkInstance, x) -> np.ndarray:
    if not instance.has_constraints:
        return np.zeros(0)
    return instance.equality_constraints.residual(np.asarray(x, dtype=float))


def bound_violation(instance: NetworkInstance, x) -> np.ndarray:
    if not instance.has_bounds:
        return np.zeros(0)
    return np.maximum(0.0, np.asarray(instance.lower_bounds) - np.asarray(x, dtype=float))


def multiplier_update(aug: AugLagState, violation, progress_factor: float = 4.0, measure=None) -> AugLagState:
    """``lam <- lam + c (Bx - b)``; grow ``c`` by ``growth`` unless the violation
    shrank by at least ``progress_factor`` since the previous update.

    ``measure`` replaces ``||violation||_inf`` in the progress test (used when
    bound violations count too).
    """
    v = np.asarray(violation, dtype=float)
    vnorm = float(np.max(np.abs(v))) if v.size else 0.0
    if measure is not None:
        vnorm = measure
    lam = aug.multipliers + aug.penalty * v
    c = aug.penalty
    hist = aug.violation_history + [vnorm]
    if len(aug.violation_history) and vnorm > aug.violation_history[-1] / progress_factor:
        c = c * aug.growth
    return AugLagState(lam, c, aug.growth, aug.bound_multipliers, hist)


def _update_bounds(instance, aug, x):
    if not instance.has_bounds:
        return aug.bound_multipliers
    mu = aug.bound_multipliers if aug.bound_multipliers is not None else np.zeros(instance.num_paths)
    lb = np.asarray(instance.lower_bounds)
    finite = lb > -math.inf
    out = np.where(finite, np.maximum(0.0, mu + aug.penalty * (np.where(finite, lb, 0.0) - x)), 0.0)
    return out


def _measure(instance, x, mu):
    """Infinity norm of equality residual and bound complementarity."""
    v = constraint_violation(instance, x)
    parts = [float(np.max(np.abs(v))) if v.size else 0.0]
    if instance.has_bounds:
        lb = np.asarray(instance.lower_bounds)
        finite = lb > -math.inf
        gap = np.where(finite, x - np.where(finite, lb, 0.0), 0.0)
        # violation for x < lb; for mu > 0 the bound should be active
        comp = np.where(finite, np.maximum(-gap, np.minimum(gap, mu if mu is not None else 0.0)), 0.0)
        parts.append(float(np.max(np.abs(comp))) if comp.size else 0.0)
    return max(parts), v


def initial_penalty(instance: NetworkInstance, x0) -> float:
    st = refresh(instance, x0)
    g = gradient(st)
    gnorm = float(np.max(np.abs(g)))
    v = constraint_violation(instance, x0)
    b = bound_violation(instance, x0)
    vnorm = max([0.0] + [float(np.max(np.abs(a))) for a in (v, b) if a.size])
    return 10.0 * max(1.0, gnorm) / max(1.0, vnorm)


def solve_constrained(
    instance: NetworkInstance,
    x0,
    newton_config: Optional[NewtonConfig] = None,
    al_config: Optional[AugLagConfig] = None,
    inner: Optional[Callable] = None,
):
    """Alternate inner minimization and multiplier updates.

    ``inner(instance, x0, config) -> (x, NewtonReport)`` defaults to
    :func:`newton.minimize`. Returns ``(x, lam, ConstrainedReport)``; the
    report's ``bound_multipliers`` holds the lower-bound multipliers.
    """
    newton_config = newton_config or NewtonConfig()
    al = al_config or AugLagConfig()
    inner = inner or minimize
    x = np.array(x0, dtype=float)
    m = instance.equality_constraints.num_rows if instance.has_constraints else 0
    c0 = al.initial_penalty if al.initial_penalty is not None else initial_penalty(instance, x)
    aug = AugLagState(np.zeros(m), c0, al.growth, np.zeros(instance.num_paths) if instance.has_bounds else None)
    report = ConstrainedReport(ALStatus.BUDGET, [], [], [], [])
    for _ in range(al.max_updates):
        x, rep = inner(augmented_objective(instance, aug), x, newton_config)
        report.inner_reports.append(rep)
        if rep.status is Status.LINE_SEARCH_FAILURE:
            report.status = ALStatus.INNER_FAILURE
            break
        mu_new = _update_bounds(instance, aug, x)
        vnorm, v = _measure(instance, x, mu_new)
        inner_ok = rep.status is Status.CONVERGED
        report.penalties.append(aug.penalty)
        aug = multiplier_update(aug, v, al.progress_factor, measure=vnorm)
        aug.bound_multipliers = mu_new
        report.violations.append(vnorm)
        report.multipliers.append(aug.multipliers.copy())
        if vnorm <= al.feas_tol and inner_ok:
            report.status = ALStatus.CONVERGED
            break
    report.bound_multipliers = aug.bound_multipliers
    return x, aug.multipliers, report

