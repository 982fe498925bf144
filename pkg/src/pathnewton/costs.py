"""Scalar cost families for path terms R_p and arc terms D_a.

Every family exposes ``eval(z) -> (value, d1, d2)`` plus the bounds of its
effective domain. Bounds are reported so the outer line search can keep
iterates strictly inside barrier-like domains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

INF = math.inf


class DomainError(ValueError):
    """Raised when a cost is evaluated outside its effective domain.

    ``where`` is filled in by callers that know which path or arc was being
    evaluated (e.g. ``"arc 3 of block 0"``).
    """

    def __init__(self, value, bound, side, where=None):
        self.value = value
        self.bound = bound
        self.side = side
        self.where = where
        loc = f" at {where}" if where else ""
        op = "<" if side == "upper" else ">="
        super().__init__(f"argument {value!r}{loc} violates domain: need z {op} {bound!r}")

    def located(self, where):
        return DomainError(self.value, self.bound, self.side, where)


@dataclass(frozen=True)
class Zero:
    def eval(self, z: float) -> Tuple[float, float, float]:
        return 0.0, 0.0, 0.0

    def domain_lower(self) -> float:
        return -INF

    def domain_upper(self) -> float:
        return INF


@dataclass(frozen=True)
class Quadratic:
    """``q/2 (z - t)^2 + l z``."""

    q: float = 1.0
    t: float = 0.0
    l: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.q) and self.q >= 0.0):
            raise ValueError(f"Quadratic curvature q must be finite and >= 0, got {self.q!r}")
        if not (math.isfinite(self.t) and math.isfinite(self.l)):
            raise ValueError("Quadratic t and l must be finite")

    def eval(self, z):
        u = z - self.t
        return 0.5 * self.q * u * u + self.l * z, self.q * u + self.l, self.q

    def domain_lower(self):
        return -INF

    def domain_upper(self):
        return INF


@dataclass(frozen=True)
class PowerMonomial:
    """``c z^k`` on ``z >= 0``."""

    c: float = 1.0
    k: int = 2

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0.0):
            raise ValueError(f"PowerMonomial coefficient c must be > 0, got {self.c!r}")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"PowerMonomial exponent k must be an integer >= 2, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))

    def eval(self, z):
        if z < 0.0:
            raise DomainError(z, 0.0, "lower")
        c, k = self.c, self.k
        return c * z**k, c * k * z ** (k - 1), c * k * (k - 1) * z ** (k - 2)

    def domain_lower(self):
        return 0.0

    def domain_upper(self):
        return INF


@dataclass(frozen=True)
class KleinrockDelay:
    """M/M/1 delay ``z / (cap - z)`` on ``z < cap``."""

    cap: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.cap) and self.cap > 0.0):
            raise ValueError(f"KleinrockDelay capacity must be > 0, got {self.cap!r}")

    def eval(self, z):
        cap = self.cap
        s = cap - z
        if not s > 0.0:
            raise DomainError(z, cap, "upper")
        return z / s, cap / (s * s), 2.0 * cap / (s * s * s)

    def domain_lower(self):
        return -INF

    def domain_upper(self):
        return self.cap


@dataclass(frozen=True)
class NegPartPenalty:
    """``c/2 max(0, lower - z)^2``.

    Only C^1 at ``z = lower``; the second derivative there is taken as 0.
    """

    c: float = 1.0
    lower: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0.0):
            raise ValueError(f"NegPartPenalty coefficient c must be > 0, got {self.c!r}")
        if not math.isfinite(self.lower):
            raise ValueError("NegPartPenalty lower must be finite")

    def eval(self, z):
        u = self.lower - z
        if u > 0.0:
            return 0.5 * self.c * u * u, -self.c * u, self.c
        return 0.0, 0.0, 0.0

    def domain_lower(self):
        return -INF

    def domain_upper(self):
        return INF


@dataclass(frozen=True)
class CostSum:
    """Pointwise sum of cost terms; used to attach bound penalties to R_p."""

    terms: Tuple["ScalarCostFn", ...]

    def eval(self, z):
        v = d1 = d2 = 0.0
        for term in self.terms:
            a, b, c = term.eval(z)
            v += a
            d1 += b
            d2 += c
        return v, d1, d2

    def domain_lower(self):
        return max((t.domain_lower() for t in self.terms), default=-INF)

    def domain_upper(self):
        return min((t.domain_upper() for t in self.terms), default=INF)


ScalarCostFn = Union[Zero, Quadratic, PowerMonomial, KleinrockDelay, NegPartPenalty, CostSum]

# File-format names and their parameters, in serialization order.
FAMILIES = {
    "Zero": (Zero, ()),
    "Quadratic": (Quadratic, ("q", "t", "l")),
    "PowerMonomial": (PowerMonomial, ("c", "k")),
    "KleinrockDelay": (KleinrockDelay, ("cap",)),
    "NegPartPenalty": (NegPartPenalty, ("c", "lower")),
}


def eval_cost(fn: ScalarCostFn, z: float) -> Tuple[float, float, float]:
    return fn.eval(z)


def domain_lower(fn: ScalarCostFn) -> float:
    return fn.domain_lower()


def domain_upper(fn: ScalarCostFn) -> float:
    return fn.domain_upper()


def max_step_to_boundary(fn: ScalarCostFn, z: float, dz: float) -> float:
    """Largest ``a >= 0`` such that ``z + a dz`` reaches a finite domain bound.

    Returns ``inf`` when moving along ``dz`` never meets a bound.
    """
    if dz > 0.0:
        hi = fn.domain_upper()
        if hi < INF:
            return max(0.0, (hi - z) / dz)
    elif dz < 0.0:
        lo = fn.domain_lower()
        if lo > -INF:
            return max(0.0, (lo - z) / dz)
    return INF
