"""Truncated Newton-CG for nonlinear path-flow network problems.

The objective is a separable path cost plus separable arc costs of weighted
path-flow sums. Gradients and Hessian-vector products are computed by sparse
sweeps over (arc, path) entries, so no Hessian is ever formed.
"""

from .calculus import (
    FlowState,
    OpCounter,
    dense_hessian_oracle,
    gradient,
    hessian_diagonal,
    hessian_vector_product,
    objective,
    refresh,
)
from .cg import CgConfig, CgOutcome, PrecondKind, Termination, build_preconditioner, solve_plain, solve_preconditioned
from .constraints import AugLagConfig, AugLagState, augmented_objective, multiplier_update, solve_constrained
from .costs import DomainError, KleinrockDelay, NegPartPenalty, PowerMonomial, Quadratic, Zero
from .distsim import build_topology, run_distributed_newton
from .instance import CouplingBlock, EqualityConstraints, NetworkInstance, single_block, validate
from .io import ParseError, parse_instance, serialize_instance
from .newton import Armijo, Constant, Method, NewtonConfig, Status, minimize

__version__ = "0.1.0"
