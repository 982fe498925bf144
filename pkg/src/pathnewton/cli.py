"""Command-line entry points: ``pathnewton solve`` and ``pathnewton check``.

Exit codes for ``solve``: 0 converged, 2 iteration budget exhausted,
3 line-search failure, 1 bad input.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import numpy as np

from .calculus import (
    ORACLE_CAP,
    dense_hessian_oracle,
    gradient,
    hessian_vector_product,
    objective,
    refresh,
)
from .cg import CgConfig, PrecondKind, PreconditionerError
from .constraints import ALStatus, solve_constrained
from .costs import DomainError
from .distsim import build_topology, format_message_log, run_distributed_newton
from .instance import InvalidInstanceError, validate
from .io import ParseError, load_instance, read_vector, write_trace
from .newton import Armijo, Constant, Method, NewtonConfig, NewtonReport, NewtonRow, Status, minimize

EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_LINESEARCH = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _stepsize(text: str):
    if text == "armijo":
        return Armijo()
    if text.startswith("constant:"):
        try:
            return Constant(float(text.split(":", 1)[1]))
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad constant stepsize {text!r}: {e}") from None
    raise argparse.ArgumentTypeError("expected 'armijo' or 'constant:A'")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pathnewton", description="Truncated Newton-CG for path-flow network problems.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("solve", help="minimize an instance")
    s.add_argument("--instance", required=True, metavar="PATH")
    s.add_argument("--method", choices=[m.value for m in Method], default="newton-cg")
    s.add_argument("--precond", choices=[k.value for k in PrecondKind], default="none")
    s.add_argument("--cg-max-iters", type=int, default=None, metavar="N")
    s.add_argument("--cg-tol", type=float, default=None, metavar="R", help="fixed CG tolerance (default: adaptive)")
    s.add_argument("--stepsize", type=_stepsize, default=Armijo(), metavar="{constant:A|armijo}")
    s.add_argument("--grad-tol", type=float, default=1e-8, metavar="R")
    s.add_argument("--max-outer", type=int, default=100, metavar="N")
    s.add_argument("--x0", default="zeros", metavar="{zeros|file:PATH}")
    s.add_argument("--trace", metavar="PATH")
    s.add_argument("--distributed", action="store_true")
    s.add_argument("--seed", type=int, default=None, metavar="N", help="randomize the spanning tree")
    s.add_argument("--dump-messages", metavar="PATH")
    s.add_argument("--timing", action="store_true", help="record wall time in the trace")

    c = sub.add_parser("check", help="validate an instance and its derivatives at a point")
    c.add_argument("--instance", required=True, metavar="PATH")
    c.add_argument("--x", metavar="FILE", help="point (whitespace-separated); default zeros")
    c.add_argument("--fd-tol", type=float, default=1e-5)
    c.add_argument("--hvp-tol", type=float, default=1e-12)
    return ap


def _load_x0(text: str, size: int) -> np.ndarray:
    if text == "zeros":
        return np.zeros(size)
    if text.startswith("file:"):
        return read_vector(text[5:], size)
    raise ValueError(f"bad --x0 {text!r}; expected 'zeros' or 'file:PATH'")


def _concat(reports: List[NewtonReport]) -> NewtonReport:
    """Stitch inner reports of a constrained solve into one renumbered trace."""
    out = NewtonReport(rows=[], status=reports[-1].status)
    first = True
    for rep in reports:
        rows = rep.rows if first else rep.rows[1:]
        for r in rows:
            out.rows.append(NewtonRow(len(out.rows), r.F, r.grad_inf, r.source, r.cg_iters, r.cg_termination,
                                      r.stepsize, r.op_delta, r.elapsed))
        first = False
    out.ops_total = sum(r.ops_total for r in reports)
    return out


def cmd_solve(args) -> int:
    try:
        inst = load_instance(args.instance)
        x0 = _load_x0(args.x0, inst.num_paths)
        # ordered reductions keep centralized and --distributed traces comparable row by row
        cg = CgConfig(
            max_iters=args.cg_max_iters,
            rel_residual_tol=args.cg_tol if args.cg_tol is not None else 1e-10,
            ordered_reductions=True,
        )
        cfg = NewtonConfig(
            method=args.method,
            cg=cg,
            precond=args.precond,
            stepsize=args.stepsize,
            grad_tol=args.grad_tol,
            max_outer=args.max_outer,
            forcing="fixed" if args.cg_tol is not None else "sqrt",
        )
        if args.dump_messages and not args.distributed:
            raise ValueError("--dump-messages requires --distributed")
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    logs = []

    def dist_inner(instance, x, config):
        tree = build_topology(instance, seed=args.seed or 0,
                              shape="random-member" if args.seed is not None else "lowest-member")
        x, rep, stats = run_distributed_newton(instance, x, config, tree)
        logs.append(stats.log)
        return x, rep

    inner = dist_inner if args.distributed else minimize
    try:
        if inst.has_constraints or inst.has_bounds:
            x, lam, crep = solve_constrained(inst, x0, cfg, inner=inner)
            report = _concat(crep.inner_reports)
            status = {
                ALStatus.CONVERGED: Status.CONVERGED,
                ALStatus.BUDGET: Status.MAX_ITERS,
                ALStatus.INNER_FAILURE: Status.LINE_SEARCH_FAILURE,
            }[crep.status]
        else:
            x, report = inner(inst, x0, cfg)
            status = report.status
    except (DomainError, PreconditionerError, InvalidInstanceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    try:
        if args.trace:
            with open(args.trace, "w") as fh:
                write_trace(report, fh, timing=args.timing)
        if args.dump_messages:
            with open(args.dump_messages, "w") as fh:
                for i, log in enumerate(logs):
                    if len(logs) > 1:
                        fh.write(f"# solve {i}\n")
                    fh.write(format_message_log(log))
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    st = refresh(inst, x)
    F, gmax = objective(st), float(np.max(np.abs(gradient(st))))
    if inst.has_constraints:
        print(f"lambda = {' '.join(f'{v:.17g}' for v in lam)}")
    print(f"status = {status.value}")
    print(f"iterations = {report.iterations}")
    print(f"F = {F:.17g}")
    print(f"grad_inf = {gmax:.17g}")
    return {Status.CONVERGED: EXIT_OK, Status.MAX_ITERS: EXIT_BUDGET, Status.LINE_SEARCH_FAILURE: EXIT_LINESEARCH}[
        status
    ]


def fd_gradient(instance, x, h_rel=1e-6) -> np.ndarray:
    """Central differences, switching to one-sided ones next to a domain bound."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)

    def F(z):
        try:
            return objective(refresh(instance, z))
        except DomainError:
            return None

    f0 = F(x)
    for p in range(len(x)):
        h = h_rel * max(1.0, abs(x[p]))
        e = np.zeros_like(x)
        e[p] = h
        fp, fm = F(x + e), F(x - e)
        if fp is not None and fm is not None:
            out[p] = (fp - fm) / (2 * h)
        elif fp is not None:
            out[p] = (fp - f0) / h
        elif fm is not None:
            out[p] = (f0 - fm) / h
        else:
            out[p] = np.nan
    return out


def run_checks(instance, x, fd_tol=1e-5, hvp_tol=1e-12, seed=0, num_vectors=5):
    """Return a list of ``(name, status, detail)`` rows, status in pass/fail/skipped."""
    rows = []
    rep = validate(instance)
    rows.append(("validate", "pass" if rep.ok else "fail", "; ".join(rep.violations) or
                 f"P={rep.num_paths} A={rep.num_arcs} T={rep.num_entries}"))
    if not rep.ok:
        rows.append(("gradient-fd", "skipped", "invalid instance"))
        rows.append(("hvp-oracle", "skipped", "invalid instance"))
        return rows
    try:
        st = refresh(instance, x)
    except DomainError as e:
        rows.append(("domain", "fail", str(e)))
        return rows
    g = gradient(st)
    fd = fd_gradient(instance, x)
    err = np.abs(g - fd) / np.maximum(1.0, np.abs(g))
    worst = float(np.nanmax(err)) if err.size else 0.0
    ok = bool(np.all(np.isfinite(fd))) and worst <= fd_tol
    rows.append(("gradient-fd", "pass" if ok else "fail", f"max rel err {worst:.3e} (tol {fd_tol:g})"))
    if instance.num_paths > ORACLE_CAP:
        rows.append(("hvp-oracle", "skipped", f"P={instance.num_paths} exceeds oracle cap {ORACLE_CAP}"))
        return rows
    H = dense_hessian_oracle(instance, x)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_vectors):
        v = rng.standard_normal(instance.num_paths)
        ref = H @ v
        got = hessian_vector_product(st, v)
        worst = max(worst, float(np.max(np.abs(got - ref))) / (1.0 + float(np.max(np.abs(ref)))))
    rows.append(("hvp-oracle", "pass" if worst <= hvp_tol else "fail", f"max rel err {worst:.3e} (tol {hvp_tol:g})"))
    return rows


def cmd_check(args) -> int:
    try:
        inst = load_instance(args.instance)
        x = read_vector(args.x, inst.num_paths) if args.x else np.zeros(inst.num_paths)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    rows = run_checks(inst, x, args.fd_tol, args.hvp_tol)
    width = max(len(r[0]) for r in rows)
    for name, status, detail in rows:
        print(f"{name:<{width}}  {status:<7}  {detail}")
    return EXIT_INPUT if any(r[1] == "fail" for r in rows) else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args)
    return cmd_check(args)


if __name__ == "__main__":
    sys.exit(main())
