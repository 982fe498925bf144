"""Message-level simulation of the path/arc processor scheme.

One logical processor per path, one per arc, and a leader at the root of a
spanning tree. Path and arc processors exchange ``PathContribution`` and
``ArcFeedback`` messages to evaluate gradients and Hessian-vector products;
every inner product, norm and objective value travels up the tree as
``ReduceUp`` partial sums, and the leader sends CG scalars, stepsizes and
control decisions back down as ``Broadcast``.

Execution is in synchronous rounds. Each processor is a generator that
yields :class:`Recv` requests; it resumes only when every requested input
has been delivered, and anything it sends is stamped with the next round.

The distributed run performs the same floating-point operations as
:func:`newton.minimize`, except that inner products are summed in tree order.
With ``CgConfig(ordered_reductions=True)`` in the centralized run, path-indexed
reductions agree bitwise, and objective values are summed exactly on both
sides so they agree whatever the tree shape.
"""

from __future__ import annotations

import hashlib
import math
import time
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .calculus import ExactUnits, refresh
from .cg import NumericalBreakdown, PrecondKind, PreconditionerError, Termination
from .costs import INF, DomainError, max_step_to_boundary
from .instance import NetworkInstance, incidence_row, path_entries
from .newton import Armijo, Constant, Method, NewtonConfig, NewtonReport, NewtonRow, Status


# -- processors and messages ---------------------------------------------------


@dataclass(frozen=True, order=True)
class ProcessorId:
    kind: int  # 0 leader, 1 path, 2 arc
    block: int = 0
    index: int = 0

    def __str__(self):
        if self.kind == 0:
            return "L"
        if self.kind == 1:
            return f"p{self.index}"
        return f"a{self.block}.{self.index}"


LEADER = ProcessorId(0)


def path_proc(p: int) -> ProcessorId:
    return ProcessorId(1, 0, p)


def arc_proc(block: int, arc: int) -> ProcessorId:
    return ProcessorId(2, block, arc)


@dataclass(frozen=True)
class PathContribution:
    value: float

    def values(self):
        return (self.value,)


@dataclass(frozen=True)
class ArcFeedback:
    # In the flow phase the second field carries D'' itself (a unit vector
    # of contributions), in HVP phases D'' * f_{a,v}.
    d1: float
    d2_times_fav: float

    def values(self):
        return (self.d1, self.d2_times_fav)


@dataclass(frozen=True)
class ReduceUp:
    partial: Tuple[float, ...]

    def values(self):
        return tuple(float(v) for v in self.partial)


@dataclass(frozen=True)
class Broadcast:
    scalars: Tuple[float, ...]

    def values(self):
        return self.scalars


@dataclass(frozen=True)
class SimMessage:
    round: int
    src: ProcessorId
    dst: ProcessorId
    payload: object
    phase: str = ""
    seq: int = 0

    @property
    def kind(self) -> str:
        return type(self.payload).__name__

    def sort_key(self):
        return (self.round, self.src, self.dst, self.seq)


class ProtocolError(RuntimeError):
    pass


class DeadlockError(ProtocolError):
    pass


@dataclass(frozen=True)
class Recv:
    srcs: Tuple[ProcessorId, ...]
    kind: type


# -- scheduler -------------------------------------------------------------------


class Scheduler:
    """Holds in-flight messages and releases them one round at a time."""

    def __init__(self):
        self.pending: List[SimMessage] = []
        self.current_round = 0
        self.log: List[SimMessage] = []
        self._seq = 0

    def post(self, msg: SimMessage) -> SimMessage:
        if msg.round <= self.current_round:
            raise ProtocolError(
                f"{msg.src} sent a round-{msg.round} {msg.kind} while round {self.current_round} is in progress"
            )
        self._seq += 1
        msg = SimMessage(msg.round, msg.src, msg.dst, msg.payload, msg.phase, self._seq)
        self.pending.append(msg)
        return msg

    def next_delivery(self) -> List[SimMessage]:
        """All messages of the earliest pending round, in ``(round, src, dst)`` order."""
        if not self.pending:
            return []
        r = min(m.round for m in self.pending)
        batch = sorted((m for m in self.pending if m.round == r), key=SimMessage.sort_key)
        self.pending = [m for m in self.pending if m.round != r]
        self.current_round = r
        self.log.extend(batch)
        return batch


class _Proc:
    def __init__(self, pid, gen):
        self.pid = pid
        self.gen = gen
        self.inbox: Dict[ProcessorId, deque] = defaultdict(deque)
        self.last_round: Dict[ProcessorId, int] = {}
        self.waiting: Optional[Recv] = None
        self.done = False
        self.result = None

    def ready(self):
        return self.waiting is not None and all(self.inbox[s] for s in self.waiting.srcs)


class Simulation:
    def __init__(self):
        self.scheduler = Scheduler()
        self.procs: Dict[ProcessorId, _Proc] = {}

    def spawn(self, pid, gen):
        self.procs[pid] = _Proc(pid, gen)

    def send(self, src, dst, payload, phase=""):
        if dst not in self.procs:
            raise ProtocolError(f"{src} sent to unknown processor {dst}")
        return self.scheduler.post(SimMessage(self.scheduler.current_round + 1, src, dst, payload, phase))

    def _resume(self, proc, value):
        try:
            req = proc.gen.send(value)
        except StopIteration as stop:
            proc.done, proc.waiting, proc.result = True, None, stop.value
            return
        if not isinstance(req, Recv):
            raise ProtocolError(f"{proc.pid} yielded {req!r} instead of a Recv request")
        proc.waiting = req

    def _take(self, proc):
        req = proc.waiting
        out = []
        for s in req.srcs:
            m = proc.inbox[s].popleft()
            if not isinstance(m.payload, req.kind):
                raise ProtocolError(f"{proc.pid} expected {req.kind.__name__} from {s}, got {m.kind}")
            if m.round > self.scheduler.current_round or m.round < proc.last_round.get(s, 0):
                raise ProtocolError(f"{proc.pid} read an out-of-round message from {s}")
            proc.last_round[s] = m.round
            out.append(m.payload)
        return out

    def run(self):
        for pid in sorted(self.procs):
            self._resume(self.procs[pid], None)
        order = sorted(self.procs)
        while True:
            progressed = True
            while progressed:
                progressed = False
                for pid in order:
                    proc = self.procs[pid]
                    if proc.ready():
                        self._resume(proc, self._take(proc))
                        progressed = True
            batch = self.scheduler.next_delivery()
            if not batch:
                unfinished = [p for p in order if not self.procs[p].done]
                if not unfinished:
                    break
                starved = self.procs[unfinished[0]]
                want = ", ".join(str(s) for s in starved.waiting.srcs) if starved.waiting else "?"
                raise DeadlockError(f"processor {starved.pid} starved in round {self.scheduler.current_round} waiting for {want}")
            for m in batch:
                dst = self.procs[m.dst]
                if dst.done:
                    raise ProtocolError(f"message {m.kind} from {m.src} to finished processor {m.dst}")
                dst.inbox[m.src].append(m)
        return {pid: p.result for pid, p in self.procs.items()}


def step_scheduler(scheduler: Scheduler) -> List[SimMessage]:
    return scheduler.next_delivery()


# -- spanning tree --------------------------------------------------------------


@dataclass
class SpanningTree:
    parent: Dict[ProcessorId, Optional[ProcessorId]]
    children: Dict[ProcessorId, List[ProcessorId]]

    @property
    def edges(self) -> int:
        return len(self.parent) - 1

    def depth(self) -> int:
        def d(pid):
            n = 0
            while self.parent[pid] is not None:
                pid = self.parent[pid]
                n += 1
            return n

        return max(d(p) for p in self.parent)

    def digest(self) -> str:
        text = "\n".join(f"{c}<{self.parent[c]}" for c in sorted(self.parent))
        return hashlib.sha256(text.encode()).hexdigest()

    def check(self):
        roots = [p for p, q in self.parent.items() if q is None]
        if roots != [LEADER]:
            raise ProtocolError("spanning tree must have the leader as its only root")
        for pid in self.parent:
            seen = set()
            while pid is not None:
                if pid in seen:
                    raise ProtocolError("spanning tree has a cycle")
                seen.add(pid)
                pid = self.parent[pid]


def build_topology(instance: NetworkInstance, seed: int = 0, shape: str = "lowest-member") -> SpanningTree:
    """Leader -> every path processor -> arc processors.

    ``shape="lowest-member"`` hangs each arc under its lowest-numbered member
    path; ``shape="random-member"`` picks a member with ``seed``. Arcs with no
    member paths hang under the leader.
    """
    instance.require_valid()
    rng = np.random.default_rng(seed)
    parent: Dict[ProcessorId, Optional[ProcessorId]] = {LEADER: None}
    for p in range(instance.num_paths):
        parent[path_proc(p)] = LEADER
    for b, blk in enumerate(instance.blocks):
        for a in range(blk.num_arcs):
            members = [p for p, _ in incidence_row(instance, a, b)]
            if not members:
                parent[arc_proc(b, a)] = LEADER
            elif shape == "lowest-member":
                parent[arc_proc(b, a)] = path_proc(members[0])
            elif shape == "random-member":
                parent[arc_proc(b, a)] = path_proc(members[int(rng.integers(len(members)))])
            else:
                raise ValueError(f"unknown tree shape {shape!r}")
    children: Dict[ProcessorId, List[ProcessorId]] = {pid: [] for pid in parent}
    for c, q in parent.items():
        if q is not None:
            children[q].append(c)
    for q in children:
        children[q].sort()
    tree = SpanningTree(parent, children)
    tree.check()
    return tree


# -- processor programs ------------------------------------------------------------

STOP, CONTINUE, ALPHA, ESCAPE, BETA, CG_DONE, FALLBACK, PROCEED, TRIAL, ACCEPT, FAIL = range(11)

# _FSUM carries objective values; it is exact under ordered reductions
_SUM, _FSUM, _MAX, _MIN = "sum", "fsum", "max", "min"
_REFRESH_OPS = (_FSUM, _MAX, _SUM, _SUM, _MAX)


def _combine(op, a, b):
    if op in (_SUM, _FSUM):
        return a + b
    if op == _MAX:
        return a if a >= b else b
    return a if a <= b else b


class _Node:
    def __init__(self, sim, pid, tree, config):
        self.sim = sim
        self.pid = pid
        self.parent = tree.parent[pid]
        self.children = tree.children[pid]
        self.config = config
        self.phase = ""

    def send(self, dst, payload):
        self.sim.send(self.pid, dst, payload, self.phase)

    def recv(self, srcs, kind):
        if not srcs:
            return []
        return (yield Recv(tuple(srcs), kind))

    def reduce(self, local, ops):
        exact = self.config.cg.ordered_reductions
        acc = [ExactUnits.of(v) if exact and op == _FSUM else v for v, op in zip(local, ops)]
        parts = yield from self.recv(self.children, ReduceUp)
        for part in parts:
            for i, op in enumerate(ops):
                acc[i] = _combine(op, acc[i], part.partial[i])
        if self.parent is not None:
            self.send(self.parent, ReduceUp(tuple(acc)))
        return [float(v) if isinstance(v, ExactUnits) else v for v in acc]

    def bcast(self, scalars=None):
        if self.parent is not None:
            (msg,) = yield from self.recv([self.parent], Broadcast)
            scalars = msg.scalars
        for c in self.children:
            self.send(c, Broadcast(tuple(scalars)))
        return scalars


class _PathNode(_Node):
    def __init__(self, sim, pid, tree, config, instance, x0):
        super().__init__(sim, pid, tree, config)
        p = pid.index
        self.cost = instance.path_costs[p]
        self.x = float(x0[p])
        ents = path_entries(instance, p)
        self.arcs = [arc_proc(b, a) for b, a, _ in ents]
        self.weights = [w for _, _, w in ents]

    def _scatter(self, v):
        for apid, w in zip(self.arcs, self.weights):
            self.send(apid, PathContribution(w * v))

    def program(self):
        cfg = self.config
        k = 0
        while True:
            self.phase = f"o{k}/refresh"
            self._scatter(self.x)
            rv, r1, r2 = self.cost.eval(self.x)
            fb = yield from self.recv(self.arcs, ArcFeedback)
            gacc = hacc = 0.0
            for w, m in zip(self.weights, fb):
                gacc += w * m.d1
            for w, m in zip(self.weights, fb):
                hacc += (w * w) * m.d2_times_fav
            g = r1 + gacc
            h = r2 + hacc
            s, bad = None, 0.0
            if cfg.method is Method.NEWTON_CG and cfg.precond is not PrecondKind.NONE:
                d = h if cfg.precond is PrecondKind.DIAG_HESSIAN else r2
                s = 1.0 / d if d != 0.0 else INF
                if not (math.isfinite(s) and s > 0.0):
                    bad = 1.0
            z = g if s is None else s * g
            yield from self.reduce([rv, abs(g), g * g, g * z, bad], _REFRESH_OPS)
            cmd = yield from self.bcast()
            if cmd[0] == STOP:
                return self.x
            self.r2 = r2
            if cfg.method is Method.STEEPEST:
                y = -g
            elif cfg.method is Method.DIAG_GRAD:
                y = -g / h if h > 0.0 else -g
            elif cmd[1]:
                y = 0.0
            else:
                y = yield from self._cg(k, g, s)
            self.phase = f"o{k}/step"
            ok = yield from self._step(g, y)
            if not ok:
                return self.x
            k += 1

    def _cg(self, k, g, s):
        y = 0.0
        r = g
        z = r if s is None else s * r
        p = -z
        j = 0
        while True:
            self.phase = f"o{k}/cg{j}"
            self._scatter(p)
            fb = yield from self.recv(self.arcs, ArcFeedback)
            acc = 0.0
            for w, m in zip(self.weights, fb):
                acc += w * m.d2_times_fav
            wv = self.r2 * p + acc
            yield from self.reduce([p * wv, p * p, wv * wv], (_SUM, _SUM, _SUM))
            cmd = yield from self.bcast()
            if cmd[0] == ESCAPE:
                return -g if j == 0 else y + self.config.cg.escape_step * p
            alpha = cmd[1]
            y = y + alpha * p
            r = r + alpha * wv
            z = r if s is None else s * r
            yield from self.reduce([r * z], (_SUM,))
            cmd = yield from self.bcast()
            j += 1
            if cmd[0] == CG_DONE:
                return y
            p = -z + cmd[1] * p

    def _step(self, g, y):
        while True:
            self._scatter(y)
            cap = max_step_to_boundary(self.cost, self.x, y)
            yield from self.reduce([g * y, cap], (_SUM, _MIN))
            cmd = yield from self.bcast()
            if cmd[0] == FALLBACK:
                y = -g
                continue
            break
        cmd = yield from self.bcast()
        while cmd[0] == TRIAL:
            xt = self.x + cmd[1] * y
            self._scatter(xt)
            try:
                val, flag = self.cost.eval(xt)[0], 0.0
            except DomainError:
                val, flag = 0.0, 1.0
            yield from self.reduce([val, flag], (_FSUM, _MAX))
            cmd = yield from self.bcast()
        if cmd[0] == ACCEPT:
            self.x = xt
            return True
        return False


class _ArcNode(_Node):
    def __init__(self, sim, pid, tree, config, instance):
        super().__init__(sim, pid, tree, config)
        self.cost = instance.blocks[pid.block].arc_costs[pid.index]
        self.members = [path_proc(p) for p, _ in incidence_row(instance, pid.index, pid.block)]

    def _gather(self):
        msgs = yield from self.recv(self.members, PathContribution)
        f = 0.0
        for m in msgs:
            f += m.value
        return f

    def _feedback(self, d1, second):
        for q in self.members:
            self.send(q, ArcFeedback(d1, second))

    def program(self):
        cfg = self.config
        k = 0
        while True:
            self.phase = f"o{k}/refresh"
            f = yield from self._gather()
            dv, d1, d2 = self.cost.eval(f)
            self._feedback(d1, d2)
            yield from self.reduce([dv, 0.0, 0.0, 0.0, 0.0], _REFRESH_OPS)
            cmd = yield from self.bcast()
            if cmd[0] == STOP:
                return f
            if cfg.method is Method.NEWTON_CG and not cmd[1]:
                j = 0
                while True:
                    self.phase = f"o{k}/cg{j}"
                    fav = yield from self._gather()
                    self._feedback(d1, d2 * fav)
                    yield from self.reduce([0.0, 0.0, 0.0], (_SUM, _SUM, _SUM))
                    cmd = yield from self.bcast()
                    if cmd[0] == ESCAPE:
                        break
                    yield from self.reduce([0.0], (_SUM,))
                    cmd = yield from self.bcast()
                    j += 1
                    if cmd[0] == CG_DONE:
                        break
            self.phase = f"o{k}/step"
            while True:
                fy = yield from self._gather()
                yield from self.reduce([0.0, max_step_to_boundary(self.cost, f, fy)], (_SUM, _MIN))
                cmd = yield from self.bcast()
                if cmd[0] != FALLBACK:
                    break
            cmd = yield from self.bcast()
            while cmd[0] == TRIAL:
                ft = yield from self._gather()
                try:
                    val, flag = self.cost.eval(ft)[0], 0.0
                except DomainError:
                    val, flag = 0.0, 1.0
                yield from self.reduce([val, flag], (_FSUM, _MAX))
                cmd = yield from self.bcast()
            if cmd[0] != ACCEPT:
                return f
            k += 1


class _LeaderNode(_Node):
    def __init__(self, sim, pid, tree, config, num_paths):
        super().__init__(sim, pid, tree, config)
        self.num_paths = num_paths
        self.report = NewtonReport()
        self.t0 = time.perf_counter()

    def program(self):
        cfg = self.config
        rep = self.report
        k = 0
        last = ("initial", 0, "", 0.0)
        while True:
            self.phase = f"o{k}/refresh"
            F, gmax, gsq, gz, bad = yield from self.reduce([0.0] * 5, _REFRESH_OPS)
            src, iters, term, alpha = last
            rep.rows.append(NewtonRow(k, F, gmax, src, iters, term, alpha, 0, time.perf_counter() - self.t0))
            if gmax <= cfg.grad_tol or k >= cfg.max_outer:
                rep.status = Status.CONVERGED if gmax <= cfg.grad_tol else Status.MAX_ITERS
                yield from self.bcast((STOP, 0.0))
                return rep
            if bad:
                raise PreconditionerError(f"{cfg.precond.value} preconditioner needs positive diagonal")
            newton = cfg.method is Method.NEWTON_CG
            skip = newton and gz == 0.0
            yield from self.bcast((CONTINUE, 1.0 if skip else 0.0))
            if cfg.method is Method.STEEPEST:
                src, iters, term = "gradient", 0, ""
            elif cfg.method is Method.DIAG_GRAD:
                src, iters, term = "diag", 0, ""
            elif skip:
                src, iters, term = "cg", 0, Termination.CONVERGED.value
            else:
                iters, t = yield from self._cg(k, gz, gsq)
                src = "escape" if t is Termination.ZERO_CURVATURE else "cg"
                term = t.value
            self.phase = f"o{k}/step"
            alpha, fell_back = yield from self._step(F)
            if alpha is None:
                rep.status = Status.LINE_SEARCH_FAILURE
                return rep
            if fell_back:
                src = "gradient-fallback"
            last = (src, iters, term, alpha)
            k += 1

    def _cg(self, k, gz, gsq):
        cg = self.config.cg
        if self.config.forcing == "fixed":
            tol = cg.rel_residual_tol
        else:
            tol = min(0.5, math.sqrt(math.sqrt(gsq)))
        max_iters = cg.max_iters or self.num_paths
        rz = rz0 = gz
        j = 0
        while True:
            self.phase = f"o{k}/cg{j}"
            pHp, pp, ww = yield from self.reduce([0.0, 0.0, 0.0], (_SUM, _SUM, _SUM))
            scale = math.sqrt(pp * ww)
            if not (math.isfinite(pHp) and math.isfinite(scale)):
                raise NumericalBreakdown(j, "curvature")
            if pHp <= cg.curvature_tol * scale:
                yield from self.bcast((ESCAPE, 0.0))
                return j, Termination.ZERO_CURVATURE
            alpha = rz / pHp
            yield from self.bcast((ALPHA, alpha))
            (rz_new,) = yield from self.reduce([0.0], (_SUM,))
            j += 1
            if not math.isfinite(rz_new):
                raise NumericalBreakdown(j, "residual")
            if math.sqrt(max(rz_new, 0.0)) <= tol * math.sqrt(rz0):
                yield from self.bcast((CG_DONE, 0.0))
                return j, Termination.CONVERGED
            if j >= max_iters:
                yield from self.bcast((CG_DONE, 0.0))
                return j, Termination.ITER_BUDGET
            beta = rz_new / rz
            rz = rz_new
            yield from self.bcast((BETA, beta))

    def _step(self, F):
        cfg = self.config
        fell_back = False
        while True:
            gty, cap = yield from self.reduce([0.0, INF], (_SUM, _MIN))
            if not gty < 0 and not fell_back:
                fell_back = True
                yield from self.bcast((FALLBACK, 0.0))
                continue
            yield from self.bcast((PROCEED, 0.0))
            break
        if not gty < 0:
            yield from self.bcast((FAIL, 0.0))
            return None, fell_back
        rule = cfg.stepsize
        alpha = rule.alpha if isinstance(rule, Constant) else rule.initial
        if cap < INF:
            alpha = min(alpha, cfg.feasibility_fraction * cap)
        tries = 1 if isinstance(rule, Constant) else rule.max_backtracks + 1
        for _ in range(tries):
            yield from self.bcast((TRIAL, alpha))
            Ft, infeasible = yield from self.reduce([0.0, 0.0], (_FSUM, _MAX))
            if not infeasible and (isinstance(rule, Constant) or Ft <= F + rule.sigma * alpha * gty):
                yield from self.bcast((ACCEPT, alpha))
                return alpha, fell_back
            if isinstance(rule, Armijo):
                alpha *= rule.factor
        yield from self.bcast((FAIL, 0.0))
        return None, fell_back


# -- driver -----------------------------------------------------------------------


@dataclass
class SimStats:
    rounds: int
    messages: int
    by_kind: Counter
    by_phase: Counter
    log: List[SimMessage] = field(repr=False, default_factory=list)

    def cg_iteration_phases(self):
        return sorted(p for p in self.by_phase if "/cg" in p)

    def data_messages(self, phase: str) -> int:
        """PathContribution + ArcFeedback messages within ``phase``."""
        return sum(1 for m in self.log if m.phase == phase and m.kind in ("PathContribution", "ArcFeedback"))

    def digest(self) -> str:
        return hashlib.sha256(format_message_log(self.log).encode()).hexdigest()


def format_message_log(log) -> str:
    """One tab-separated line per message: round, src, dst, kind, values."""
    lines = []
    for m in log:
        vals = ",".join(f"{v:.17g}" for v in m.payload.values())
        lines.append(f"{m.round}\t{m.src}\t{m.dst}\t{m.kind}\t{vals}")
    return "\n".join(lines) + ("\n" if lines else "")


def run_distributed_newton(
    instance: NetworkInstance, x0, config: Optional[NewtonConfig] = None, tree: Optional[SpanningTree] = None
):
    """Run truncated Newton on simulated path/arc processors.

    Returns ``(x, NewtonReport, SimStats)``. The report's ``op_delta`` column
    holds message counts rather than operation counts.
    """
    config = config or NewtonConfig()
    instance.require_valid()
    refresh(instance, x0)  # raises DomainError on an infeasible start
    tree = tree or build_topology(instance)
    sim = Simulation()
    leader = _LeaderNode(sim, LEADER, tree, config, instance.num_paths)
    sim.spawn(LEADER, leader.program())
    for p in range(instance.num_paths):
        node = _PathNode(sim, path_proc(p), tree, config, instance, np.asarray(x0, dtype=float))
        sim.spawn(node.pid, node.program())
    for b, blk in enumerate(instance.blocks):
        for a in range(blk.num_arcs):
            node = _ArcNode(sim, arc_proc(b, a), tree, config, instance)
            sim.spawn(node.pid, node.program())
    results = sim.run()
    x = np.array([results[path_proc(p)] for p in range(instance.num_paths)])
    report = results[LEADER]
    log = sim.scheduler.log
    by_phase = Counter(m.phase for m in log)
    for row in report.rows:
        k = row.outer_iter
        n = by_phase[f"o{k}/refresh"]
        if k > 0:
            n += sum(c for ph, c in by_phase.items() if ph.startswith(f"o{k - 1}/") and not ph.endswith("refresh"))
        row.op_delta = n
    report.ops_total = len(log)
    stats = SimStats(sim.scheduler.current_round, len(log), Counter(m.kind for m in log), by_phase, list(log))
    return x, report, stats
