import numpy as np
import pytest

from pathnewton.cg import CgConfig
from pathnewton.costs import KleinrockDelay, Quadratic
from pathnewton.distsim import (
    ALPHA,
    BETA,
    LEADER,
    DeadlockError,
    PathContribution,
    ProtocolError,
    Recv,
    Scheduler,
    SimMessage,
    Simulation,
    arc_proc,
    build_topology,
    format_message_log,
    path_proc,
    run_distributed_newton,
    step_scheduler,
)
from pathnewton.instance import single_block
from pathnewton.newton import Armijo, Constant, NewtonConfig, Status, minimize
from pathnewton.synthetic import SOLVABLE_ARCS, SOLVABLE_PATHS, kleinrock_scalar, random_instance

EXACT = NewtonConfig(cg=CgConfig(rel_residual_tol=1e-14, ordered_reductions=True), forcing="fixed",
                     stepsize=Constant(1.0))


def rows_agree(a, b, tol=1e-12):
    def close(u, v):
        return abs(u - v) <= tol * max(1.0, abs(u), abs(v))

    return len(a.rows) == len(b.rows) and all(
        close(r.F, s.F) and close(r.grad_inf, s.grad_inf) and r.cg_iters == s.cg_iters and close(r.stepsize, s.stepsize)
        for r, s in zip(a.rows, b.rows)
    )


class TestTopology:
    def test_t1(self, T1):
        tree = build_topology(T1)
        assert tree.children[LEADER] == [path_proc(0), path_proc(1)]
        assert tree.children[path_proc(0)] == [arc_proc(0, 0), arc_proc(0, 1)]
        assert tree.children[path_proc(1)] == []
        assert tree.edges == 4 and tree.depth() == 2

    def test_chain(self):
        tree = build_topology(kleinrock_scalar())
        assert tree.parent == {LEADER: None, path_proc(0): LEADER, arc_proc(0, 0): path_proc(0)}

    @pytest.mark.parametrize("shape", ["lowest-member", "random-member"])
    def test_deterministic(self, shape):
        inst, _ = random_instance(2)
        assert build_topology(inst, 5, shape).digest() == build_topology(inst, 5, shape).digest()

    def test_random_shape_hangs_arcs_on_members(self):
        inst, _ = random_instance(2)
        tree = build_topology(inst, 11, "random-member")
        for (pid, par) in tree.parent.items():
            if pid.kind == "arc":
                members = [p for a, p, _ in inst.blocks[pid.block].entries if a == pid.index]
                assert par.index in members

    def test_unknown_shape(self, T1):
        with pytest.raises(ValueError):
            build_topology(T1, shape="star")

    def test_names(self):
        assert (str(LEADER), str(path_proc(3)), str(arc_proc(1, 2))) == ("L", "p3", "a1.2")


class TestScheduler:
    def test_same_round_src_order(self):
        s = Scheduler()
        s.post(SimMessage(1, path_proc(1), LEADER, PathContribution(1.0)))
        s.post(SimMessage(1, path_proc(0), LEADER, PathContribution(2.0)))
        batch = step_scheduler(s)
        assert [m.src for m in batch] == [path_proc(0), path_proc(1)]

    def test_stale_round_rejected(self):
        s = Scheduler()
        s.post(SimMessage(2, path_proc(0), LEADER, PathContribution(1.0)))
        step_scheduler(s)
        with pytest.raises(ProtocolError):
            s.post(SimMessage(2, path_proc(1), LEADER, PathContribution(1.0)))

    def test_empty(self):
        assert step_scheduler(Scheduler()) == []
        assert Simulation().run() == {}

    def test_rounds_in_order(self):
        s = Scheduler()
        s.post(SimMessage(3, path_proc(0), LEADER, PathContribution(1.0)))
        s.post(SimMessage(1, path_proc(0), LEADER, PathContribution(2.0)))
        assert [m.round for m in step_scheduler(s)] == [1]
        assert [m.round for m in step_scheduler(s)] == [3]

    def test_deadlock_names_processor(self):
        sim = Simulation()

        def waiter():
            yield Recv((path_proc(0),), PathContribution)

        def idle():
            return None
            yield

        sim.spawn(LEADER, waiter())
        sim.spawn(path_proc(0), idle())
        with pytest.raises(DeadlockError, match="processor L starved"):
            sim.run()

    def test_ping(self):
        sim = Simulation()

        def leader():
            (msg,) = yield Recv((path_proc(0),), PathContribution)
            return msg.value

        def path():
            sim.send(path_proc(0), LEADER, PathContribution(4.5))
            return "sent"
            yield

        sim.spawn(LEADER, leader())
        sim.spawn(path_proc(0), path())
        assert sim.run() == {LEADER: 4.5, path_proc(0): "sent"}


class TestEquivalence:
    def test_t1_exact(self, T1, x11):
        xc, rc = minimize(T1, x11, EXACT)
        xd, rd, stats = run_distributed_newton(T1, x11, EXACT)
        assert np.allclose(xd, xc, atol=1e-15) and rd.status is Status.CONVERGED
        assert rows_agree(rc, rd)
        # CG scalars of the first outer iteration: g = (4, 3), H = [[3,1],[1,2]]
        scal = [m.payload.scalars for m in stats.log if m.src == LEADER and m.phase.startswith("o0/cg")]
        alpha0 = next(v for c, v in scal if c == ALPHA)
        beta0 = next(v for c, v in scal if c == BETA)
        g = np.array([4.0, 3.0])
        H = np.array([[3.0, 1.0], [1.0, 2.0]])
        a_ref = (g @ g) / (g @ H @ g)
        r1 = g - a_ref * H @ g
        b_ref = (r1 @ r1) / (g @ g)
        assert alpha0 == pytest.approx(a_ref, rel=1e-12) and beta0 == pytest.approx(b_ref, rel=1e-12)

    def test_t1_messages_per_cg_iteration(self, T1, x11):
        _, _, stats = run_distributed_newton(T1, x11, EXACT)
        edges = build_topology(T1).edges
        phases = stats.cg_iteration_phases()
        assert phases
        for ph in phases:
            assert stats.data_messages(ph) == 2 * T1.num_entries
            assert stats.by_phase[ph] == 2 * T1.num_entries + 4 * edges

    def test_single_path_identical(self):
        inst = kleinrock_scalar()
        _, rc = minimize(inst, [0.5])
        _, rd, _ = run_distributed_newton(inst, [0.5])
        assert [(r.F, r.grad_inf, r.cg_iters, r.stepsize) for r in rc.rows] == [
            (r.F, r.grad_inf, r.cg_iters, r.stepsize) for r in rd.rows
        ]

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("rule", [Constant(1.0), None])
    def test_random(self, seed, rule):
        inst, x = random_instance(seed, strongly_convex_r=True, arc_families=SOLVABLE_ARCS, path_families=SOLVABLE_PATHS)
        cfg = NewtonConfig(cg=CgConfig(ordered_reductions=True), precond="diag-h")
        if rule is not None:
            cfg.stepsize = rule
        _, rc = minimize(inst, x, cfg)
        _, rd, _ = run_distributed_newton(inst, x, cfg, build_topology(inst, seed, "random-member"))
        assert rc.status is rd.status and rows_agree(rc, rd)

    @pytest.mark.parametrize("method", ["steepest", "diag-grad"])
    def test_first_order_methods(self, method):
        inst, x = random_instance(1, strongly_convex_r=True, arc_families=SOLVABLE_ARCS, path_families=SOLVABLE_PATHS)
        cfg = NewtonConfig(method=method, max_outer=15, cg=CgConfig(ordered_reductions=True))
        _, rc = minimize(inst, x, cfg)
        _, rd, _ = run_distributed_newton(inst, x, cfg)
        assert rows_agree(rc, rd)

    def test_zero_curvature_escape(self):
        inst = single_block(2, [(0, 0, 1.0), (0, 1, 1.0)], [Quadratic(1, 0, 0)],
                            [Quadratic(0, 0, 1.0), Quadratic(0, 0, -1.0)])
        cfg = NewtonConfig(max_outer=4, cg=CgConfig(ordered_reductions=True))
        _, rc = minimize(inst, np.zeros(2), cfg)
        _, rd, _ = run_distributed_newton(inst, np.zeros(2), cfg)
        assert rows_agree(rc, rd) and rd.rows[1].cg_termination == "zero-curvature-escape"

    def test_line_search_failure(self):
        inst = single_block(1, [(0, 0, 1.0)], [Quadratic(1, 0, 0)])
        cfg = NewtonConfig(method="steepest", stepsize=Armijo(initial=10.0, max_backtracks=0))
        _, rc = minimize(inst, [1.0], cfg)
        _, rd, _ = run_distributed_newton(inst, [1.0], cfg)
        assert rc.status is rd.status is Status.LINE_SEARCH_FAILURE

    def test_barrier_cap(self):
        inst = single_block(2, [(0, 0, 1.0), (0, 1, 1.0)], [KleinrockDelay(1.0)], [Quadratic(0, 0, -5.0)] * 2)
        cfg = NewtonConfig(cg=CgConfig(ordered_reductions=True))
        _, rc = minimize(inst, np.zeros(2), cfg)
        _, rd, _ = run_distributed_newton(inst, np.zeros(2), cfg)
        assert rows_agree(rc, rd)


class TestLogs:
    def test_reproducible(self):
        inst, x = random_instance(6, strongly_convex_r=True, arc_families=SOLVABLE_ARCS, path_families=SOLVABLE_PATHS)
        tree = build_topology(inst, 3, "random-member")
        a = run_distributed_newton(inst, x, NewtonConfig(max_outer=3), tree)[2]
        b = run_distributed_newton(inst, x, NewtonConfig(max_outer=3), build_topology(inst, 3, "random-member"))[2]
        assert format_message_log(a.log) == format_message_log(b.log)
        assert a.digest() == b.digest()

    def test_format(self, T1, x11):
        _, _, stats = run_distributed_newton(T1, x11, NewtonConfig(max_outer=1))
        first = format_message_log(stats.log).splitlines()[0].split("\t")
        assert first[0] == "1" and first[3] in ("PathContribution", "ArcFeedback", "ReduceUp", "Broadcast")

    def test_op_delta_counts_messages(self, T1, x11):
        _, rep, stats = run_distributed_newton(T1, x11, NewtonConfig(max_outer=2))
        assert sum(r.op_delta for r in rep.rows) == stats.messages == rep.ops_total
