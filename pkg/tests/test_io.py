import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathnewton.costs import KleinrockDelay, NegPartPenalty, PowerMonomial
from pathnewton.instance import EqualityConstraints, NetworkInstance
from pathnewton.io import (
    TRACE_HEADER,
    ParseError,
    parse_instance,
    read_trace,
    read_vector,
    serialize_instance,
    write_trace,
)
from pathnewton.newton import minimize
from pathnewton.synthetic import random_instance, t1

T1_DOC = """\
# two paths, two arcs
pathnet 1
paths 2
path 0 name=p1 cost=Quadratic q=1 t=0 l=0
path 1 name=p2 cost=Quadratic q=1 t=0 l=0
block
arc 0 name=a1 cost=Quadratic q=1 t=0 l=0
arc 1 name=a2 cost=Quadratic q=1 t=0 l=0
entry 0 0 1
entry 1 0 1
entry 1 1 1
end
"""


def doc_with(line, where="end"):
    return T1_DOC.replace(f"{where}\n", f"{line}\n{where}\n", 1)


class TestParse:
    def test_t1(self):
        inst = parse_instance(T1_DOC)
        assert inst.num_paths == 2 and inst.num_entries == 3 and inst.num_arcs == 2
        assert inst.path_names == ("p1", "p2") and inst.blocks[0].arc_names == ("a1", "a2")

    def test_negative_capacity(self):
        doc = T1_DOC.replace("arc 1 name=a2 cost=Quadratic q=1 t=0 l=0", "arc 1 cost=KleinrockDelay cap=-2")
        with pytest.raises(ParseError, match="line 8, column 7.*capacity"):
            parse_instance(doc)

    def test_unknown_path_names_line(self):
        with pytest.raises(ParseError, match="line 12, column 9: entry references unknown path 5"):
            parse_instance(doc_with("entry 0 5 1"))

    @pytest.mark.parametrize(
        "doc, needle",
        [
            ("", "empty document"),
            ("pathnet 2\npaths 1\n", "unsupported format version"),
            ("junk 1\n", "expected header"),
            (T1_DOC.replace("paths 2", "paths 0"), "num_paths must be positive"),
            (doc_with("entry 0 0 1"), "duplicate coupling entry"),
            (doc_with("entry 9 0 1"), "unknown arc 9"),
            (doc_with("entry 0 1 0"), "nonzero"),
            (T1_DOC.replace("q=1 t=0 l=0\npath 1", "q=1 t=0 l=0 color=red\npath 1"), "unknown key 'color'"),
            (T1_DOC.replace("cost=Quadratic q=1 t=0 l=0\npath 1", "cost=Cubic\npath 1"), "unknown cost kind"),
            (T1_DOC.replace("q=1 t=0 l=0\npath 1", "q=1 t=0\npath 1"), "needs parameter 'l'"),
            (T1_DOC.replace("end\n", ""), "not closed"),
            (T1_DOC.replace("path 1 name=p2 cost=Quadratic q=1 t=0 l=0\n", ""), "missing path records"),
            (T1_DOC + "constraint 0:1 1:1\n", "needs rhs"),
            (T1_DOC + "constraint rhs=1 0:1 0:2\n", "repeated"),
            (T1_DOC + "frobnicate\n", "unknown record"),
            (T1_DOC.replace("q=1 t=0 l=0\npath 1", "q=1 t=0 l=nan\npath 1"), "NaN"),
        ],
    )
    def test_errors(self, doc, needle):
        with pytest.raises(ParseError, match=needle):
            parse_instance(doc)

    def test_error_has_position(self):
        with pytest.raises(ParseError) as ei:
            parse_instance(doc_with("entry 0 x 1"))
        assert (ei.value.line, ei.value.col) == (12, 9)

    def test_constraints_and_bounds(self):
        doc = T1_DOC.replace("path 1 name=p2 cost=Quadratic q=1 t=0 l=0", "path 1 cost=Quadratic q=1 t=0 l=0 lb=0.25")
        inst = parse_instance(doc + "constraint rhs=2 0:1 1:0.5\n")
        assert inst.lower_bounds == (-math.inf, 0.25)
        assert inst.equality_constraints.rows == (((0, 1.0), (1, 0.5)),)
        assert inst.equality_constraints.rhs == (2.0,)

    @pytest.mark.parametrize(
        "decl, fn",
        [
            ("cost=KleinrockDelay cap=3", KleinrockDelay(3.0)),
            ("cost=PowerMonomial c=2 k=3", PowerMonomial(2.0, 3)),
            ("cost=NegPartPenalty c=2", NegPartPenalty(2.0)),
            ("cost=NegPartPenalty c=2 lower=-1", NegPartPenalty(2.0, -1.0)),
        ],
    )
    def test_cost_kinds(self, decl, fn):
        doc = T1_DOC.replace("arc 1 name=a2 cost=Quadratic q=1 t=0 l=0", f"arc 1 {decl}")
        assert parse_instance(doc).blocks[0].arc_costs[1] == fn


class TestRoundTrip:
    def test_t1_canonical(self):
        text = serialize_instance(t1())
        assert serialize_instance(parse_instance(text)) == text

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_random_stable(self, seed):
        inst, _ = random_instance(seed)
        a = serialize_instance(inst)
        back = parse_instance(a)
        assert serialize_instance(back) == a
        assert back.blocks == inst.blocks and back.path_costs == inst.path_costs

    def test_with_constraints(self):
        base = t1()
        inst = NetworkInstance(
            2, base.path_costs, base.blocks, EqualityConstraints((((0, 1.0), (1, 1.0)),), (0.1,)), (0.0, -math.inf)
        )
        text = serialize_instance(inst)
        back = parse_instance(text)
        assert serialize_instance(back) == text and back.equality_constraints.rhs == (0.1,)


class TestTrace:
    def test_rows_and_header(self, T1, x11):
        _, rep = minimize(T1, x11)
        buf = io.StringIO()
        write_trace(rep, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == ",".join(TRACE_HEADER)
        assert len(lines) == rep.iterations + 2
        rows = read_trace(io.StringIO(buf.getvalue()))
        assert float(rows[0]["F"]) == 3.5 and rows[0]["elapsed_seconds"] == "0"

    def test_reals_round_trip(self, T1, x11):
        _, rep = minimize(T1, x11)
        buf = io.StringIO()
        write_trace(rep, buf)
        rows = read_trace(io.StringIO(buf.getvalue()))
        assert [float(r["F"]) for r in rows] == [r.F for r in rep.rows]

    def test_timing(self, T1, x11):
        _, rep = minimize(T1, x11)
        buf = io.StringIO()
        write_trace(rep, buf, timing=True)
        assert float(read_trace(io.StringIO(buf.getvalue()))[-1]["elapsed_seconds"]) > 0

    def test_header_check(self):
        with pytest.raises(ValueError):
            read_trace(io.StringIO("a,b\n1,2\n"))


def test_read_vector(tmp_path):
    p = tmp_path / "x"
    p.write_text("1 2.5\n-3e-2\n")
    assert read_vector(p).tolist() == [1.0, 2.5, -0.03]
    with pytest.raises(ValueError):
        read_vector(p, 2)
