"""Instance files, point files and trace files.

Instance format (line oriented, ``#`` starts a comment)::

    pathnet 1
    paths 2
    path 0 name=p1 cost=Quadratic q=1 t=0 l=0
    path 1 name=p2 cost=KleinrockDelay cap=3 lb=0
    block
    arc 0 name=a1 cost=Quadratic q=1 t=0 l=0
    entry 0 0 1
    entry 0 1 0.5
    end
    constraint rhs=1 0:1 1:1

Every path id ``0..P-1`` appears exactly once; arcs in a block are numbered
``0..n-1``. Parsing is strict: unknown keywords, missing or extra cost
parameters, and dangling references are errors that name line and column.
"""

from __future__ import annotations

import csv
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .costs import FAMILIES, CostSum, ScalarCostFn
from .instance import CouplingBlock, EqualityConstraints, NetworkInstance, validate

FORMAT_VERSION = 1

TRACE_HEADER = (
    "outer_iter",
    "F",
    "grad_inf_norm",
    "cg_iters",
    "cg_termination",
    "stepsize",
    "op_count",
    "elapsed_seconds",
)


class ParseError(ValueError):
    def __init__(self, line, col, msg):
        self.line, self.col = line, col
        super().__init__(f"line {line}, column {col}: {msg}")


class _Tok:
    __slots__ = ("text", "line", "col")

    def __init__(self, text, line, col):
        self.text, self.line, self.col = text, line, col

    def fail(self, msg):
        raise ParseError(self.line, self.col, msg)


def _tokenize(line_text, lineno):
    toks = []
    body = line_text.split("#", 1)[0]
    i = 0
    n = len(body)
    while i < n:
        if body[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not body[j].isspace():
            j += 1
        toks.append(_Tok(body[i:j], lineno, i + 1))
        i = j
    return toks


def _float(tok, text=None):
    text = tok.text if text is None else text
    try:
        v = float(text)
    except ValueError:
        tok.fail(f"expected a number, got {text!r}")
    if math.isnan(v):
        tok.fail("NaN is not allowed")
    return v


def _int(tok, text=None):
    text = tok.text if text is None else text
    try:
        return int(text)
    except ValueError:
        tok.fail(f"expected an integer, got {text!r}")


def _keyvals(toks) -> Dict[str, Tuple[str, _Tok]]:
    out = {}
    for t in toks:
        if "=" not in t.text:
            t.fail(f"expected key=value, got {t.text!r}")
        k, v = t.text.split("=", 1)
        if k in out:
            t.fail(f"duplicate key {k!r}")
        out[k] = (v, t)
    return out


def _cost(kv, head, allowed_extra):
    if "cost" not in kv:
        head.fail("missing cost=<kind>")
    kind, ktok = kv.pop("cost")
    if kind not in FAMILIES:
        ktok.fail(f"unknown cost kind {kind!r}; expected one of {', '.join(FAMILIES)}")
    cls, params = FAMILIES[kind]
    args = {}
    for name in params:
        if name in kv:
            v, t = kv.pop(name)
            args[name] = _int(t, v) if (cls.__name__ == "PowerMonomial" and name == "k") else _float(t, v)
        elif not (kind == "NegPartPenalty" and name == "lower"):
            head.fail(f"{kind} needs parameter {name!r}")
    for k, (_, t) in kv.items():
        if k not in allowed_extra:
            t.fail(f"unknown key {k!r}")
    try:
        return cls(**args)
    except ValueError as e:
        ktok.fail(str(e))


def parse_instance(text: str) -> NetworkInstance:
    lines = [(i + 1, _tokenize(raw, i + 1)) for i, raw in enumerate(text.splitlines())]
    lines = [(n, t) for n, t in lines if t]
    if not lines:
        raise ParseError(1, 1, "empty document")
    it = iter(lines)

    n, toks = next(it)
    if toks[0].text != "pathnet" or len(toks) != 2:
        toks[0].fail("expected header 'pathnet <version>'")
    if _int(toks[1]) != FORMAT_VERSION:
        toks[1].fail(f"unsupported format version {toks[1].text}")
    try:
        n, toks = next(it)
    except StopIteration:
        raise ParseError(n + 1, 1, "missing 'paths <P>' line") from None
    if toks[0].text != "paths" or len(toks) != 2:
        toks[0].fail("expected 'paths <P>'")
    P = _int(toks[1])
    if P <= 0:
        toks[1].fail("num_paths must be positive")

    path_costs: List[Optional[ScalarCostFn]] = [None] * P
    names: List[Optional[str]] = [None] * P
    lbs = [-math.inf] * P
    blocks = []
    rows, rhs = [], []
    cur = None  # (entries, arc_costs, arc_names, seen, block_tok)
    last = (n, toks)

    for n, toks in it:
        last = (n, toks)
        head = toks[0]
        word = head.text
        if cur is not None and word not in ("arc", "entry", "end"):
            head.fail(f"unexpected {word!r} inside block (missing 'end'?)")
        if word == "path":
            if len(toks) < 2:
                head.fail("path record needs an id")
            p = _int(toks[1])
            if not 0 <= p < P:
                toks[1].fail(f"path id {p} out of range 0..{P - 1}")
            if path_costs[p] is not None:
                toks[1].fail(f"path {p} defined twice")
            kv = _keyvals(toks[2:])
            name = kv.pop("name", (None, None))[0]
            lb = kv.pop("lb", None)
            path_costs[p] = _cost(kv, head, ())
            names[p] = name
            if lb is not None:
                lbs[p] = _float(lb[1], lb[0])
        elif word == "block":
            if len(toks) != 1:
                toks[1].fail("'block' takes no arguments")
            cur = ([], {}, {}, set(), head)
        elif word == "arc":
            if cur is None:
                head.fail("'arc' outside of a block")
            if len(toks) < 2:
                head.fail("arc record needs an id")
            a = _int(toks[1])
            if a < 0 or a in cur[1]:
                toks[1].fail(f"bad or repeated arc id {a}")
            kv = _keyvals(toks[2:])
            name = kv.pop("name", (None, None))[0]
            cur[1][a] = _cost(kv, head, ())
            cur[2][a] = name
        elif word == "entry":
            if cur is None:
                head.fail("'entry' outside of a block")
            if len(toks) != 4:
                head.fail("expected 'entry <arc> <path> <weight>'")
            a, p, w = _int(toks[1]), _int(toks[2]), _float(toks[3])
            if a not in cur[1]:
                toks[1].fail(f"entry references unknown arc {a} (declare arcs before entries)")
            if not 0 <= p < P:
                toks[2].fail(f"entry references unknown path {p}")
            if w == 0.0 or not math.isfinite(w):
                toks[3].fail("weight must be finite and nonzero")
            if (a, p) in cur[3]:
                head.fail(f"duplicate coupling entry ({a}, {p})")
            cur[3].add((a, p))
            cur[0].append((a, p, w))
        elif word == "end":
            if cur is None:
                head.fail("'end' without 'block'")
            ents, costs, anames, _, btok = cur
            ids = sorted(costs)
            if ids != list(range(len(ids))):
                btok.fail(f"arc ids in block must be 0..{len(ids) - 1}")
            arc_names = tuple(anames[a] or f"a{a}" for a in ids) if any(anames.values()) else None
            blocks.append(CouplingBlock(tuple(ents), tuple(costs[a] for a in ids), arc_names))
            cur = None
        elif word == "constraint":
            kv_toks = [t for t in toks[1:] if "=" in t.text]
            pair_toks = [t for t in toks[1:] if "=" not in t.text]
            kv = _keyvals(kv_toks)
            if "rhs" not in kv:
                head.fail("constraint needs rhs=<value>")
            rv, rt = kv.pop("rhs")
            b = _float(rt, rv)
            for k, (_, t) in kv.items():
                t.fail(f"unknown key {k!r}")
            row, seen = [], set()
            for t in pair_toks:
                if ":" not in t.text:
                    t.fail(f"expected path:coeff, got {t.text!r}")
                ps, cs = t.text.split(":", 1)
                p = _int(t, ps)
                if not 0 <= p < P:
                    t.fail(f"constraint references unknown path {p}")
                if p in seen:
                    t.fail(f"path {p} repeated in constraint")
                seen.add(p)
                row.append((p, _float(t, cs)))
            if not row:
                head.fail("constraint has no terms")
            rows.append(tuple(row))
            rhs.append(b)
        else:
            head.fail(f"unknown record {word!r}")

    if cur is not None:
        cur[4].fail("block not closed with 'end'")
    missing = [p for p in range(P) if path_costs[p] is None]
    if missing:
        raise ParseError(last[0], 1, f"missing path records for ids {missing}")
    if not blocks:
        raise ParseError(last[0], 1, "at least one block is required")
    inst = NetworkInstance(
        num_paths=P,
        path_costs=tuple(path_costs),
        blocks=tuple(blocks),
        equality_constraints=EqualityConstraints(tuple(rows), tuple(rhs)) if rows else None,
        lower_bounds=tuple(lbs) if any(b > -math.inf for b in lbs) else None,
        path_names=tuple(nm or f"p{p}" for p, nm in enumerate(names)) if any(names) else None,
    )
    report = validate(inst)
    if not report.ok:
        raise ParseError(0, 0, "; ".join(report.violations))
    return inst


def _num(v: float) -> str:
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def _cost_text(fn: ScalarCostFn) -> str:
    if isinstance(fn, CostSum):
        raise ValueError("composite costs cannot be serialized")
    kind = type(fn).__name__
    _, params = FAMILIES[kind]
    parts = [f"cost={kind}"]
    for name in params:
        v = getattr(fn, name)
        parts.append(f"{name}={v}" if isinstance(v, int) else f"{name}={_num(v)}")
    return " ".join(parts)


def serialize_instance(inst: NetworkInstance) -> str:
    out = [f"pathnet {FORMAT_VERSION}", f"paths {inst.num_paths}"]
    for p, fn in enumerate(inst.path_costs):
        rec = [f"path {p}"]
        if inst.path_names:
            rec.append(f"name={inst.path_names[p]}")
        rec.append(_cost_text(fn))
        if inst.lower_bounds is not None and inst.lower_bounds[p] > -math.inf:
            rec.append(f"lb={_num(inst.lower_bounds[p])}")
        out.append(" ".join(rec))
    for blk in inst.blocks:
        out.append("block")
        for a, fn in enumerate(blk.arc_costs):
            name = f" name={blk.arc_names[a]}" if blk.arc_names else ""
            out.append(f"arc {a}{name} {_cost_text(fn)}")
        for a, p, w in blk.entries:
            out.append(f"entry {a} {p} {_num(w)}")
        out.append("end")
    if inst.has_constraints:
        ec = inst.equality_constraints
        for row, b in zip(ec.rows, ec.rhs):
            out.append(" ".join([f"constraint rhs={_num(b)}"] + [f"{p}:{_num(c)}" for p, c in row]))
    return "\n".join(out) + "\n"


def load_instance(path) -> NetworkInstance:
    with open(path) as fh:
        return parse_instance(fh.read())


def read_vector(path, size: Optional[int] = None) -> np.ndarray:
    with open(path) as fh:
        vals = [float(t) for t in fh.read().split()]
    if size is not None and len(vals) != size:
        raise ValueError(f"{path}: expected {size} values, got {len(vals)}")
    return np.asarray(vals)


def _g17(v) -> str:
    return f"{float(v):.17g}"


def trace_rows(report, timing: bool = False):
    for r in report.rows:
        yield [
            str(r.outer_iter),
            _g17(r.F),
            _g17(r.grad_inf),
            str(r.cg_iters),
            r.cg_termination,
            _g17(r.stepsize),
            str(r.op_delta),
            _g17(r.elapsed if timing else 0.0),
        ]


def write_trace(report, fh, timing: bool = False) -> None:
    """CSV trace; ``elapsed_seconds`` is 0 unless ``timing`` (keeps files reproducible)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for row in trace_rows(report, timing):
        w.writerow(row)


def read_trace(fh) -> List[dict]:
    reader = csv.DictReader(fh)
    if tuple(reader.fieldnames or ()) != TRACE_HEADER:
        raise ValueError("not a trace file: header mismatch")
    return list(reader)
