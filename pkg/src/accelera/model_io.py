"""Loop model files and result serialisation.

Text format (``#`` starts a comment; matrix rows go on separate lines or are
separated by ``;``)::

    format 1
    name thermostat
    vars temp heat
    A [
      0.97 0.1
      -0.05 1
    ]
    B [ 0.02 0 ; 0 0.05 ]
    guard [
      1 0 <= 400
      0 1 <= 300
    ]
    init box [ 5 40 ; 0 1 ]
    input box [ 5 40 ; 0 300 ]
    template octagon+eigen
    option dir_budget 12

``init``/``input`` also accept constraint rows (``[ c1 c2 <= d ; ... ]``) or
``point [ x1 x2 ]``; ``input none`` declares a loop without inputs and
``guard none`` an unguarded one.  The same content as a JSON object is
accepted interchangeably.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .acceleration import LinearLoop
from .exceptions import ModelError
from .geometry import Polytope

FORMAT_VERSION = 1

_TOKEN = re.compile(r"[ \t\r\f\v]*(?:(#[^\n]*)|(\n)|(<=|\[|\]|;|[^\s\[\];#]+))")


@dataclass
class _Tok:
    text: str
    line: int
    col: int


@dataclass
class ModelDocument:
    """Raw model content before validation."""

    name: str = "loop"
    var_names: list = field(default_factory=list)
    dim: int = None
    inputs: int = None
    A: np.ndarray = None
    B: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None
    init: tuple = None
    input: tuple = None
    template: object = None
    options: dict = field(default_factory=dict)
    positions: dict = field(default_factory=dict)


def _tokenize(text):
    toks = []
    line, col0 = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ModelError(f"unexpected character {text[pos]!r}", line, pos - col0 + 1)
        if m.group(2):
            start = m.start(2)
            toks.append(_Tok("\n", line, start - col0 + 1))
            line += 1
            col0 = m.end(2)
        elif m.group(3):
            start = m.start(3)
            toks.append(_Tok(m.group(3), line, start - col0 + 1))
        pos = m.end()
    toks.append(_Tok("", line, pos - col0 + 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        if t.text != "":
            self.i += 1
        return t

    def skip_newlines(self):
        while self.peek().text == "\n":
            self.i += 1

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return ModelError(msg, tok.line, tok.col)

    def expect_eol(self):
        t = self.peek()
        if t.text not in ("\n", ""):
            raise self.error(f"unexpected {t.text!r}")

    def number(self, tok):
        try:
            v = float(tok.text)
        except ValueError:
            raise self.error(f"expected a number, got {tok.text!r}", tok) from None
        if math.isnan(v):
            raise self.error("NaN is not allowed", tok)
        return v

    def integer(self):
        t = self.next()
        try:
            return int(t.text)
        except ValueError:
            raise self.error(f"expected an integer, got {t.text!r}", t) from None

    def rows(self):
        """``[ ... ]`` with rows split by newlines or ``;``; returns list of token rows."""
        t = self.next()
        if t.text != "[":
            raise self.error(f"expected '[', got {t.text!r}", t)
        rows, cur = [], []
        while True:
            t = self.next()
            if t.text == "":
                raise self.error("unterminated '['", t)
            if t.text == "]":
                break
            if t.text in ("\n", ";"):
                if cur:
                    rows.append(cur)
                cur = []
                continue
            if t.text == "[":
                raise self.error("nested '[' is not allowed", t)
            cur.append(t)
        if cur:
            rows.append(cur)
        return rows, t

    def matrix(self, what):
        start = self.peek()
        rows, _ = self.rows()
        if not rows:
            raise self.error(f"{what} is empty", start)
        width = len(rows[0])
        out = []
        for r in rows:
            if len(r) != width:
                raise self.error(f"{what}: row has {len(r)} entries, expected {width}", r[0])
            out.append([self.number(t) for t in r])
        return np.array(out), start

    def constraints(self, what):
        start = self.peek()
        rows, _ = self.rows()
        C, d = [], []
        width = None
        for r in rows:
            idx = [k for k, t in enumerate(r) if t.text == "<="]
            if len(idx) != 1 or idx[0] != len(r) - 2:
                raise self.error(f"{what}: rows must read 'c1 ... cn <= d'", r[0])
            coeffs = [self.number(t) for t in r[:-2]]
            if width is None:
                width = len(coeffs)
            elif len(coeffs) != width:
                raise self.error(f"{what}: row has {len(coeffs)} coefficients, expected {width}", r[0])
            C.append(coeffs)
            d.append(self.number(r[-1]))
        if not C:
            return np.zeros((0, 0)), np.zeros(0), start
        return np.array(C), np.array(d), start


def _set_spec(ps, what):
    """``box [...]``, ``point [...]``, ``none`` or constraint rows."""
    t = ps.peek()
    if t.text == "box":
        ps.next()
        M, pos = ps.matrix(what)
        if M.shape[1] != 2:
            raise ModelError(f"{what} box needs 'lo hi' per row", pos.line, pos.col)
        return ("box", M), t
    if t.text == "point":
        ps.next()
        M, pos = ps.matrix(what)
        return ("point", M.reshape(-1)), t
    if t.text == "none":
        ps.next()
        return ("none", None), t
    C, d, pos = ps.constraints(what)
    return ("constraints", (C, d)), t


def parse_document(text):
    """Parse model text (or JSON) into a :class:`ModelDocument` without cross-checking dimensions."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _document_from_json(text)
    ps = _Parser(text)
    doc = ModelDocument()
    seen = set()
    while True:
        ps.skip_newlines()
        t = ps.next()
        if t.text == "":
            break
        key = t.text
        if key in seen and key != "option":
            raise ps.error(f"duplicate section {key!r}", t)
        seen.add(key)
        doc.positions[key] = (t.line, t.col)
        if key == "format":
            v = ps.integer()
            if v != FORMAT_VERSION:
                raise ModelError(f"unsupported format version {v}", t.line, t.col)
        elif key == "name":
            doc.name = ps.next().text
        elif key == "vars":
            names = []
            while ps.peek().text not in ("\n", ""):
                names.append(ps.next().text)
            doc.var_names = names
        elif key == "dim":
            doc.dim = ps.integer()
        elif key == "inputs":
            doc.inputs = ps.integer()
        elif key == "A":
            doc.A, _ = ps.matrix("A")
        elif key == "B":
            doc.B, _ = ps.matrix("B")
        elif key == "guard":
            if ps.peek().text == "none":
                ps.next()
                doc.G, doc.h = None, None
            else:
                C, d, _ = ps.constraints("guard")
                doc.G, doc.h = C, d
        elif key == "init":
            doc.init, _ = _set_spec(ps, "init")
        elif key == "input":
            doc.input, _ = _set_spec(ps, "input")
        elif key == "template":
            if ps.peek().text == "[":
                doc.template, _ = ps.matrix("template")
            else:
                doc.template = ps.next().text
        elif key == "option":
            k = ps.next()
            v = ps.next()
            if k.text in ("", "\n") or v.text in ("", "\n"):
                raise ps.error("option needs a key and a value", k)
            doc.options[k.text] = _option_value(v.text)
        else:
            raise ModelError(f"unknown section {key!r}", t.line, t.col)
        ps.expect_eol()
    return doc


def _option_value(s):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def _document_from_json(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"invalid JSON: {e.msg}", e.lineno, e.colno) from None
    if not isinstance(obj, dict):
        raise ModelError("model JSON must be an object", 1, 1)
    fv = obj.get("format", FORMAT_VERSION)
    if fv != FORMAT_VERSION:
        raise ModelError(f"unsupported format version {fv}", 1, 1)
    doc = ModelDocument(name=str(obj.get("name", "loop")), var_names=list(obj.get("vars", [])))
    doc.dim = obj.get("dim")
    doc.inputs = obj.get("inputs")

    def mat(key, required=True):
        if key not in obj:
            if required:
                raise ModelError(f"missing {key!r}", 1, 1)
            return None
        try:
            M = np.array(obj[key], dtype=float)
        except (TypeError, ValueError):
            raise ModelError(f"{key} must be a numeric matrix", 1, 1) from None
        if M.ndim != 2:
            raise ModelError(f"{key} must be a list of rows", 1, 1)
        return M

    doc.A = mat("A")
    doc.B = mat("B", required=False)
    g = obj.get("guard")
    if g is not None:
        doc.G = np.array(g["G"], dtype=float).reshape(len(g["G"]), -1)
        doc.h = np.array(g["h"], dtype=float)
    doc.init = _json_set(obj.get("init"), "init")
    doc.input = _json_set(obj.get("input"), "input")
    doc.template = obj.get("template")
    doc.options = dict(obj.get("options", {}))
    return doc


def _json_set(s, what):
    if s is None:
        return ("none", None)
    if "box" in s:
        return ("box", np.array(s["box"], dtype=float))
    if "point" in s:
        return ("point", np.array(s["point"], dtype=float))
    if "C" in s:
        return ("constraints", (np.array(s["C"], dtype=float), np.array(s["d"], dtype=float)))
    raise ModelError(f"{what}: expected 'box', 'point' or 'C'/'d'", 1, 1)


def _polytope(spec, dim, what, pos):
    kind, data = spec
    line, col = pos
    if kind == "box":
        if data.shape != (dim, 2):
            raise ModelError(f"{what} box has {data.shape[0]} rows, expected {dim}", line, col)
        if np.any(data[:, 0] > data[:, 1]):
            raise ModelError(f"{what} is empty (lo > hi)", line, col)
        return Polytope.box(data[:, 0], data[:, 1])
    if kind == "point":
        if data.shape != (dim,):
            raise ModelError(f"{what} point has {data.shape[0]} entries, expected {dim}", line, col)
        return Polytope.point(data)
    C, d = data
    if C.shape[1] != dim:
        raise ModelError(f"{what} rows have {C.shape[1]} coefficients, expected {dim}", line, col)
    try:
        return Polytope(C, d)
    except ValueError as e:
        raise ModelError(f"{what}: {e}", line, col) from None


def document_to_loop(doc):
    """Validate a :class:`ModelDocument` and build the :class:`LinearLoop`."""
    pos = lambda k: doc.positions.get(k, (1, 1))  # noqa: E731
    if doc.A is None:
        raise ModelError("missing A", 1, 1)
    p = doc.A.shape[0]
    if doc.A.shape != (p, p):
        raise ModelError(f"A must be square, got {doc.A.shape[0]}x{doc.A.shape[1]}", *pos("A"))
    if doc.dim is not None and doc.dim != p:
        raise ModelError(f"A is {p}x{p} but dim is {doc.dim}", *pos("A"))
    if doc.var_names and len(doc.var_names) != p:
        raise ModelError(f"vars names {len(doc.var_names)} variables, expected {p}", *pos("vars"))
    no_input = doc.input is None or doc.input[0] == "none"
    if no_input:
        if doc.B is not None and np.any(doc.B != 0):
            raise ModelError("B given but no input set", *pos("B"))
        B = np.zeros((p, 1))
        U = Polytope.point([0.0])
    else:
        if doc.B is None:
            raise ModelError("input set given but B missing", *pos("input"))
        B = doc.B
        if B.shape[0] != p:
            raise ModelError(f"B has {B.shape[0]} rows, expected {p}", *pos("B"))
        q = B.shape[1]
        if doc.inputs is not None and doc.inputs != q:
            raise ModelError(f"B has {q} columns but inputs is {doc.inputs}", *pos("B"))
        U = _polytope(doc.input, q, "input", pos("input"))
    if doc.G is None or doc.G.size == 0:
        G, h = np.zeros((0, p)), np.zeros(0)
    else:
        if doc.G.shape[1] != p:
            raise ModelError(f"guard rows have {doc.G.shape[1]} coefficients, expected {p}", *pos("guard"))
        G, h = doc.G, doc.h
        zero = np.flatnonzero(np.all(G == 0, axis=1))
        if zero.size:
            raise ModelError(f"guard row {zero[0] + 1} is zero", *pos("guard"))
    if doc.init is None or doc.init[0] == "none":
        raise ModelError("missing init", 1, 1)
    X0 = _polytope(doc.init, p, "init", pos("init"))
    if X0.is_empty():
        raise ModelError("init is empty", *pos("init"))
    if U.is_empty():
        raise ModelError("input is empty", *pos("input"))
    if not U.is_bounded():
        raise ModelError("input is unbounded", *pos("input"))
    template = doc.template
    if isinstance(template, list):
        template = np.array(template, dtype=float)
    if isinstance(template, np.ndarray) and template.shape[1] != p:
        raise ModelError(f"template rows have {template.shape[1]} entries, expected {p}", *pos("template"))
    try:
        return LinearLoop(A=doc.A, B=B, G=G, h=h, X0=X0, U=U, name=doc.name, template=template,
                          options=dict(doc.options), var_names=tuple(doc.var_names))
    except ModelError as e:
        if e.line is None:
            raise ModelError(e.message, 1, 1) from None
        raise


def parse_model(text):
    """Parse and validate a loop model from text or JSON."""
    return document_to_loop(parse_document(text))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


# --------------------------------------------------------------------------
# serialisation


def _fmt(x):
    x = float(x)
    if x == int(x) and abs(x) < 1e16:
        return str(int(x)) if x != 0 or math.copysign(1, x) > 0 else "-0.0"
    return repr(x)


def _rows(M):
    return "\n".join("  " + " ".join(_fmt(v) for v in row) for row in np.atleast_2d(M))


def _box_of(P):
    """``(lo, hi)`` when ``P`` was built as ``[I; -I] x <= [hi; -lo]``, else ``None``."""
    p = P.dim
    if P.C.shape == (2 * p, p) and np.array_equal(P.C, np.vstack([np.eye(p), -np.eye(p)])):
        return -P.d[p:], P.d[:p]
    return None


def _set_text(P):
    b = _box_of(P)
    if b is not None:
        lo, hi = b
        return "box [\n" + _rows(np.column_stack([lo, hi])) + "\n]"
    body = "\n".join("  " + " ".join(_fmt(v) for v in row) + " <= " + _fmt(off) for row, off in zip(P.C, P.d))
    return "[\n" + body + "\n]"


def serialize_model(model):
    """Text form of a :class:`LinearLoop`; ``parse_model`` reads it back to the same structure."""
    out = [f"format {FORMAT_VERSION}", f"name {model.name}"]
    if model.var_names:
        out.append("vars " + " ".join(model.var_names))
    out.append("A [\n" + _rows(model.A) + "\n]")
    out.append("B [\n" + _rows(model.B) + "\n]")
    if model.r:
        body = "\n".join("  " + " ".join(_fmt(v) for v in row) + " <= " + _fmt(off)
                         for row, off in zip(model.G, model.h))
        out.append("guard [\n" + body + "\n]")
    else:
        out.append("guard none")
    out.append("init " + _set_text(model.X0))
    out.append("input " + _set_text(model.U))
    if model.template is not None:
        if isinstance(model.template, str):
            out.append(f"template {model.template}")
        else:
            out.append("template [\n" + _rows(model.template) + "\n]")
    for k, v in sorted(model.options.items()):
        out.append(f"option {k} {v if not isinstance(v, float) else _fmt(v)}")
    return "\n".join(out) + "\n"


def model_to_json(model):
    def set_obj(P):
        b = _box_of(P)
        if b is not None:
            return {"box": np.column_stack(b).tolist()}
        return {"C": P.C.tolist(), "d": P.d.tolist()}

    obj = {
        "format": FORMAT_VERSION,
        "name": model.name,
        "vars": list(model.var_names),
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "guard": {"G": model.G.tolist(), "h": model.h.tolist()} if model.r else None,
        "init": set_obj(model.X0),
        "input": set_obj(model.U),
        "template": model.template.tolist() if isinstance(model.template, np.ndarray) else model.template,
        "options": dict(model.options),
    }
    return json.dumps(obj, indent=2)


def _num(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def jsonable(obj):
    """Plain JSON-ready structure (infinities become strings)."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _count(n):
    return _num(n) if math.isinf(float(n)) else int(n)


def write_results(tube, run=None, fmt="json", model_name=None, include_timings=True):
    """Serialise a reach tube (and optionally an LGG run) as JSON or CSV text.

    JSON carries the template, per-direction ``lo``/``hi``, crossing bounds,
    decomposition residual and provenance; infinities are written as the
    strings ``"inf"``/``"-inf"``.  CSV has columns ``d0..d{p-1},lo,hi``.
    """
    if fmt == "csv":
        return _results_csv(tube)
    if fmt != "json":
        raise ValueError(f"unknown format {fmt!r}")
    obj = {
        "format_version": FORMAT_VERSION,
        "model": model_name,
        "mode": tube.mode,
        "n_lower": _count(tube.n_lower),
        "n_upper": _count(tube.n_upper),
        "delta_max": tube.provenance.get("delta_max"),
        "template": tube.template,
        "bounds": [{"direction": d, "lo": lo, "hi": hi} for d, lo, hi in zip(tube.template, tube.lo, tube.hi)],
        "provenance": tube.provenance,
    }
    if include_timings:
        obj["timings"] = tube.timings
    if run is not None:
        obj["lgg"] = {
            "N": run.N,
            "bounds": [{"direction": d, "lo": lo, "hi": hi} for d, lo, hi in zip(run.template, run.lo, run.hi)],
        }
        if include_timings:
            obj["lgg"]["elapsed"] = run.elapsed
    return json.dumps(jsonable(obj), indent=2, sort_keys=True)


def _results_csv(tube):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    p = tube.template.shape[1] if tube.template.ndim == 2 else 0
    w.writerow([f"d{i}" for i in range(p)] + ["lo", "hi"])
    for d, lo, hi in zip(tube.template, tube.lo, tube.hi):
        w.writerow([repr(float(x)) for x in d] + [repr(float(lo)), repr(float(hi))])
    return buf.getvalue()


def read_results_csv(text):
    """Inverse of the CSV writer: ``(template, lo, hi)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ModelError("empty CSV", 1, 1)
    header = rows[0]
    p = len(header) - 2
    data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, p + 2)
    return data[:, :p], data[:, p], data[:, p + 1]


def read_results_json(text):
    obj = json.loads(text)

    def val(x):
        return float(x) if isinstance(x, str) else x

    obj["n_lower"] = val(obj["n_lower"])
    obj["n_upper"] = val(obj["n_upper"])
    for b in obj["bounds"]:
        b["lo"], b["hi"] = val(b["lo"]), val(b["hi"])
    return obj


__all__ = [
    "FORMAT_VERSION",
    "ModelDocument",
    "parse_document",
    "document_to_loop",
    "parse_model",
    "load_model",
    "serialize_model",
    "model_to_json",
    "write_results",
    "read_results_csv",
    "read_results_json",
    "jsonable",
]
