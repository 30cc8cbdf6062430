"""AST, concrete syntax, parser, validator, and ideal() for .qw programs.

Definitions are resolved to numeric matrices at parse time (scalar params
are substituted first), so the AST carries resolved operators alongside the
names used in the source. Invariants that the spec wants reported as
diagnostics (unitarity, measurement completeness, channel trace behaviour,
noise probability ranges) are checked by validate(), not by the parser.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import quantum
from .errors import QwSyntaxError, UnknownGateError, UnknownVariableError

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True, eq=False)
class Skip:
    pass


@dataclass(frozen=True, eq=False)
class Init:
    var: str


@dataclass(frozen=True, eq=False)
class RawNoise:
    """Unvalidated noise annotation: probability and Kraus list of the model."""

    p: float
    kraus: tuple
    ref: str


@dataclass(frozen=True, eq=False)
class NoisyUnitary:
    """vars := ref[vars] [noisy(p, channel)].

    ``op`` is the resolved operator: a unitary matrix for gate refs, or a
    tuple of Kraus matrices for (ideal) channel applications. Noise is only
    permitted on gate refs.
    """

    vars: tuple
    ref: str
    op: object  # np.ndarray | tuple of np.ndarray
    noise: RawNoise | None = None

    @property
    def is_channel(self) -> bool:
        return isinstance(self.op, tuple)


@dataclass(frozen=True, eq=False)
class Seq:
    first: object
    rest: object


@dataclass(frozen=True, eq=False)
class Case:
    vars: tuple
    meas_ref: str
    outcomes: tuple  # of (label, matrix), measurement as written
    branches: tuple  # of (label, Program), one per outcome label


@dataclass(frozen=True, eq=False)
class While:
    vars: tuple
    meas_ref: str
    outcomes: tuple  # labels exactly ("0", "1"); loop continues on "1"
    body: object


Program = object  # union of the node classes above


@dataclass(frozen=True, eq=False)
class SourceFile:
    name: str
    qubits: tuple
    ancillas: tuple
    int_vars: tuple
    defs: dict  # name -> ("gate", matrix) | ("channel", kraus tuple) | ("measurement", outcomes tuple) | ("const", complex)
    params: dict  # name -> float (resolved, after overrides)
    body: object

    @property
    def register(self) -> tuple:
        return self.qubits + self.ancillas


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


def children(p: Program) -> tuple:
    """Child programs of a node, defining the AST-path addressing scheme."""
    if isinstance(p, Seq):
        return (p.first, p.rest)
    if isinstance(p, Case):
        return tuple(b for _, b in p.branches)
    if isinstance(p, While):
        return (p.body,)
    return ()


def node_at(p: Program, path) -> Program:
    for i in path:
        kids = children(p)
        if not 0 <= i < len(kids):
            raise KeyError(f"no child {i} at {type(p).__name__}")
        p = kids[i]
    return p


def ideal(p: Program) -> Program:
    """Same program with every noise annotation removed. Idempotent."""
    if isinstance(p, NoisyUnitary):
        return NoisyUnitary(p.vars, p.ref, p.op, None) if p.noise else p
    if isinstance(p, Seq):
        return Seq(ideal(p.first), ideal(p.rest))
    if isinstance(p, Case):
        return Case(p.vars, p.meas_ref, p.outcomes,
                    tuple((lbl, ideal(b)) for lbl, b in p.branches))
    if isinstance(p, While):
        return While(p.vars, p.meas_ref, p.outcomes, ideal(p.body))
    return p


def ideal_source(f: SourceFile) -> SourceFile:
    return SourceFile(f.name, f.qubits, f.ancillas, f.int_vars, f.defs,
                      f.params, ideal(f.body))


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<ket>\|[01]>)
  | (?P<num>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?i?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<assign>:=)
  | (?P<arrow>->)
  | (?P<sym>[;,:=\[\]{}()*+\-/^|])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "program", "qubits", "ancillas", "ints", "gate", "channel", "measurement",
    "const", "param", "skip", "case", "while", "measure", "do", "end", "noisy",
}


@dataclass(frozen=True)
class _Tok:
    kind: str  # 'ket' | 'num' | 'imag' | 'ident' | symbol text | 'eof'
    raw: str
    line: int
    col: int


def _lex(text: str):
    toks = []
    pos, line, bol = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise QwSyntaxError(f"unexpected character {text[pos]!r}", line, pos - bol + 1)
        raw = m.group(0)
        col = pos - bol + 1
        kind = m.lastgroup
        if kind == "ws":
            line += raw.count("\n")
            if "\n" in raw:
                bol = pos + raw.rindex("\n") + 1
        elif kind == "num":
            toks.append(_Tok("imag" if raw.endswith("i") else "num", raw, line, col))
        elif kind in ("ket", "ident"):
            toks.append(_Tok(kind, raw, line, col))
        elif kind == "assign":
            toks.append(_Tok(":=", raw, line, col))
        elif kind == "arrow":
            toks.append(_Tok("->", raw, line, col))
        else:
            toks.append(_Tok(raw, raw, line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, len(text) - bol + 1))
    return toks


def _fmt_float(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e16 else repr(float(x))


def _fmt_complex(z: complex) -> str:
    re_, im = float(np.real(z)), float(np.imag(z))
    if im == 0.0:
        return _fmt_float(re_)
    if re_ == 0.0:
        return ("-" if im < 0 else "") + _fmt_float(abs(im)) + "i"
    return _fmt_float(re_) + ("+" if im >= 0 else "-") + _fmt_float(abs(im)) + "i"


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str, params: dict | None = None):
        self.toks = _lex(text)
        self.i = 0
        self.overrides = dict(params or {})
        self.scalars: dict = {}  # const/param name -> complex
        self.defs: dict = {}
        self.params: dict = {}
        self.qubits: tuple = ()
        self.ancillas: tuple = ()
        self.int_vars: tuple = ()

    # -- token helpers

    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i = min(self.i + 1, len(self.toks) - 1)
        return t

    def accept(self, kind: str, raw: str | None = None):
        t = self.peek()
        if t.kind == kind and (raw is None or t.raw == raw):
            return self.next()
        return None

    def expect(self, kind: str, what: str | None = None) -> _Tok:
        t = self.peek()
        if t.kind != kind:
            raise QwSyntaxError(f"expected {what or kind}, found {t.raw or 'end of input'!r}",
                                t.line, t.col)
        return self.next()

    def keyword(self, kw: str) -> _Tok:
        t = self.peek()
        if t.kind != "ident" or t.raw != kw:
            raise QwSyntaxError(f"expected {kw!r}, found {t.raw or 'end of input'!r}",
                                t.line, t.col)
        return self.next()

    def at_keyword(self, kw: str) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.raw == kw

    def err(self, msg: str, tok: _Tok | None = None):
        t = tok or self.peek()
        raise QwSyntaxError(msg, t.line, t.col)

    # -- file structure

    def parse_file(self) -> SourceFile:
        self.keyword("program")
        name = self.expect("ident", "program name").raw
        self.accept(";")
        self.keyword("qubits")
        self.qubits = self._ident_list()
        if self.at_keyword("ancillas"):
            self.next()
            self.ancillas = self._ident_list()
        if self.at_keyword("ints"):
            self.next()
            self.int_vars = self._ident_list()
        dup = set(self.qubits) & set(self.ancillas)
        if dup:
            self.err(f"variable declared twice: {sorted(dup)}")
        while self.peek().kind == "ident" and self.peek().raw in (
                "gate", "channel", "measurement", "const", "param"):
            self._parse_def()
        body = self.parse_seq(("eof",))
        self.expect("eof")
        return SourceFile(name, self.qubits, self.ancillas, self.int_vars,
                          self.defs, self.params, body)

    def _ident_list(self) -> tuple:
        names = [self.expect("ident", "variable name").raw]
        while self.peek().kind == "ident":
            names.append(self.next().raw)
        self.expect(";")
        if len(set(names)) != len(names):
            self.err(f"duplicate variable in declaration: {names}")
        return tuple(names)

    def _def_name(self) -> str:
        t = self.expect("ident", "definition name")
        if t.raw in self.defs or t.raw in self.scalars:
            self.err(f"duplicate definition {t.raw!r}", t)
        if t.raw in quantum.BUILTIN_NAMES or t.raw in _KEYWORDS or t.raw in _FUNCS or t.raw == "i":
            self.err(f"definition {t.raw!r} shadows a builtin", t)
        return t.raw

    def _parse_def(self):
        kw = self.next().raw
        name = self._def_name()
        self.expect("=")
        if kw == "gate":
            self.defs[name] = ("gate", self._matrix_value())
        elif kw == "channel":
            self.expect("{")
            ops = [self._matrix_value()]
            while self.accept(","):
                ops.append(self._matrix_value())
            self.expect("}")
            self.defs[name] = ("channel", tuple(ops))
        elif kw == "measurement":
            self.expect("{")
            outs = [self._meas_outcome()]
            while self.accept(","):
                outs.append(self._meas_outcome())
            self.expect("}")
            labels = [lbl for lbl, _ in outs]
            if len(set(labels)) != len(labels):
                self.err(f"duplicate outcome label in measurement {name!r}")
            self.defs[name] = ("measurement", tuple(outs))
        elif kw == "const":
            self.scalars[name] = self._scalar_value()
            self.defs[name] = ("const", self.scalars[name])
        else:  # param
            tok = self.peek()
            default = self._scalar_value()
            if abs(np.imag(default)) > 1e-15:
                self.err("parameter default must be real", tok)
            value = float(self.overrides.get(name, np.real(default)))
            self.params[name] = value
            self.scalars[name] = complex(value)
        self.expect(";")

    def _label(self) -> str:
        t = self.peek()
        if t.kind in ("ident", "num") or t.raw in ("+", "-"):
            return self.next().raw
        self.err("expected an outcome label")

    def _meas_outcome(self):
        lbl = self._label()
        self.expect(":")
        return (lbl, self._matrix_value())

    # -- expressions (shared scalar/matrix grammar, evaluated immediately)

    def _scalar_value(self) -> complex:
        tok = self.peek()
        v = self._expr_add()
        if isinstance(v, np.ndarray):
            self.err("expected a scalar, found a matrix", tok)
        return complex(v)

    def _matrix_value(self) -> np.ndarray:
        tok = self.peek()
        v = self._expr_add()
        if not isinstance(v, np.ndarray):
            self.err("expected a matrix, found a scalar", tok)
        return np.asarray(v, dtype=complex)

    def _expr_add(self):
        v = self._expr_mul()
        while self.peek().raw in ("+", "-") and self.peek().kind in ("+", "-"):
            op = self.next().raw
            tok = self.peek()
            w = self._expr_mul()
            if isinstance(v, np.ndarray) != isinstance(w, np.ndarray):
                self.err("cannot add a scalar and a matrix", tok)
            if isinstance(v, np.ndarray) and v.shape != w.shape:
                self.err(f"shape mismatch in {op}: {v.shape} vs {w.shape}", tok)
            v = v + w if op == "+" else v - w
        return v

    def _expr_mul(self):
        v = self._expr_unary()
        while self.peek().kind in ("*", "/"):
            op = self.next().raw
            tok = self.peek()
            w = self._expr_unary()
            if op == "/":
                if isinstance(w, np.ndarray):
                    self.err("cannot divide by a matrix", tok)
                if w == 0:
                    self.err("division by zero", tok)
                v = v / w
            elif isinstance(v, np.ndarray) and isinstance(w, np.ndarray):
                if v.shape[1] != w.shape[0]:
                    self.err(f"shape mismatch in product: {v.shape} @ {w.shape}", tok)
                v = v @ w
            else:
                v = v * w
        return v

    def _expr_unary(self):
        if self.peek().kind == "-":
            self.next()
            return -self._expr_unary()
        if self.peek().kind == "+":
            self.next()
            return self._expr_unary()
        return self._expr_pow()

    def _expr_pow(self):
        v = self._expr_atom()
        if self.peek().kind == "^":
            tok = self.next()
            e = self._expr_unary()
            if isinstance(v, np.ndarray) or isinstance(e, np.ndarray):
                self.err("^ is defined for scalars only", tok)
            if abs(np.imag(e)) > 1e-15 or float(np.real(e)) != int(np.real(e)):
                self.err("exponent must be an integer", tok)
            v = v ** int(np.real(e))
        return v

    def _expr_atom(self):
        t = self.peek()
        if t.kind == "num":
            self.next()
            return complex(float(t.raw))
        if t.kind == "imag":
            self.next()
            return complex(0.0, float(t.raw[:-1]))
        if t.kind == "(":
            self.next()
            v = self._expr_add()
            self.expect(")")
            return v
        if t.kind == "[":
            return self._matrix_literal()
        if t.kind == "ident":
            return self._expr_name()
        self.err(f"unexpected token {t.raw!r} in expression")

    def _matrix_literal(self) -> np.ndarray:
        self.expect("[")
        rows = [self._matrix_row()]
        while self.accept(","):
            rows.append(self._matrix_row())
        self.expect("]")
        if any(len(r) != len(rows[0]) for r in rows):
            self.err("matrix rows have unequal lengths")
        return np.array(rows, dtype=complex)

    def _matrix_row(self) -> list:
        self.expect("[")
        row = [self._scalar_value()]
        while self.accept(","):
            row.append(self._scalar_value())
        self.expect("]")
        return row

    def _expr_name(self):
        t = self.next()
        name = t.raw
        if name == "i":
            return 1j
        if name == "sqrt":
            self.expect("(")
            v = self._scalar_value()
            self.expect(")")
            return complex(np.sqrt(v))
        if name == "dagger":
            self.expect("(")
            v = self._matrix_value()
            self.expect(")")
            return np.asarray(v).conj().T
        if name == "kron":
            self.expect("(")
            v = self._matrix_value()
            while self.accept(","):
                v = np.kron(v, self._matrix_value())
            self.expect(")")
            return v
        if name == "proj":
            self.expect("(")
            bits = self.expect("num", "bit string")
            if any(c not in "01" for c in bits.raw):
                self.err(f"proj expects a bit string, got {bits.raw!r}", bits)
            self.expect(")")
            return quantum.proj(bits.raw)
        if name == "at":
            return self._at_expr()
        if name in self.scalars:
            return self.scalars[name]
        if name in self.defs:
            kind, val = self.defs[name]
            if kind != "gate":
                self.err(f"{name!r} is a {kind}, not usable in a matrix expression", t)
            return val
        if name in quantum.BUILTIN_NAMES:
            op, _ = self._builtin_ref(t)
            if isinstance(op, tuple):
                self.err(f"builtin channel {name!r} not usable in a matrix expression", t)
            return op
        self.err(f"unknown name {name!r} in expression", t)

    def _at_expr(self) -> np.ndarray:
        self.expect("(")
        m = self._matrix_value()
        args = []
        while self.accept(","):
            v = self._scalar_value()
            if abs(np.imag(v)) > 1e-15 or float(np.real(v)) != int(np.real(v)):
                self.err("at() positions must be integers")
            args.append(int(np.real(v)))
        self.expect(")")
        if len(args) < 2:
            self.err("at(M, n, p1, ...) needs a width and at least one position")
        n, pos = args[0], args[1:]
        if len(set(pos)) != len(pos) or any(not 1 <= p <= n for p in pos):
            self.err(f"at(): positions {pos} invalid for width {n}")
        if m.shape != (2 ** len(pos), 2 ** len(pos)):
            self.err(f"at(): matrix of shape {m.shape} does not act on {len(pos)} qubits")
        reg = [f"#{k}" for k in range(1, n + 1)]
        return quantum.lift(m, [f"#{p}" for p in pos], reg)

    # -- operator references in statements

    def _builtin_ref(self, t: _Tok):
        """Resolve a builtin name (with optional call arguments) to (op, canonical ref)."""
        name = t.raw
        args: list[str] = []
        if self.accept("("):
            while True:
                if name == "TOFFOLI":
                    a = self.expect("num", "control pattern")
                    args.append(a.raw)
                else:
                    args.append(_fmt_float(float(np.real(self._scalar_value()))))
                if not self.accept(","):
                    break
            self.expect(")")
        try:
            if name == "TOFFOLI":
                op = quantum.builtin(name, args)
            elif name == "QW_S":
                op = quantum.builtin(name, [int(float(a)) for a in args])
            else:
                op = quantum.builtin(name, [float(a) for a in args])
        except UnknownGateError as e:
            self.err(str(e), t)
        ref = name + (f"({','.join(args)})" if args else "")
        if isinstance(op, quantum.Superoperator):
            return tuple(op.kraus), ref
        return op, ref

    def _op_ref(self):
        """Gate-or-channel reference: returns (op, ref) with op a matrix or Kraus tuple."""
        t = self.expect("ident", "gate or channel name")
        name = t.raw
        if name in self.defs:
            kind, val = self.defs[name]
            if kind == "gate":
                return val, name
            if kind == "channel":
                return val, name
            self.err(f"{name!r} is a {kind}, not a gate or channel", t)
        if name in quantum.BUILTIN_NAMES:
            return self._builtin_ref(t)
        raise UnknownGateError(f"{t.line}:{t.col}: unknown gate or channel {name!r}")

    # -- statements

    def parse_seq(self, _stop: tuple = ()) -> Program:
        stmts = [self.parse_stmt()]
        while self.accept(";"):
            if self._at_stop():
                break
            stmts.append(self.parse_stmt())
        node = stmts[-1]
        for s in reversed(stmts[:-1]):
            node = Seq(s, node)
        return node

    def _at_stop(self) -> bool:
        t = self.peek()
        return t.kind == "eof" or (t.kind == "ident" and t.raw == "end") or t.kind == "|"

    def _var_list(self) -> tuple:
        names = [self.expect("ident", "variable").raw]
        while self.accept(","):
            names.append(self.expect("ident", "variable").raw)
        declared = set(self.qubits) | set(self.ancillas)
        for n in names:
            if n not in declared:
                raise UnknownVariableError(f"undeclared variable {n!r}")
        if len(set(names)) != len(names):
            self.err(f"duplicate variable in list: {names}")
        return tuple(names)

    def parse_stmt(self) -> Program:
        t = self.peek()
        if t.kind == "ident" and t.raw == "skip":
            self.next()
            return Skip()
        if t.kind == "ident" and t.raw == "case":
            return self._parse_case()
        if t.kind == "ident" and t.raw == "while":
            return self._parse_while()
        vars_ = self._var_list()
        self.expect(":=")
        k = self.peek()
        if k.kind == "ket":
            self.next()
            if len(vars_) != 1:
                self.err("ket initialization takes a single variable", k)
            init = Init(vars_[0])
            if k.raw == "|1>":  # sugar: q := |1>  desugars to  q := |0>; q := X[q]
                return Seq(init, NoisyUnitary(vars_, "X", quantum.builtin("X"), None))
            return init
        op, ref = self._op_ref()
        self.expect("[")
        inner = self._var_list()
        self.expect("]")
        if inner != vars_:
            self.err(f"operand list {list(inner)} must match left-hand side {list(vars_)}")
        dim = op[0].shape if isinstance(op, tuple) else op.shape
        if dim != (2 ** len(vars_), 2 ** len(vars_)):
            self.err(f"{ref} acts on {dim[0]}-dimensional space but got {len(vars_)} qubit(s)")
        noise = None
        if self.at_keyword("noisy"):
            self.next()
            self.expect("(")
            p = self._scalar_value()
            if abs(np.imag(p)) > 1e-12:
                self.err("noise probability must be real")
            self.expect(",")
            ch_t = self.expect("ident", "noise channel")
            self.i -= 1
            ch_op, ch_ref = self._op_ref()
            self.expect(")")
            if isinstance(ch_op, np.ndarray):
                ch_op = (ch_op,)  # unitary name promoted to U ∘ U†
            cdim = ch_op[0].shape
            if cdim != (2 ** len(vars_), 2 ** len(vars_)):
                self.err(f"noise channel {ch_ref} dimension {cdim[0]} does not match statement", ch_t)
            noise = RawNoise(float(np.real(p)), ch_op, ch_ref)
        return NoisyUnitary(vars_, ref, op, noise)

    def _measurement_header(self):
        self.keyword("measure")
        t = self.expect("ident", "measurement name")
        entry = self.defs.get(t.raw)
        if entry is None or entry[0] != "measurement":
            self.err(f"unknown measurement {t.raw!r}", t)
        self.expect("[")
        vars_ = self._var_list()
        self.expect("]")
        outs = entry[1]
        d = outs[0][1].shape[0]
        if d != 2 ** len(vars_):
            self.err(f"measurement {t.raw!r} is {d}-dimensional but got {len(vars_)} qubit(s)", t)
        return t.raw, outs, vars_

    def _parse_case(self) -> Program:
        kw = self.next()  # case
        ref, outs, vars_ = self._measurement_header()
        branches = []
        while self.accept("|"):
            lbl = self._label()
            self.expect("->")
            branches.append((lbl, self.parse_seq()))
        self.keyword("end")
        blabels = [lbl for lbl, _ in branches]
        mlabels = [lbl for lbl, _ in outs]
        missing = [l for l in mlabels if l not in blabels]
        if missing:
            self.err(f"case is missing branch for outcome {missing[0]!r}", kw)
        extra = [l for l in blabels if l not in mlabels]
        if extra:
            self.err(f"case has branch for unknown outcome {extra[0]!r}", kw)
        if len(set(blabels)) != len(blabels):
            self.err("duplicate case branch label", kw)
        by_label = dict(branches)
        return Case(vars_, ref, outs, tuple((l, by_label[l]) for l in mlabels))

    def _parse_while(self) -> Program:
        kw = self.next()  # while
        ref, outs, vars_ = self._measurement_header()
        if sorted(lbl for lbl, _ in outs) != ["0", "1"]:
            self.err("while measurement must have exactly the outcomes 0 and 1", kw)
        self.expect("=")
        one = self.expect("num")
        if one.raw != "1":
            self.err("while guard must test outcome 1", one)
        self.keyword("do")
        body = self.parse_seq()
        self.keyword("end")
        return While(vars_, ref, outs, body)


_FUNCS = {"sqrt", "dagger", "kron", "proj", "at"}


def parse(text: str, params: dict | None = None) -> SourceFile:
    """Parse .qw source text; ``params`` overrides declared parameter defaults."""
    return _Parser(text, params).parse_file()


# ---------------------------------------------------------------------------
# validation


def _gram_top(kraus) -> float:
    g = sum(np.conj(k).T @ k for k in kraus)
    return float(np.linalg.eigvalsh((g + np.conj(g).T) / 2)[-1])


def validate(f: SourceFile) -> list[Diagnostic]:
    """Static checks; returns an empty list iff the file is analyzable."""
    diags: list[Diagnostic] = []
    if f.int_vars:
        diags.append(Diagnostic(
            "unsupported-type",
            f"Int-typed variables are not supported: {', '.join(f.int_vars)}"))
    for name, (kind, val) in f.defs.items():
        if kind == "gate":
            if val.shape[0] != val.shape[1]:
                diags.append(Diagnostic("not-unitary", f"gate {name!r} is not square: {val.shape}"))
                continue
            dev = np.abs(np.conj(val).T @ val - np.eye(val.shape[0])).max()
            if dev > 1e-9:
                diags.append(Diagnostic("not-unitary", f"gate {name!r}: |U†U - I| = {dev:.2e}"))
        elif kind == "channel":
            top = _gram_top(val)
            if top > 1 + 1e-9:
                diags.append(Diagnostic(
                    "not-trace-nonincreasing",
                    f"channel {name!r}: max eigenvalue of sum E†E = {top:.6f} > 1"))
        elif kind == "measurement":
            comp = sum(np.conj(m).T @ m for _, m in val)
            dev = np.abs(comp - np.eye(comp.shape[0])).max()
            if dev > 1e-9:
                diags.append(Diagnostic(
                    "incomplete-measurement",
                    f"measurement {name!r}: |sum M†M - I| = {dev:.2e}"))

    def walk(p):
        if isinstance(p, NoisyUnitary):
            if not p.is_channel:
                dev = np.abs(np.conj(p.op).T @ p.op - np.eye(p.op.shape[0])).max()
                if dev > 1e-9:
                    diags.append(Diagnostic("not-unitary", f"operator {p.ref!r}: |U†U - I| = {dev:.2e}"))
            if p.noise is not None:
                if p.is_channel:
                    diags.append(Diagnostic(
                        "noise-on-channel",
                        f"noise annotation on channel application {p.ref!r}"))
                if not -1e-12 <= p.noise.p <= 1 + 1e-12:
                    diags.append(Diagnostic(
                        "noise-probability-range",
                        f"noise probability {p.noise.p} outside [0,1] on {p.ref!r}"))
                top = _gram_top(p.noise.kraus)
                if top > 1 + 1e-9:
                    diags.append(Diagnostic(
                        "not-trace-nonincreasing",
                        f"noise channel {p.noise.ref!r}: max eigenvalue of sum E†E = {top:.6f} > 1"))
        for c in children(p):
            walk(c)

    walk(f.body)
    return diags


# ---------------------------------------------------------------------------
# pretty printer (canonical form; parse(pretty(f)) == f up to resolution)


def _fmt_matrix(m: np.ndarray) -> str:
    rows = ["[" + ", ".join(_fmt_complex(z) for z in row) + "]" for row in np.asarray(m)]
    return "[" + ", ".join(rows) + "]"


def _stmt_block(p: Program, indent: str) -> list:
    """Lines for a single (non-Seq) statement."""
    if isinstance(p, Skip):
        return [indent + "skip"]
    if isinstance(p, Init):
        return [indent + f"{p.var} := |0>"]
    if isinstance(p, NoisyUnitary):
        vs = ", ".join(p.vars)
        s = f"{indent}{vs} := {p.ref}[{vs}]"
        if p.noise is not None:
            s += f" noisy({repr(p.noise.p)}, {p.noise.ref})"
        return [s]
    if isinstance(p, Case):
        vs = ", ".join(p.vars)
        lines = [indent + f"case measure {p.meas_ref}[{vs}]"]
        for lbl, b in p.branches:
            lines.append(indent + f"| {lbl} ->")
            lines.extend(_emit_seq(b, indent + "    "))
        lines.append(indent + "end")
        return lines
    if isinstance(p, While):
        vs = ", ".join(p.vars)
        lines = [indent + f"while measure {p.meas_ref}[{vs}] = 1 do"]
        lines.extend(_emit_seq(p.body, indent + "    "))
        lines.append(indent + "end")
        return lines
    raise TypeError(f"unknown node {type(p)}")


def _emit_seq(p: Program, indent: str) -> list:
    """Lines for a statement sequence, ';' appended between statements."""
    blocks = []
    while isinstance(p, Seq):
        blocks.append(_stmt_block(p.first, indent))
        p = p.rest
    blocks.append(_stmt_block(p, indent))
    lines = []
    for k, block in enumerate(blocks):
        if k < len(blocks) - 1:
            block = block[:-1] + [block[-1] + ";"]
        lines.extend(block)
    return lines


def pretty(f: SourceFile) -> str:
    out = [f"program {f.name};"]
    out.append("qubits " + " ".join(f.qubits) + ";")
    if f.ancillas:
        out.append("ancillas " + " ".join(f.ancillas) + ";")
    if f.int_vars:
        out.append("ints " + " ".join(f.int_vars) + ";")
    for name, value in f.params.items():
        out.append(f"param {name} = {repr(value)};")
    for name, (kind, val) in f.defs.items():
        if kind == "gate":
            out.append(f"gate {name} = {_fmt_matrix(val)};")
        elif kind == "channel":
            out.append(f"channel {name} = {{ " + ", ".join(_fmt_matrix(k) for k in val) + " };")
        elif kind == "measurement":
            items = ", ".join(f"{lbl}: {_fmt_matrix(m)}" for lbl, m in val)
            out.append(f"measurement {name} = {{ {items} }};")
        elif kind == "const":
            out.append(f"const {name} = {_fmt_complex(val)};")
    out.extend(_emit_seq(f.body, ""))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# structural equality (used by the round-trip tests)


def program_equal(a: Program, b: Program) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, Skip):
        return True
    if isinstance(a, Init):
        return a.var == b.var
    if isinstance(a, NoisyUnitary):
        if (a.vars, a.ref, a.is_channel) != (b.vars, b.ref, b.is_channel):
            return False
        ops_a = a.op if a.is_channel else (a.op,)
        ops_b = b.op if b.is_channel else (b.op,)
        if len(ops_a) != len(ops_b) or any(not np.array_equal(x, y) for x, y in zip(ops_a, ops_b)):
            return False
        if (a.noise is None) != (b.noise is None):
            return False
        if a.noise is not None:
            if (a.noise.p, a.noise.ref) != (b.noise.p, b.noise.ref):
                return False
            if len(a.noise.kraus) != len(b.noise.kraus):
                return False
            if any(not np.array_equal(x, y) for x, y in zip(a.noise.kraus, b.noise.kraus)):
                return False
        return True
    if isinstance(a, Seq):
        return program_equal(a.first, b.first) and program_equal(a.rest, b.rest)
    if isinstance(a, (Case, While)):
        if (a.vars, a.meas_ref) != (b.vars, b.meas_ref):
            return False
        la = [(l, m) for l, m in a.outcomes]
        lb = [(l, m) for l, m in b.outcomes]
        if [l for l, _ in la] != [l for l, _ in lb]:
            return False
        if any(not np.array_equal(x, y) for (_, x), (_, y) in zip(la, lb)):
            return False
        if isinstance(a, While):
            return program_equal(a.body, b.body)
        return all(pa == pb and program_equal(x, y)
                   for (pa, x), (pb, y) in zip(a.branches, b.branches))
    return False


def source_equal(a: SourceFile, b: SourceFile) -> bool:
    if (a.name, a.qubits, a.ancillas, a.int_vars) != (b.name, b.qubits, b.ancillas, b.int_vars):
        return False
    if a.params != b.params:
        return False
    if set(a.defs) != set(b.defs):
        return False
    for name, (kind, val) in a.defs.items():
        kb, vb = b.defs[name]
        if kind != kb:
            return False
        if kind == "gate" and not np.array_equal(val, vb):
            return False
        if kind == "channel" and (len(val) != len(vb) or any(
                not np.array_equal(x, y) for x, y in zip(val, vb))):
            return False
        if kind == "measurement":
            if [l for l, _ in val] != [l for l, _ in vb]:
                return False
            if any(not np.array_equal(x, y) for (_, x), (_, y) in zip(val, vb)):
                return False
        if kind == "const" and val != vb:
            return False
    return program_equal(a.body, b.body)
