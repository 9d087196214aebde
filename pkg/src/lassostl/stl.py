"""Bounded-time STL over discrete-time trajectories.

Formulas are immutable trees of frozen dataclasses.  Predicates are affine
in named signals, ``mu(x) = sum_k c_k x[k] + offset``, and hold when
``mu(x) >= 0`` (``> 0`` for strict predicates produced by negation or by a
strict comparison in the text syntax).

Text syntax::

    formula := conj ("|" conj)*
    conj    := unary ("&" unary)*
    unary   := "!" unary
             | "G[a,b]" "(" formula ")" | "F[a,b]" "(" formula ")"
             | "(" formula ")" ["U[a,b]" "(" formula ")"]
             | "true" | "false" | macro-name | linexpr cmp linexpr
    cmp     := ">=" | "<=" | ">" | "<"
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "LinearPredicate", "TrueF", "Pred", "Not", "And", "Or", "Until", "Always",
    "Eventually", "Formula", "TRUE", "FALSE", "Trajectory", "STLSyntaxError",
    "parse_formula", "to_text", "formula_horizon", "pad_to_common_horizon",
    "push_negations", "is_nnf", "eval_boolean", "eval_robustness",
    "eval_windows", "predicates", "signals_of", "conj",
]


class STLSyntaxError(ValueError):
    def __init__(self, message: str, pos: int | None = None, text: str | None = None):
        self.pos = pos
        if pos is not None and text is not None:
            message = f"{message} at position {pos}: {text[:pos]}<HERE>{text[pos:]}"
        super().__init__(message)


@dataclass(frozen=True)
class LinearPredicate:
    coeffs: tuple[tuple[str, float], ...]
    offset: float = 0.0
    strict: bool = False

    @classmethod
    def make(cls, coeffs: Mapping[str, float], offset: float = 0.0, strict: bool = False):
        items = tuple(sorted((k, float(v)) for k, v in coeffs.items() if v != 0.0))
        return cls(items, float(offset), strict)

    def negated(self) -> "LinearPredicate":
        # not(mu >= 0) == (-mu > 0); not(mu > 0) == (-mu >= 0)
        return LinearPredicate(tuple((k, -v) for k, v in self.coeffs), -self.offset, not self.strict)

    def value(self, x: Mapping[str, float]) -> float:
        return self.offset + sum(c * x[k] for k, c in self.coeffs)

    def holds(self, mu: float) -> bool:
        return mu > 0 if self.strict else mu >= 0


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Pred:
    pred: LinearPredicate


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Formula", ...]


@dataclass(frozen=True)
class Until:
    lhs: "Formula"
    rhs: "Formula"
    a: int
    b: int


@dataclass(frozen=True)
class Always:
    child: "Formula"
    a: int
    b: int


@dataclass(frozen=True)
class Eventually:
    child: "Formula"
    a: int
    b: int


Formula = Union[TrueF, Pred, Not, And, Or, Until, Always, Eventually]

TRUE = TrueF()
FALSE = Not(TRUE)

_TEMPORAL = (Until, Always, Eventually)


def conj(parts: Sequence[Formula]) -> Formula:
    """Conjunction that unwraps the single-conjunct case."""
    parts = tuple(parts)
    if not parts:
        return TRUE
    return parts[0] if len(parts) == 1 else And(parts)


def _check_interval(a: int, b: int) -> None:
    if a < 0 or b < 0:
        raise ValueError(f"negative interval bound [{a},{b}]")
    if a > b:
        raise ValueError(f"inverted interval [{a},{b}]")


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<temporal>[GFU]\[)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9.]*)"
    r"|(?P<op>>=|<=|>|<|[-+*/&|!(),\]]))"
)


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.items: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise STLSyntaxError("unexpected character", pos, text)
            kind = m.lastgroup
            start = m.start(kind)
            self.items.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def peek(self, k: int = 0):
        j = self.i + k
        return self.items[j] if j < len(self.items) else ("eof", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            raise STLSyntaxError(f"expected {value!r}, got {val or 'end of input'!r}", pos, self.text)
        return pos

    def error(self, message: str):
        raise STLSyntaxError(message, self.peek()[2], self.text)


class _Parser:
    def __init__(self, text, signals, macros):
        self.toks = _Tokens(text)
        self.signals = signals
        self.macros = macros or {}

    def parse(self) -> Formula:
        f = self.disj()
        if self.toks.peek()[0] != "eof":
            self.toks.error("trailing input")
        return f

    def disj(self):
        parts = [self.conj()]
        while self.toks.peek()[1] == "|":
            self.toks.take()
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conj(self):
        parts = [self.unary()]
        while self.toks.peek()[1] == "&":
            self.toks.take()
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def interval(self):
        kind, _, pos = self.toks.take()
        a = self.integer()
        self.toks.expect(",")
        b = self.integer()
        self.toks.expect("]")
        try:
            _check_interval(a, b)
        except ValueError as exc:
            raise STLSyntaxError(str(exc), pos, self.toks.text) from None
        return a, b

    def integer(self):
        sign = 1
        if self.toks.peek()[1] == "-":
            self.toks.take()
            sign = -1
        kind, val, pos = self.toks.take()
        if kind != "num" or not re.fullmatch(r"\d+", val):
            raise STLSyntaxError("expected integer interval bound", pos, self.toks.text)
        return sign * int(val)

    def unary(self):
        kind, val, pos = self.toks.peek()
        if val == "!":
            self.toks.take()
            return Not(self.unary())
        if kind == "temporal" and val in ("G[", "F["):
            a, b = self.interval()
            self.toks.expect("(")
            child = self.disj()
            self.toks.expect(")")
            return Always(child, a, b) if val == "G[" else Eventually(child, a, b)
        if val == "(" and self._paren_is_formula():
            self.toks.take()
            inner = self.disj()
            self.toks.expect(")")
            if self.toks.peek()[1] == "U[":
                a, b = self.interval()
                self.toks.expect("(")
                rhs = self.disj()
                self.toks.expect(")")
                return Until(inner, rhs, a, b)
            return inner
        if kind == "name" and val in ("true", "false") and not self._followed_by_arith(1):
            self.toks.take()
            return TRUE if val == "true" else FALSE
        if kind == "name" and val in self.macros and not self._followed_by_arith(1):
            self.toks.take()
            return self.macros[val]
        return self.atom()

    def _followed_by_arith(self, k):
        return self.toks.peek(k)[1] in (">=", "<=", ">", "<", "+", "-", "*", "/")

    def _paren_is_formula(self):
        # "(" opens a formula unless the matching ")" is followed by a comparison
        # or arithmetic operator, in which case it groups a linear expression.
        depth = 0
        j = self.toks.i
        while j < len(self.toks.items):
            v = self.toks.items[j][1]
            if v == "(":
                depth += 1
            elif v == ")":
                depth -= 1
                if depth == 0:
                    nxt = self.toks.items[j + 1][1] if j + 1 < len(self.toks.items) else ""
                    return nxt not in (">=", "<=", ">", "<", "+", "-", "*", "/")
            j += 1
        return True

    def atom(self):
        pos = self.toks.peek()[2]
        lhs = self.linexpr()
        kind, op, oppos = self.toks.take()
        if op not in (">=", "<=", ">", "<"):
            raise STLSyntaxError("expected comparison operator", oppos, self.toks.text)
        rhs = self.linexpr()
        if op in (">=", ">"):
            coeffs, off = _lin_sub(lhs, rhs)
        else:
            coeffs, off = _lin_sub(rhs, lhs)
        if not coeffs:
            # constant comparison folds to true/false
            ok = off > 0 if op in (">", "<") else off >= 0
            return TRUE if ok else FALSE
        return Pred(LinearPredicate.make(coeffs, off, strict=op in (">", "<")))

    # linear expressions are (coeff-dict, constant) pairs
    def linexpr(self):
        sign = 1.0
        if self.toks.peek()[1] in ("+", "-"):
            sign = -1.0 if self.toks.take()[1] == "-" else 1.0
        acc = _lin_scale(self.lterm(), sign)
        while self.toks.peek()[1] in ("+", "-"):
            s = -1.0 if self.toks.take()[1] == "-" else 1.0
            acc = _lin_add(acc, _lin_scale(self.lterm(), s))
        return acc

    def lterm(self):
        acc = self.lfactor()
        while self.toks.peek()[1] in ("*", "/"):
            op = self.toks.take()[1]
            pos = self.toks.peek()[2]
            rhs = self.lfactor()
            if op == "*":
                if acc[0] and rhs[0]:
                    raise STLSyntaxError("nonlinear term", pos, self.toks.text)
                acc = _lin_scale(rhs, acc[1]) if not acc[0] else _lin_scale(acc, rhs[1])
            else:
                if rhs[0] or rhs[1] == 0:
                    raise STLSyntaxError("division by a non-constant or zero", pos, self.toks.text)
                acc = _lin_scale(acc, 1.0 / rhs[1])
        return acc

    def lfactor(self):
        kind, val, pos = self.toks.take()
        if kind == "num":
            return ({}, float(val))
        if val == "-":
            return _lin_scale(self.lfactor(), -1.0)
        if val == "(":
            inner = self.linexpr()
            self.toks.expect(")")
            return inner
        if kind == "name":
            if val not in self.signals:
                raise STLSyntaxError(f"unknown signal {val!r}", pos, self.toks.text)
            return ({val: 1.0}, 0.0)
        raise STLSyntaxError("expected linear expression", pos, self.toks.text)


def _lin_scale(e, s):
    return ({k: v * s for k, v in e[0].items()}, e[1] * s)


def _lin_add(e1, e2):
    d = dict(e1[0])
    for k, v in e2[0].items():
        d[k] = d.get(k, 0.0) + v
    return (d, e1[1] + e2[1])


def _lin_sub(e1, e2):
    d, c = _lin_add(e1, _lin_scale(e2, -1.0))
    return {k: v for k, v in d.items() if v != 0.0}, c


def parse_formula(text: str, signals: Iterable[str], macros: Mapping[str, Formula] | None = None) -> Formula:
    """Parse ``text`` into a formula over the declared ``signals``.

    ``macros`` maps bare identifiers to previously built formulas; they are
    substituted verbatim.
    """
    return _Parser(text, frozenset(signals), macros).parse()


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _pred_text(p: LinearPredicate) -> str:
    parts = []
    for name, c in p.coeffs:
        if c == 1.0:
            term = name
        elif c == -1.0:
            term = f"-{name}"
        else:
            term = f"{_num(c)}*{name}"
        parts.append(term)
    if p.offset != 0.0 or not parts:
        parts.append(_num(p.offset))
    s = parts[0]
    for term in parts[1:]:
        s += f" - {term[1:]}" if term.startswith("-") else f" + {term}"
    return f"{s} {'>' if p.strict else '>='} 0"


def to_text(f: Formula) -> str:
    """Render ``f`` in the text syntax accepted by :func:`parse_formula`."""
    if isinstance(f, TrueF):
        return "true"
    if f == FALSE:
        return "false"
    if isinstance(f, Pred):
        return _pred_text(f.pred)
    if isinstance(f, Not):
        return f"!({to_text(f.child)})"
    if isinstance(f, (And, Or)):
        sep = " & " if isinstance(f, And) else " | "
        return sep.join(f"({to_text(c)})" for c in f.children)
    if isinstance(f, Always):
        return f"G[{f.a},{f.b}]({to_text(f.child)})"
    if isinstance(f, Eventually):
        return f"F[{f.a},{f.b}]({to_text(f.child)})"
    if isinstance(f, Until):
        return f"({to_text(f.lhs)}) U[{f.a},{f.b}] ({to_text(f.rhs)})"
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------------------
# structure

def formula_horizon(f: Formula) -> int:
    if isinstance(f, (TrueF, Pred)):
        return 0
    if isinstance(f, Not):
        return formula_horizon(f.child)
    if isinstance(f, (And, Or)):
        return max(formula_horizon(c) for c in f.children)
    if isinstance(f, (Always, Eventually)):
        return f.b + formula_horizon(f.child)
    if isinstance(f, Until):
        return f.b + max(formula_horizon(f.lhs), formula_horizon(f.rhs))
    raise TypeError(f"not a formula: {f!r}")


def pad_to_common_horizon(formulas: Sequence[Formula], uniform: bool = False) -> list[Formula]:
    """Wrap each formula in ``G[0, N - N_k]`` so that all share horizon N."""
    if not formulas:
        raise ValueError("no formulas to pad")
    horizons = [formula_horizon(f) for f in formulas]
    n = max(horizons)
    out = []
    for f, h in zip(formulas, horizons):
        out.append(Always(f, 0, n - h) if (h < n or uniform) else f)
    return out


def predicates(f: Formula) -> list[LinearPredicate]:
    """Distinct predicates of ``f`` in first-occurrence order."""
    seen: dict[LinearPredicate, None] = {}

    def walk(g):
        if isinstance(g, Pred):
            seen.setdefault(g.pred)
        elif isinstance(g, Not):
            walk(g.child)
        elif isinstance(g, (And, Or)):
            for c in g.children:
                walk(c)
        elif isinstance(g, (Always, Eventually)):
            walk(g.child)
        elif isinstance(g, Until):
            walk(g.lhs)
            walk(g.rhs)

    walk(f)
    return list(seen)


def signals_of(f: Formula) -> set[str]:
    return {name for p in predicates(f) for name, _ in p.coeffs}


def push_negations(f: Formula, negate: bool = False) -> Formula:
    """Negation normal form: ``Not`` survives only as the constant false."""
    if isinstance(f, TrueF):
        return FALSE if negate else TRUE
    if isinstance(f, Pred):
        return Pred(f.pred.negated()) if negate else f
    if isinstance(f, Not):
        return push_negations(f.child, not negate)
    if isinstance(f, And):
        kids = tuple(push_negations(c, negate) for c in f.children)
        return Or(kids) if negate else And(kids)
    if isinstance(f, Or):
        kids = tuple(push_negations(c, negate) for c in f.children)
        return And(kids) if negate else Or(kids)
    if isinstance(f, Always):
        c = push_negations(f.child, negate)
        return Eventually(c, f.a, f.b) if negate else Always(c, f.a, f.b)
    if isinstance(f, Eventually):
        c = push_negations(f.child, negate)
        return Always(c, f.a, f.b) if negate else Eventually(c, f.a, f.b)
    if isinstance(f, Until):
        if not negate:
            return Until(push_negations(f.lhs), push_negations(f.rhs), f.a, f.b)
        # not(l U[a,b] r) == AND_{k=a..b} ( F[k,k] !r  |  F[0,k] !l )
        nl = push_negations(f.lhs, True)
        nr = push_negations(f.rhs, True)
        parts = tuple(Or((Eventually(nr, k, k), Eventually(nl, 0, k))) for k in range(f.a, f.b + 1))
        return conj(parts)
    raise TypeError(f"not a formula: {f!r}")


def is_nnf(f: Formula) -> bool:
    if isinstance(f, (TrueF, Pred)):
        return True
    if isinstance(f, Not):
        return isinstance(f.child, TrueF)
    if isinstance(f, (And, Or)):
        return all(is_nnf(c) for c in f.children)
    if isinstance(f, (Always, Eventually)):
        return is_nnf(f.child)
    return is_nnf(f.lhs) and is_nnf(f.rhs)


# --------------------------------------------------------------------------
# evaluation

@dataclass
class Trajectory:
    """States ``values[k]`` at absolute times ``t0 + k``; columns follow ``signals``."""

    values: np.ndarray
    signals: tuple[str, ...]
    t0: int = 0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("trajectory needs at least one state")
        self.signals = tuple(self.signals)
        if self.values.shape[1] != len(self.signals):
            raise ValueError(f"{self.values.shape[1]} columns but {len(self.signals)} signal names")
        self._index = {s: i for i, s in enumerate(self.signals)}

    @classmethod
    def scalar(cls, xs: Sequence[float], name: str = "x", t0: int = 0) -> "Trajectory":
        return cls(np.asarray(xs, dtype=float).reshape(-1, 1), (name,), t0)

    def __len__(self):
        return self.values.shape[0]

    def mu(self, p: LinearPredicate, k: int) -> float:
        row = self.values[k]
        return p.offset + sum(c * row[self._index[name]] for name, c in p.coeffs)


def _check_span(f, traj, t):
    k = t - traj.t0
    need = formula_horizon(f)
    if k < 0 or k + need >= len(traj):
        raise ValueError(
            f"trajectory covers t={traj.t0}..{traj.t0 + len(traj) - 1}, "
            f"formula needs t={t}..{t + need}")
    return k


def _bool(f, tr, k):
    if isinstance(f, TrueF):
        return True
    if isinstance(f, Pred):
        return f.pred.holds(tr.mu(f.pred, k))
    if isinstance(f, Not):
        return not _bool(f.child, tr, k)
    if isinstance(f, And):
        return all(_bool(c, tr, k) for c in f.children)
    if isinstance(f, Or):
        return any(_bool(c, tr, k) for c in f.children)
    if isinstance(f, Always):
        return all(_bool(f.child, tr, k + j) for j in range(f.a, f.b + 1))
    if isinstance(f, Eventually):
        return any(_bool(f.child, tr, k + j) for j in range(f.a, f.b + 1))
    if isinstance(f, Until):
        for j in range(f.a, f.b + 1):
            if _bool(f.rhs, tr, k + j) and all(_bool(f.lhs, tr, k + i) for i in range(j + 1)):
                return True
        return False
    raise TypeError(f"not a formula: {f!r}")


def _rho(f, tr, k):
    if isinstance(f, TrueF):
        return math.inf
    if isinstance(f, Pred):
        return tr.mu(f.pred, k)
    if isinstance(f, Not):
        if not isinstance(f.child, TrueF):
            raise ValueError("robustness needs negation normal form")
        return -math.inf
    if isinstance(f, And):
        return min(_rho(c, tr, k) for c in f.children)
    if isinstance(f, Or):
        return max(_rho(c, tr, k) for c in f.children)
    if isinstance(f, Always):
        return min(_rho(f.child, tr, k + j) for j in range(f.a, f.b + 1))
    if isinstance(f, Eventually):
        return max(_rho(f.child, tr, k + j) for j in range(f.a, f.b + 1))
    if isinstance(f, Until):
        best = -math.inf
        prefix = math.inf
        for j in range(0, f.b + 1):
            prefix = min(prefix, _rho(f.lhs, tr, k + j))
            if j >= f.a:
                best = max(best, min(_rho(f.rhs, tr, k + j), prefix))
        return best
    raise TypeError(f"not a formula: {f!r}")


def eval_boolean(f: Formula, traj: Trajectory, t: int | None = None) -> bool:
    t = traj.t0 if t is None else t
    return _bool(f, traj, _check_span(f, traj, t))


def eval_robustness(f: Formula, traj: Trajectory, t: int | None = None) -> float:
    """Quantitative robustness; the formula is normalized to NNF first."""
    t = traj.t0 if t is None else t
    k = _check_span(f, traj, t)
    if not is_nnf(f):
        f = push_negations(f)
    return _rho(f, traj, k)


def eval_windows(f: Formula, traj: Trajectory) -> list[tuple[int, bool, float]]:
    """(t, satisfied, robustness) for every start time with a complete window."""
    n = formula_horizon(f)
    g = f if is_nnf(f) else push_negations(f)
    out = []
    for k in range(len(traj) - n):
        out.append((traj.t0 + k, _bool(f, traj, k), _rho(g, traj, k)))
    return out
