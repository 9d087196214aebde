"""Big-M MILP encoding of receding-horizon problems with Lasso constraints.

Time slots are keyed by absolute time.  A slot coordinate is either a
decision variable (predicted state of an optimizing agent) or a number
(closed-loop history, the current state, or a neighbour's broadcast plan).
Predicates whose value is fixed by numbers alone fold to constant literals.

Predicate literals use a small margin ``m``:  z = 1 forces mu >= m and z = 0
forces mu <= m.  Since formulas are encoded in negation normal form, only the
z = 1 direction matters for soundness, and the margin keeps the boolean
verdict on the simulated trajectory exact despite LP round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from . import stl
from .lti import MasModel, Polytope
from .milp.model import BINARY, CONTINUOUS, MilpInstance

LIT_TRUE = -1
LIT_FALSE = -2

C1 = "c1"
SINGLE_POINT = "single-point"
NO_TERMINAL = "none"
TERMINAL_MODES = (C1, SINGLE_POINT, NO_TERMINAL)


@dataclass
class EncodingConfig:
    bigM: float | None = None
    terminal: str = C1
    margin: float = 1e-5           # predicate literal threshold
    fold_tol: float = 1e-6         # slack when folding numeric slots / completing assignments
    relax_predicates: bool = False  # predicate literals continuous in [0, 1]
    integral_connectives: bool = False
    assert_mode: str = "direct"    # "direct" or "root-literal"
    cost: Mapping[str, float] | None = None  # per-input-name weights on |u|

    def __post_init__(self):
        if self.terminal not in TERMINAL_MODES:
            raise ValueError(f"terminal mode must be one of {TERMINAL_MODES}")
        if self.bigM is not None and not self.bigM > 0:
            raise ValueError("big-M constant must be positive")
        if self.assert_mode not in ("direct", "root-literal"):
            raise ValueError("assert_mode must be 'direct' or 'root-literal'")

    @property
    def threshold(self) -> float:
        return self.margin - self.fold_tol


@dataclass
class HistoryBuffer:
    """Closed-loop states x(t-len)..x(t-1) (full MAS state vectors)."""

    t: int = 0
    states: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.states) > self.t:
            raise ValueError("history reaches before time 0")

    def at(self, k: int) -> np.ndarray:
        j = k - (self.t - len(self.states))
        if not 0 <= j < len(self.states) or k >= self.t:
            raise KeyError(f"time {k} not in history (t={self.t}, {len(self.states)} states)")
        return self.states[j]

    def has(self, k: int) -> bool:
        return self.t - len(self.states) <= k < self.t

    def advance(self, x_t, keep: int) -> "HistoryBuffer":
        states = (list(self.states) + [np.asarray(x_t, dtype=float).copy()])[-keep:] if keep > 0 else []
        return HistoryBuffer(self.t + 1, states)


# --------------------------------------------------------------------------
# big-M selection

def compute_bigM(mas: MasModel, formula, floor: float = 10.0, factor: float = 1.5) -> float:
    """1.5 x the largest |mu| over the state set, floored at 10."""
    preds = stl.predicates(formula) if not isinstance(formula, (list, tuple)) else \
        [p for f in formula for p in stl.predicates(f)]
    G, g = mas.state_set.G, mas.state_set.g
    worst = 0.0
    for p in preds:
        c = np.zeros(mas.n)
        for name, v in p.coeffs:
            c[mas.signals[name]] += v
        for sgn in (1.0, -1.0):
            res = linprog(-sgn * c, A_ub=G if G.shape[0] else None, b_ub=g if G.shape[0] else None,
                          bounds=[(None, None)] * mas.n, method="highs")
            if res.status == 3:
                raise ValueError("a predicate is unbounded over the state set; set bigM explicitly")
            if res.status != 0:
                raise RuntimeError(f"big-M LP failed: {res.message}")
            worst = max(worst, abs(-res.fun + sgn * p.offset))
    return max(floor, factor * worst)


# --------------------------------------------------------------------------
# slots and literal encoders

@dataclass
class Slot:
    """State at one time: ``var[j] >= 0`` marks a decision variable, else ``value[j]``."""

    key: object
    var: np.ndarray
    value: np.ndarray

    @classmethod
    def constant(cls, key, x):
        x = np.asarray(x, dtype=float)
        return cls(key, np.full(x.size, -1, dtype=int), x.copy())

    @classmethod
    def symbolic(cls, key, var_idx):
        v = np.asarray(var_idx, dtype=int)
        return cls(key, v, np.zeros(v.size))

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.var < 0))


def _affine(pred: stl.LinearPredicate, slot: Slot, signal_index: Mapping[str, int]):
    coeffs: dict[int, float] = {}
    const = pred.offset
    for name, c in pred.coeffs:
        j = signal_index[name]
        if slot.var[j] >= 0:
            coeffs[int(slot.var[j])] = coeffs.get(int(slot.var[j]), 0.0) + c
        else:
            const += c * slot.value[j]
    return coeffs, const


def _range(inst: MilpInstance, coeffs, const):
    lo = hi = const
    for j, c in coeffs.items():
        v = inst.variables[j]
        if c > 0:
            lo += c * v.lb; hi += c * v.ub
        else:
            lo += c * v.ub; hi += c * v.lb
    return lo, hi


def encode_predicate(inst: MilpInstance, coeffs: Mapping[int, float], const: float, K: float,
                     margin: float = 0.0, kind: str = BINARY, name: str | None = None) -> int:
    """New literal z with  mu - K z <= margin  and  -mu + K z <= K - margin."""
    name = name or f"z{len(inst.metadata.setdefault('literals', []))}"
    z = inst.add_var(name, 0.0, 1.0, kind)
    row = dict(coeffs); row[z] = row.get(z, 0.0) - K
    inst.add_constraint(row, "<=", margin - const, f"{name}_off")
    row = {j: -c for j, c in coeffs.items()}; row[z] = row.get(z, 0.0) + K
    inst.add_constraint(row, "<=", K - margin + const, f"{name}_on")
    inst.metadata.setdefault("roles", {})[name] = "literal"
    inst.metadata["literals"].append(("pred", z, dict(coeffs), const))
    inst.metadata.setdefault("levels", {})[z] = 0
    return z


def encode_boolean(inst: MilpInstance, kind: str, children: Sequence[int], var_kind: str = CONTINUOUS,
                   name: str | None = None) -> int:
    """Literal for the AND/OR of ``children`` (variable indices)."""
    if kind not in ("and", "or"):
        raise ValueError("kind must be 'and' or 'or'")
    if not children:
        raise ValueError("need at least one child literal")
    name = name or f"z{len(inst.metadata.setdefault('literals', []))}"
    z = inst.add_var(name, 0.0, 1.0, var_kind)
    r = len(children)
    if kind == "and":
        for k, c in enumerate(children):
            inst.add_constraint({z: 1.0, c: -1.0}, "<=", 0.0, f"{name}_and{k}")
        row = {z: 1.0}
        for c in children:
            row[c] = row.get(c, 0.0) - 1.0
        inst.add_constraint(row, ">=", 1.0 - r, f"{name}_and")
    else:
        for k, c in enumerate(children):
            inst.add_constraint({z: 1.0, c: -1.0}, ">=", 0.0, f"{name}_or{k}")
        row = {z: 1.0}
        for c in children:
            row[c] = row.get(c, 0.0) - 1.0
        inst.add_constraint(row, "<=", 0.0, f"{name}_or")
    inst.metadata.setdefault("roles", {})[name] = "literal"
    inst.metadata["literals"].append((kind, z, tuple(children)))
    levels = inst.metadata.setdefault("levels", {})
    levels[z] = 1 + max(levels.get(c, 0) for c in children)
    return z


def _combine(vals, conj: bool):
    absorb = False if conj else True
    if absorb in vals:
        return absorb
    if None in vals:
        return None
    return not absorb


class WindowEncoder:
    """Shared literal caches for every window of one program."""

    def __init__(self, inst: MilpInstance, signal_index: Mapping[str, int], K: float, config: EncodingConfig):
        self.inst = inst
        self.signal_index = signal_index
        self.K = K
        self.cfg = config
        self.horizons: dict[int, int] = {}
        self.lits: dict = {}
        self.pred_lits: dict = {}
        self.conn_lits: dict = {}
        self.asserted: set = set()
        self.n_infeasible = 0
        self._keep = []  # keep formula objects alive while ids are cached
        inst.metadata.setdefault("literals", [])
        inst.metadata.setdefault("roles", {})

    def _h(self, f) -> int:
        h = self.horizons.get(id(f))
        if h is None:
            h = stl.formula_horizon(f)
            self.horizons[id(f)] = h
            self._keep.append(f)
        return h

    def _key(self, f, window, p):
        return id(f), tuple(s.key for s in window[p:p + self._h(f) + 1])

    # literals ---------------------------------------------------------------
    def pred_literal(self, pred: stl.LinearPredicate, slot: Slot) -> int:
        key = (pred, slot.key)
        if key in self.pred_lits:
            return self.pred_lits[key]
        coeffs, const = _affine(pred, slot, self.signal_index)
        thr = self.cfg.threshold
        if not coeffs:
            lit = LIT_TRUE if const >= thr else LIT_FALSE
        else:
            lo, hi = _range(self.inst, coeffs, const)
            if lo >= self.cfg.margin:
                lit = LIT_TRUE
            elif hi < self.cfg.margin:
                lit = LIT_FALSE
            else:
                kind = CONTINUOUS if self.cfg.relax_predicates else BINARY
                lit = encode_predicate(self.inst, coeffs, const, self.K, self.cfg.margin, kind)
        self.pred_lits[key] = lit
        return lit

    def connective(self, kind: str, lits) -> int:
        absorb, neutral = (LIT_FALSE, LIT_TRUE) if kind == "and" else (LIT_TRUE, LIT_FALSE)
        kids = set()
        for l in lits:
            if l == absorb:
                return absorb
            if l != neutral:
                kids.add(l)
        if not kids:
            return neutral
        if len(kids) == 1:
            return kids.pop()
        key = (kind, tuple(sorted(kids)))
        if key not in self.conn_lits:
            vk = BINARY if self.cfg.integral_connectives else CONTINUOUS
            self.conn_lits[key] = encode_boolean(self.inst, kind, key[1], vk)
        return self.conn_lits[key]

    def fold(self, f, window: Sequence[Slot], p: int = 0):
        """True/False when the window decides f without any variable, else None."""
        key = ("F",) + self._key(f, window, p)
        if key in self.lits:
            return self.lits[key]
        if isinstance(f, stl.TrueF):
            val = True
        elif isinstance(f, stl.Not):
            if not isinstance(f.child, stl.TrueF):
                raise ValueError("encoder needs negation normal form")
            val = False
        elif isinstance(f, stl.Pred):
            coeffs, const = _affine(f.pred, window[p], self.signal_index)
            if not coeffs:
                val = const >= self.cfg.threshold
            else:
                lo, hi = _range(self.inst, coeffs, const)
                val = True if lo >= self.cfg.margin else (False if hi < self.cfg.margin else None)
        elif isinstance(f, (stl.And, stl.Or, stl.Always, stl.Eventually)):
            if isinstance(f, (stl.And, stl.Or)):
                vals = [self.fold(c, window, p) for c in f.children]
            else:
                vals = [self.fold(f.child, window, p + j) for j in range(f.a, f.b + 1)]
            conj = isinstance(f, (stl.And, stl.Always))
            val = _combine(vals, conj)
        elif isinstance(f, stl.Until):
            terms = []
            for tau in range(f.a, f.b + 1):
                parts = [self.fold(f.rhs, window, p + tau)] + [self.fold(f.lhs, window, p + j) for j in range(tau + 1)]
                terms.append(_combine(parts, True))
            val = _combine(terms, False)
        else:
            raise TypeError(f"not a formula: {f!r}")
        self.lits[key] = val
        return val

    def literal(self, f, window: Sequence[Slot], p: int = 0) -> int:
        key = self._key(f, window, p)
        if key in self.lits:
            return self.lits[key]
        folded = self.fold(f, window, p)
        if folded is not None:
            lit = LIT_TRUE if folded else LIT_FALSE
        elif isinstance(f, stl.TrueF):
            lit = LIT_TRUE
        elif isinstance(f, stl.Not):
            if not isinstance(f.child, stl.TrueF):
                raise ValueError("encoder needs negation normal form")
            lit = LIT_FALSE
        elif isinstance(f, stl.Pred):
            lit = self.pred_literal(f.pred, window[p])
        elif isinstance(f, stl.And):
            lit = self.connective("and", [self.literal(c, window, p) for c in f.children])
        elif isinstance(f, stl.Or):
            lit = self.connective("or", [self.literal(c, window, p) for c in f.children])
        elif isinstance(f, stl.Always):
            lit = self.connective("and", [self.literal(f.child, window, p + j) for j in range(f.a, f.b + 1)])
        elif isinstance(f, stl.Eventually):
            lit = self.connective("or", [self.literal(f.child, window, p + j) for j in range(f.a, f.b + 1)])
        elif isinstance(f, stl.Until):
            lit = self.connective("or", self._until_terms(f, window, p))
        else:
            raise TypeError(f"not a formula: {f!r}")
        self.lits[key] = lit
        return lit

    def _until_terms(self, f, window, p):
        terms = []
        for tau in range(f.a, f.b + 1):
            parts = [self.literal(f.rhs, window, p + tau)]
            parts += [self.literal(f.lhs, window, p + j) for j in range(tau + 1)]
            terms.append(self.connective("and", parts))
        return terms

    # assertions -------------------------------------------------------------
    def infeasible(self, why: str):
        self.n_infeasible += 1
        self.inst.add_constraint({}, ">=", 1.0, f"false_{self.n_infeasible}_{why}")

    def require_literal(self, lit: int, name: str):
        if lit == LIT_TRUE:
            return
        if lit == LIT_FALSE:
            self.infeasible(name)
            return
        v = self.inst.variables[lit]
        v.lb = 1.0

    def assert_true(self, f, window: Sequence[Slot], p: int = 0, tag: str = "w"):
        """Constrain f to hold on the window starting at position p."""
        key = ("A",) + self._key(f, window, p)
        if key in self.asserted:
            return
        self.asserted.add(key)
        folded = self.fold(f, window, p)
        if folded is True:
            return
        if folded is False:
            self.infeasible(tag)
            return
        if isinstance(f, stl.TrueF):
            return
        if isinstance(f, stl.Not):
            if not isinstance(f.child, stl.TrueF):
                raise ValueError("encoder needs negation normal form")
            self.infeasible(tag)
        elif isinstance(f, stl.Pred):
            coeffs, const = _affine(f.pred, window[p], self.signal_index)
            if not coeffs:
                if const < self.cfg.threshold:
                    self.infeasible(tag)
                return
            lo, _ = _range(self.inst, coeffs, const)
            if lo >= self.cfg.margin:
                return
            self.inst.add_constraint(coeffs, ">=", self.cfg.margin - const,
                                     f"hold_{tag}_{len(self.inst.constraints)}")
        elif isinstance(f, stl.And):
            for c in f.children:
                self.assert_true(c, window, p, tag)
        elif isinstance(f, stl.Always):
            for j in range(f.a, f.b + 1):
                self.assert_true(f.child, window, p + j, tag)
        else:
            if isinstance(f, stl.Or):
                lits = [self.literal(c, window, p) for c in f.children]
            elif isinstance(f, stl.Eventually):
                lits = [self.literal(f.child, window, p + j) for j in range(f.a, f.b + 1)]
            elif isinstance(f, stl.Until):
                lits = self._until_terms(f, window, p)
            else:
                raise TypeError(f"not a formula: {f!r}")
            if LIT_TRUE in lits:
                return
            lits = sorted({l for l in lits if l != LIT_FALSE})
            if not lits:
                self.infeasible(tag)
            elif len(lits) == 1:
                self.require_literal(lits[0], tag)
            else:
                self.inst.add_constraint({l: 1.0 for l in lits}, ">=", 1.0,
                                         f"any_{tag}_{len(self.inst.constraints)}")

    def enforce(self, f, window: Sequence[Slot], tag: str):
        if len(window) != self._h(f) + 1:
            raise ValueError(f"window length {len(window)} != horizon + 1 = {self._h(f) + 1}")
        if self.cfg.assert_mode == "direct":
            self.assert_true(f, window, 0, tag)
        else:
            self.require_literal(self.literal(f, window, 0), tag)


def encode_formula_over_window(inst: MilpInstance, f, window: Sequence[Slot], K: float,
                               signal_index: Mapping[str, int], config: EncodingConfig | None = None):
    """Root literal of NNF formula ``f`` over ``window`` (LIT_TRUE/LIT_FALSE when folded)."""
    enc = WindowEncoder(inst, signal_index, K, config or EncodingConfig(margin=0.0, fold_tol=0.0))
    if len(window) != enc._h(f) + 1:
        raise ValueError(f"window length {len(window)} != horizon + 1 = {enc._h(f) + 1}")
    return enc.literal(f, window, 0)


# --------------------------------------------------------------------------
# norm macros

def expand_norm_predicate(kind: str, signals: Sequence[str], center, radius: float, form: str = "exact"):
    """||xi - y||_inf <= c  or  >= c  as linear predicates.

    ``center`` entries are numbers or signal names (for relative norms).
    For ``>=`` the exact form is a 4-way disjunction; ``form="per-axis"`` gives
    the conjunction of per-axis disjunctions, which demands separation along
    both axes."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if len(signals) != 2 or len(center) != 2:
        raise ValueError("norm macros act on 2-vectors")

    def diff(k, sign, offset):
        # sign * (xi_k - y_k) + offset
        co = {signals[k]: sign}
        off = offset
        if isinstance(center[k], str):
            co[center[k]] = co.get(center[k], 0.0) - sign
        else:
            off -= sign * float(center[k])
        return stl.Pred(stl.LinearPredicate.make(co, off))

    c = float(radius)
    if kind == "<=":
        return stl.And((diff(0, -1.0, c), diff(1, -1.0, c), diff(0, 1.0, c), diff(1, 1.0, c)))
    if kind == ">=":
        if form == "per-axis":
            return stl.And((stl.Or((diff(0, 1.0, -c), diff(0, -1.0, -c))),
                            stl.Or((diff(1, 1.0, -c), diff(1, -1.0, -c)))))
        if form != "exact":
            raise ValueError("form must be 'exact' or 'per-axis'")
        return stl.Or((diff(0, 1.0, -c), diff(0, -1.0, -c), diff(1, 1.0, -c), diff(1, -1.0, -c)))
    raise ValueError("kind must be '<=' or '>='")


# --------------------------------------------------------------------------
# programs

def linearize_l1(inst: MilpInstance, u_idx: Sequence[int], weights=None, tag: str = ""):
    """Split each u = u+ - u- and return the objective terms {u+: w, u-: w}."""
    obj = {}
    pos, neg = [], []
    for k, j in enumerate(u_idx):
        v = inst.variables[j]
        w = 1.0 if weights is None else float(weights[k])
        cap = max(abs(v.lb), abs(v.ub))
        base = v.name[2:] if v.name.startswith("u_") else f"{v.name}{tag}"
        jp = inst.add_var(f"up_{base}", 0.0, cap)
        jm = inst.add_var(f"um_{base}", 0.0, cap)
        inst.metadata.setdefault("roles", {})[f"up_{base}"] = "auxiliary"
        inst.metadata["roles"][f"um_{base}"] = "auxiliary"
        inst.add_constraint({j: 1.0, jp: -1.0, jm: 1.0}, "=", 0.0, f"l1_{base}")
        obj[jp] = w
        obj[jm] = w
        pos.append(jp); neg.append(jm)
    return pos, neg, obj


def _box_and_rows(P: Polytope):
    lo, hi = P.bounds()
    G, g = P.general_rows()
    return lo, hi, G, g


class ProgramBuilder:
    """Shared machinery of the global and local receding-horizon programs."""

    def __init__(self, mas: MasModel, formula, t: int, history: HistoryBuffer, x_t, config: EncodingConfig,
                 symbolic: Sequence[int], predictions: Mapping[int, np.ndarray] | None = None,
                 K: float | None = None, name: str = "global"):
        self.mas = mas
        self.cfg = config
        self.t = t
        self.N = stl.formula_horizon(formula)
        if self.N < 1:
            raise ValueError("formula horizon must be at least 1")
        if history.t != t:
            raise ValueError(f"history is for t={history.t}, program for t={t}")
        if len(history.states) > self.N - 1:
            raise ValueError("history longer than N-1 states")
        self.phi = formula if stl.is_nnf(formula) else stl.push_negations(formula)
        self.history = history
        self.x_t = np.asarray(x_t, dtype=float).reshape(-1)
        if self.x_t.size != mas.n:
            raise ValueError("current state has the wrong dimension")
        self.symbolic = sorted(symbolic)
        self.predictions = predictions or {}
        for j in range(mas.M):
            if j not in self.symbolic and j not in self.predictions:
                needed = {mas.agent_of_signal(s) for s in stl.signals_of(self.phi)}
                if j in needed:
                    raise ValueError(f"missing prediction for agent {j}")
        self.K = K if K is not None else (config.bigM or compute_bigM(mas, self.phi))
        inst = MilpInstance(name)
        self.inst = inst
        inst.metadata.update(dict(t=t, N=self.N, symbolic=list(self.symbolic), K=self.K,
                                  terminal=config.terminal, margin=config.margin,
                                  threshold=config.threshold, x_t=self.x_t.copy(),
                                  roles={}, literals=[], x_vars={}, u_vars={}, ua_vars={},
                                  up_vars={}, um_vars={}, windows=[]))
        self.enc = WindowEncoder(inst, mas.signals, self.K, config)
        self.slots: dict[int, Slot] = {}

    # variables ----------------------------------------------------------------
    def _add_states(self):
        mas, t, N, inst = self.mas, self.t, self.N, self.inst
        md = inst.metadata
        for i in self.symbolic:
            a = mas.agents[i]
            lo, hi, _, _ = _box_and_rows(a.state_set)
            for k in range(t + 1, t + N + 2):
                idx = []
                for d in range(a.n):
                    nm = f"x_{i}_{d}_t{k}"
                    idx.append(inst.add_var(nm, lo[d], hi[d]))
                    md["roles"][nm] = "state"
                md["x_vars"][(i, k)] = idx
        for i in self.symbolic:
            a = mas.agents[i]
            lo, hi, _, _ = _box_and_rows(a.input_set)
            for k in range(t, t + N + 1):
                idx = []
                for d in range(a.m):
                    nm = f"u_{i}_{d}_t{k}"
                    idx.append(inst.add_var(nm, lo[d], hi[d]))
                    md["roles"][nm] = "input"
                md["u_vars"][(i, k)] = idx

    def _state_slot(self, k: int) -> Slot:
        if k in self.slots:
            return self.slots[k]
        mas, t = self.mas, self.t
        if k < t:
            slot = Slot.constant(k, self.history.at(k))
        elif k == t:
            slot = Slot.constant(k, self.x_t)
        else:
            var = np.full(mas.n, -1, dtype=int)
            val = np.zeros(mas.n)
            for i in range(mas.M):
                sl = mas.state_slice(i)
                if i in self.symbolic:
                    var[sl] = self.inst.metadata["x_vars"][(i, k)]
                elif i in self.predictions:
                    val[sl] = self.predictions[i][k - t]
            slot = Slot(k, var, val)
        self.slots[k] = slot
        return slot

    def _dynamics_and_domains(self):
        mas, t, N, inst = self.mas, self.t, self.N, self.inst
        md = inst.metadata
        for i in self.symbolic:
            a = mas.agents[i]
            xi_t = self.x_t[mas.state_slice(i)]
            for k in range(t, t + N + 1):
                nxt = md["x_vars"][(i, k + 1)]
                cur = md["x_vars"].get((i, k))
                uu = md["u_vars"][(i, k)]
                for r in range(a.n):
                    row = {nxt[r]: 1.0}
                    rhs = 0.0
                    for c in range(a.n):
                        if a.A[r, c] != 0.0:
                            if cur is None:
                                rhs += a.A[r, c] * xi_t[c]
                            else:
                                row[cur[c]] = row.get(cur[c], 0.0) - a.A[r, c]
                    for c in range(a.m):
                        if a.B[r, c] != 0.0:
                            row[uu[c]] = row.get(uu[c], 0.0) - a.B[r, c]
                    inst.add_constraint(row, "=", rhs, f"dyn_{i}_{r}_t{k}")
            _, _, G, g = _box_and_rows(a.state_set)
            for k in range(t + 1, t + N + 2):
                xs = md["x_vars"][(i, k)]
                for r in range(G.shape[0]):
                    inst.add_constraint({xs[c]: G[r, c] for c in range(a.n) if G[r, c] != 0}, "<=", g[r],
                                        f"dom_x_{i}_{r}_t{k}")
            _, _, G, g = _box_and_rows(a.input_set)
            for k in range(t, t + N + 1):
                us = md["u_vars"][(i, k)]
                for r in range(G.shape[0]):
                    inst.add_constraint({us[c]: G[r, c] for c in range(a.m) if G[r, c] != 0}, "<=", g[r],
                                        f"dom_u_{i}_{r}_t{k}")

    def _terminal(self):
        mas, t, N, inst = self.mas, self.t, self.N, self.inst
        md = inst.metadata
        mode = self.cfg.terminal
        for i in self.symbolic:
            a = mas.agents[i]
            xi_t = self.x_t[mas.state_slice(i)]
            if mode == C1:
                lo, hi, G, g = _box_and_rows(a.input_set)
                ua = []
                for d in range(a.m):
                    nm = f"ua_{i}_{d}"
                    ua.append(inst.add_var(nm, lo[d], hi[d]))
                    md["roles"][nm] = "auxiliary"
                md["ua_vars"][i] = ua
                for r in range(G.shape[0]):
                    inst.add_constraint({ua[c]: G[r, c] for c in range(a.m) if G[r, c] != 0}, "<=", g[r],
                                        f"dom_ua_{i}_{r}")
                xs = md["x_vars"][(i, t + N)]
                for r in range(a.n):
                    row = {}
                    for c in range(a.n):
                        if a.A[r, c] != 0.0:
                            row[xs[c]] = row.get(xs[c], 0.0) + a.A[r, c]
                    for c in range(a.m):
                        if a.B[r, c] != 0.0:
                            row[ua[c]] = row.get(ua[c], 0.0) + a.B[r, c]
                    inst.add_constraint(row, "=", xi_t[r], f"term_{i}_{r}")
            elif mode == SINGLE_POINT:
                xs = md["x_vars"][(i, t + N + 1)]
                for r in range(a.n):
                    inst.add_constraint({xs[r]: 1.0}, "=", xi_t[r], f"term_{i}_{r}")

    def _objective(self):
        mas, t, N, inst = self.mas, self.t, self.N, self.inst
        md = inst.metadata
        obj = {}
        for i in self.symbolic:
            a = mas.agents[i]
            w = None
            if self.cfg.cost is not None:
                w = [float(self.cfg.cost.get(f"u_{i}_{d}", 1.0)) for d in range(a.m)]
            for k in range(t, t + N + 1):
                pos, neg, terms = linearize_l1(inst, md["u_vars"][(i, k)], w)
                md["up_vars"][(i, k)] = pos
                md["um_vars"][(i, k)] = neg
                obj.update(terms)
        inst.set_objective(obj)

    # windows -----------------------------------------------------------------
    def windows(self):
        """(tag, list of times) for every window the program constrains."""
        t, N = self.t, self.N
        out = []
        for s in range(1, N):
            if t - N + s >= 0:
                out.append((f"hist{s}", list(range(t - N + s, t + s + 1))))
        out.append(("cur", list(range(t, t + N + 1))))
        loop = list(range(t + 1, t + N + 2))
        for r in range(N + 1):
            out.append((f"rot{r}", loop[r:] + loop[:r]))
        if self.cfg.terminal in (C1, NO_TERMINAL):
            for r in range(N):
                out.append((f"mix{r}", list(range(t + 1 + r, t + N + 1)) + list(range(t, t + r + 1))))
        return out

    def build(self) -> MilpInstance:
        self._add_states()
        self._dynamics_and_domains()
        self._terminal()
        self._objective()
        for tag, times in self.windows():
            self.inst.metadata["windows"].append((tag, times))
            self.enc.enforce(self.phi, [self._state_slot(k) for k in times], tag)
        self.inst.metadata["mas"] = self.mas
        self.inst.metadata["config"] = self.cfg
        return self.inst


def build_global_program(mas: MasModel, phi, history: HistoryBuffer, x_t, config: EncodingConfig,
                         K: float | None = None) -> MilpInstance:
    b = ProgramBuilder(mas, phi, history.t, history, x_t, config, range(mas.M), K=K,
                       name=f"global_t{history.t}")
    return b.build()


def build_local_program(mas: MasModel, i: int, phi_hat, predictions: Mapping[int, np.ndarray],
                        history: HistoryBuffer, x_t, config: EncodingConfig,
                        K: float | None = None) -> MilpInstance:
    """Agent ``i`` symbolic; every other agent pinned to ``predictions[j]``
    (states at times t..t+N+1, shape (N+2, n_j))."""
    preds = {j: np.asarray(v, dtype=float) for j, v in predictions.items() if j != i}
    b = ProgramBuilder(mas, phi_hat, history.t, history, x_t, config, [i], preds, K=K,
                       name=f"local{i}_t{history.t}")
    N = b.N
    for j, p in preds.items():
        if p.shape[0] < N + 2:
            raise ValueError(f"prediction for agent {j} covers {p.shape[0]} steps, need {N + 2}")
    return b.build()


# --------------------------------------------------------------------------
# assignments

def simulate_plan(mas: MasModel, agents: Sequence[int], x_t, inputs: Mapping[int, np.ndarray]):
    """States x(t..t+len) per agent from per-agent input arrays (len, m_i)."""
    out = {}
    for i in agents:
        a = mas.agents[i]
        x = np.asarray(x_t, dtype=float)[mas.state_slice(i)].copy()
        us = np.asarray(inputs[i], dtype=float)
        xs = [x]
        for k in range(us.shape[0]):
            x = a.A @ x + a.B @ us[k]
            xs.append(x)
        out[i] = np.array(xs)
    return out


def complete_assignment(inst: MilpInstance, inputs: Mapping[int, np.ndarray],
                        u_aux: Mapping[int, np.ndarray] | None = None) -> np.ndarray:
    """Full variable vector from per-agent input sequences (N+1, m_i).

    States follow the dynamics from the program's current state, l1 splits
    are exact and literals take their truth values bottom-up."""
    md = inst.metadata
    mas, t, N = md["mas"], md["t"], md["N"]
    x = np.zeros(inst.num_vars)
    states = simulate_plan(mas, md["symbolic"], md["x_t"], inputs)
    for i in md["symbolic"]:
        us = np.asarray(inputs[i], dtype=float)
        for k in range(t, t + N + 1):
            u = us[k - t]
            x[md["u_vars"][(i, k)]] = u
            x[md["up_vars"][(i, k)]] = np.maximum(u, 0.0)
            x[md["um_vars"][(i, k)]] = np.maximum(-u, 0.0)
        for k in range(t + 1, t + N + 2):
            x[md["x_vars"][(i, k)]] = states[i][k - t]
        if i in md["ua_vars"]:
            if u_aux is None or i not in u_aux:
                raise ValueError(f"terminal auxiliary input for agent {i} missing")
            x[md["ua_vars"][i]] = u_aux[i]
    thr = md["threshold"]
    for d in md["literals"]:
        if d[0] == "pred":
            _, z, coeffs, const = d
            mu = const + sum(c * x[j] for j, c in coeffs.items())
            x[z] = 1.0 if mu >= thr else 0.0
        elif d[0] == "and":
            x[d[1]] = float(all(x[c] >= 0.5 for c in d[2]))
        else:
            x[d[1]] = float(any(x[c] >= 0.5 for c in d[2]))
    return x


def extract_plan(inst: MilpInstance, x) -> dict:
    """Per-agent inputs (N+1, m_i), states (N+2, n_i) and terminal aux input from a solution."""
    md = inst.metadata
    t, N = md["t"], md["N"]
    x = np.asarray(x, dtype=float)
    out = {}
    for i in md["symbolic"]:
        us = np.array([x[md["u_vars"][(i, k)]] for k in range(t, t + N + 1)])
        xs = [md["x_t"][md["mas"].state_slice(i)]] + [x[md["x_vars"][(i, k)]] for k in range(t + 1, t + N + 2)]
        ua = x[md["ua_vars"][i]] if i in md["ua_vars"] else None
        out[i] = dict(inputs=us, states=np.array(xs), u_aux=ua)
    return out
