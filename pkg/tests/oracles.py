"""Independent reference implementations used by the tests.

Nothing here calls the evaluators, the simplex core or the program builder
of the package; each oracle recomputes its answer from first principles
(explicit unrolling, exhaustive enumeration, scipy's HiGHS).
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from lassostl import stl

# --------------------------------------------------------------------------
# STL: expand temporal operators into a time-stamped boolean tree


def expand(f, k: int):
    """Unroll ``f`` at absolute index k into nested tuples:
    ('T',) | ('P', pred, k) | ('N', t) | ('A', [..]) | ('O', [..])."""
    if isinstance(f, stl.TrueF):
        return ("T",)
    if isinstance(f, stl.Pred):
        return ("P", f.pred, k)
    if isinstance(f, stl.Not):
        return ("N", expand(f.child, k))
    if isinstance(f, stl.And):
        return ("A", [expand(c, k) for c in f.children])
    if isinstance(f, stl.Or):
        return ("O", [expand(c, k) for c in f.children])
    if isinstance(f, stl.Always):
        return ("A", [expand(f.child, k + j) for j in range(f.a, f.b + 1)])
    if isinstance(f, stl.Eventually):
        return ("O", [expand(f.child, k + j) for j in range(f.a, f.b + 1)])
    if isinstance(f, stl.Until):
        terms = []
        for tau in range(f.a, f.b + 1):
            prefix = [expand(f.lhs, k + j) for j in range(tau + 1)]
            terms.append(("A", [expand(f.rhs, k + tau)] + prefix))
        return ("O", terms)
    raise TypeError(f)


def _mu(pred, X, names, k):
    idx = {s: i for i, s in enumerate(names)}
    return pred.offset + sum(c * X[k][idx[s]] for s, c in pred.coeffs)


def tree_bool(node, X, names) -> bool:
    tag = node[0]
    if tag == "T":
        return True
    if tag == "P":
        mu = _mu(node[1], X, names, node[2])
        return mu > 0 if node[1].strict else mu >= 0
    if tag == "N":
        return not tree_bool(node[1], X, names)
    vals = [tree_bool(c, X, names) for c in node[1]]
    return all(vals) if tag == "A" else any(vals)


def tree_rho(node, X, names) -> float:
    tag = node[0]
    if tag == "T":
        return math.inf
    if tag == "P":
        return _mu(node[1], X, names, node[2])
    if tag == "N":
        return -tree_rho(node[1], X, names)
    vals = [tree_rho(c, X, names) for c in node[1]]
    return min(vals) if tag == "A" else max(vals)


def oracle_bool(f, X, names, k=0) -> bool:
    return tree_bool(expand(f, k), np.atleast_2d(X), names)


def oracle_rho(f, X, names, k=0) -> float:
    return tree_rho(expand(f, k), np.atleast_2d(X), names)


def oracle_horizon(f) -> int:
    # depth of the unrolled tree in time, computed from the expansion itself
    def latest(node):
        if node[0] == "T":
            return 0
        if node[0] == "P":
            return node[2]
        if node[0] == "N":
            return latest(node[1])
        return max(latest(c) for c in node[1])
    return latest(expand(f, 0))


# --------------------------------------------------------------------------
# random formulas


def random_formula(rng: np.random.Generator, signals, depth: int = 4, max_b: int = 3, negation=True):
    """Random formula over ``signals``; interval ends are capped so the
    horizon stays small (<= depth * max_b)."""
    def pred():
        k = int(rng.integers(1, min(3, len(signals)) + 1))
        chosen = rng.choice(len(signals), size=k, replace=False)
        co = {signals[int(i)]: float(rng.choice([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])) for i in chosen}
        return stl.Pred(stl.LinearPredicate.make(co, float(np.round(rng.uniform(-1.5, 1.5), 3))))

    def go(d):
        if d == 0 or rng.random() < 0.25:
            return pred()
        op = rng.choice(["and", "or", "not", "G", "F", "U"] if negation else ["and", "or", "G", "F", "U"])
        if op in ("and", "or"):
            kids = tuple(go(d - 1) for _ in range(int(rng.integers(2, 4))))
            return stl.And(kids) if op == "and" else stl.Or(kids)
        if op == "not":
            return stl.Not(go(d - 1))
        a = int(rng.integers(0, max_b + 1))
        b = int(rng.integers(a, max_b + 1))
        if op == "G":
            return stl.Always(go(d - 1), a, b)
        if op == "F":
            return stl.Eventually(go(d - 1), a, b)
        return stl.Until(go(d - 1), go(d - 1), a, b)

    return go(depth)


# --------------------------------------------------------------------------
# MILP: brute force over binaries, LP per leaf with scipy


def brute_force_milp(inst):
    """Exact optimum of a small MilpInstance: (status, objective)."""
    c, A, lo, hi, lb, ub, isbin = inst.arrays()
    A = np.asarray(A.todense()) if hasattr(A, "todense") else np.asarray(A)
    bins = np.flatnonzero(isbin)
    if len(bins) > 16:
        raise ValueError("too many binaries for enumeration")
    # rows lo <= Ax <= hi  ->  A_ub x <= b_ub
    rows, rhs = [], []
    for r in range(A.shape[0]):
        if np.isfinite(hi[r]):
            rows.append(A[r]); rhs.append(hi[r])
        if np.isfinite(lo[r]):
            rows.append(-A[r]); rhs.append(-lo[r])
    A_ub = np.array(rows) if rows else None
    b_ub = np.array(rhs) if rhs else None
    best = math.inf
    for combo in itertools.product((0.0, 1.0), repeat=len(bins)):
        l2, u2 = lb.copy(), ub.copy()
        l2[bins] = combo
        u2[bins] = combo
        if np.any(l2 > u2):
            continue
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=list(zip(l2, u2)), method="highs")
        if res.status == 0:
            best = min(best, res.fun)
    return ("infeasible", math.inf) if best == math.inf else ("optimal", best + inst.objective_constant)


def random_milp(rng: np.random.Generator, n_bin: int, n_cont: int, n_rows: int):
    """Random bounded MILP; about a third of the draws are infeasible."""
    from lassostl.milp.model import BINARY, MilpInstance
    inst = MilpInstance("rand")
    idx = [inst.add_var(f"b{k}", 0, 1, BINARY) for k in range(n_bin)]
    idx += [inst.add_var(f"x{k}", float(rng.integers(-5, 1)), float(rng.integers(1, 6))) for k in range(n_cont)]
    for r in range(n_rows):
        k = int(rng.integers(2, min(6, len(idx)) + 1))
        cols = rng.choice(len(idx), size=k, replace=False)
        co = {idx[int(j)]: float(rng.integers(-4, 5)) for j in cols}
        co = {j: v for j, v in co.items() if v != 0.0}
        if not co:
            continue
        sense = str(rng.choice(["<=", ">=", "="], p=[0.45, 0.45, 0.1]))
        inst.add_constraint(co, sense, float(rng.integers(-4, 5)), f"r{r}")
    inst.set_objective({j: float(rng.integers(-5, 6)) for j in idx})
    return inst


# --------------------------------------------------------------------------
# encoding: exhaustive input enumeration for the 1-D integrator x+ = x + u


def enumerate_feasible(f, x0: float, N: int, grid=(-1.0, 0.0, 1.0), name: str = "x") -> bool:
    g = stl.push_negations(f)
    for us in itertools.product(grid, repeat=N):
        xs = np.concatenate([[x0], x0 + np.cumsum(us)]).reshape(-1, 1)
        if oracle_bool(g, xs, (name,)):
            return True
    return False


def current_window_program(f, x0: float, N: int, grid=(-1.0, 0.0, 1.0), lo=-5.0, hi=5.0):
    """MILP whose feasible set is {u in grid^N : window [x0..xN] satisfies f}.

    Built from the package's literal encoder plus hand-written dynamics and a
    one-hot grid for every input."""
    from lassostl.encoder import EncodingConfig, Slot, WindowEncoder
    from lassostl.milp.model import BINARY, MilpInstance
    inst = MilpInstance("window")
    xs = [inst.add_var(f"x_t{k}", lo, hi) for k in range(1, N + 1)]
    us = []
    for k in range(N):
        u = inst.add_var(f"u_t{k}", min(grid), max(grid))
        picks = [inst.add_var(f"g_t{k}_{j}", 0, 1, BINARY) for j in range(len(grid))]
        inst.add_constraint({p: 1.0 for p in picks}, "=", 1.0, f"onehot{k}")
        row = {u: 1.0}
        row.update({p: -float(v) for p, v in zip(picks, grid)})
        inst.add_constraint(row, "=", 0.0, f"grid{k}")
        us.append(u)
    prev = None
    for k in range(N):
        row = {xs[k]: 1.0, us[k]: -1.0}
        if prev is None:
            inst.add_constraint(row, "=", x0, f"dyn{k}")
        else:
            row[prev] = -1.0
            inst.add_constraint(row, "=", 0.0, f"dyn{k}")
        prev = xs[k]
    window = [Slot.constant(0, [x0])] + [Slot.symbolic(k + 1, [xs[k]]) for k in range(N)]
    K = 3.0 * (max(abs(lo), abs(hi)) + 10.0)
    enc = WindowEncoder(inst, {"x": 0}, K, EncodingConfig(margin=1e-5))
    g = stl.push_negations(f)
    # pad short formulas so the window length matches
    h = stl.formula_horizon(g)
    if h < N:
        g = stl.Always(g, 0, N - h)
    enc.enforce(g, window, "cur")
    return inst


def random_reach_avoid_formula(rng: np.random.Generator, N: int):
    """Depth <= 3 formula over x with offsets kept off the integer grid."""
    def pred():
        off = float(rng.integers(-3, 4)) + float(rng.choice([-0.5, 0.5])) + 1e-3
        sgn = float(rng.choice([-1.0, 1.0]))
        return stl.Pred(stl.LinearPredicate.make({"x": sgn}, off))

    def go(d, budget):
        if d == 0 or rng.random() < 0.3:
            return pred()
        ops = ["and", "or", "not"] + (["G", "F", "U"] if budget > 0 else [])
        op = rng.choice(ops)
        if op in ("and", "or"):
            kids = (go(d - 1, budget), go(d - 1, budget))
            return stl.And(kids) if op == "and" else stl.Or(kids)
        if op == "not":
            return stl.Not(go(d - 1, budget))
        b = int(rng.integers(1, budget + 1))
        a = int(rng.integers(0, b + 1))
        rest = budget - b
        if op == "G":
            return stl.Always(go(d - 1, rest), a, b)
        if op == "F":
            return stl.Eventually(go(d - 1, rest), a, b)
        return stl.Until(go(d - 1, rest), go(d - 1, rest), a, b)

    return go(3, N)


# --------------------------------------------------------------------------
# program auditor: expected sizes from first principles


def audit_window_times(t: int, N: int, terminal: str):
    """The list of windows (as absolute time lists) a step-t program must carry.
    Windows made only of known states are dropped."""
    wins = []
    for s in range(1, N):
        start = t - N + s
        if start < 0:
            continue
        wins.append(list(range(start, t + s + 1)))
    wins.append(list(range(t, t + N + 1)))
    L = list(range(t + 1, t + N + 2))
    for r in range(N + 1):
        wins.append(L[r:] + L[:r])
    if terminal in ("c1", "none"):
        for r in range(N):
            wins.append(list(range(t + 1 + r, t + N + 1)) + list(range(t, t + r + 1)))
    return wins


def audit_counts(mas, N: int, terminal: str):
    """Structural variable/row counts of the global program, excluding the
    formula literals: (states, inputs, l1 aux, terminal aux, dynamics rows,
    l1 rows, terminal rows)."""
    n, m = mas.n, mas.m
    n_states = n * (N + 1)        # x(t+1..t+N+1); x(t) is a constant
    n_inputs = m * (N + 1)
    term_aux = m if terminal == "c1" else 0
    dyn_rows = n * (N + 1)
    term_rows = n if terminal in ("c1", "single-point") else 0
    return dict(states=n_states, inputs=n_inputs, l1=2 * n_inputs, ua=term_aux,
                dyn_rows=dyn_rows, l1_rows=n_inputs, term_rows=term_rows)
