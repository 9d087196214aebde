import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lassostl import stl
from lassostl.encoder import (LIT_FALSE, LIT_TRUE, EncodingConfig, HistoryBuffer, Slot, WindowEncoder,
                              build_global_program, build_local_program, compute_bigM,
                              encode_boolean, encode_formula_over_window, encode_predicate,
                              expand_norm_predicate, linearize_l1)
from lassostl.lti import AgentModel, MasModel, Polytope, c1_set
from lassostl.milp.bnb import solve_lp, solve_milp
from lassostl.milp.model import BINARY, INFEASIBLE, OPTIMAL, MilpInstance

import oracles


def lin(co, off=0.0):
    return stl.Pred(stl.LinearPredicate.make(co, off))


def line_mas(lo=0.0, hi=10.0, ulo=-1.0, uhi=1.0, name="x"):
    a = AgentModel(np.eye(1), np.eye(1), Polytope.box([lo], [hi]), Polytope.box([ulo], [uhi]), {name: 0})
    return MasModel([a])


# --------------------------------------------------------------------------
# big-M

def test_bigM_examples():
    mas = line_mas()
    assert compute_bigM(mas, lin({"x": 1.0}, -5.0)) == pytest.approx(10.0)
    assert compute_bigM(mas, lin({"x": 1.0})) == pytest.approx(15.0)
    assert compute_bigM(mas, stl.TrueF()) == pytest.approx(10.0)


def test_bigM_needs_bounded_states():
    mas = line_mas(-np.inf, np.inf)
    with pytest.raises(ValueError, match="bigM"):
        compute_bigM(mas, lin({"x": 1.0}))


# --------------------------------------------------------------------------
# literal encoders

def _pinned_literal(mu, K=100.0):
    inst = MilpInstance()
    z = encode_predicate(inst, {}, mu, K)
    return inst, z


@pytest.mark.parametrize("mu,ok1,ok0", [(5.0, True, False), (-5.0, False, True), (0.0, True, True)])
def test_predicate_literal_examples(mu, ok1, ok0):
    inst, z = _pinned_literal(mu)
    x = np.zeros(inst.num_vars)
    x[z] = 1.0
    assert inst.is_feasible(x) == ok1
    x[z] = 0.0
    assert inst.is_feasible(x) == ok0


@pytest.mark.parametrize("kind", ["and", "or"])
@pytest.mark.parametrize("r", [1, 2, 3])
def test_boolean_literal_truth_tables(kind, r):
    inst = MilpInstance()
    kids = [inst.add_var(f"c{k}", 0, 1, BINARY) for k in range(r)]
    z = encode_boolean(inst, kind, kids, BINARY)
    for combo in itertools.product((0.0, 1.0), repeat=r):
        want = all(combo) if kind == "and" else any(combo)
        for zv in (0.0, 1.0):
            x = np.array(list(combo) + [zv])
            assert inst.is_feasible(x) == (zv == float(want))
    with pytest.raises(ValueError):
        encode_boolean(inst, kind, [])


def test_boolean_literal_examples():
    for kind, vals, want in [("and", (1, 1), 1), ("and", (1, 0), 0), ("or", (0, 0), 0)]:
        inst = MilpInstance()
        kids = [inst.add_var(f"c{k}", v, v, BINARY) for k, v in enumerate(vals)]
        z = encode_boolean(inst, kind, kids)
        inst.set_objective({z: 1.0})
        lo = solve_lp(inst).objective
        inst.set_objective({z: -1.0})
        hi = -solve_lp(inst).objective
        assert lo == pytest.approx(want) and hi == pytest.approx(want)


# --------------------------------------------------------------------------
# windows

def _symbolic_window(inst, n, lo=-10.0, hi=10.0):
    return [Slot.symbolic(k, [inst.add_var(f"x_t{k}", lo, hi)]) for k in range(n)]


def test_always_over_two_symbolic_slots():
    inst = MilpInstance()
    win = _symbolic_window(inst, 2)
    p = lin({"x": 1.0}, -1.0)
    root = encode_formula_over_window(inst, stl.Always(p, 0, 1), win, 100.0, {"x": 0})
    assert root >= 0
    assert len(inst.binaries()) == 2
    assert inst.num_constraints == 2 * 2 + 3
    # root = 1 exactly when both mu >= 0, checked on every binary assignment
    z = inst.binaries()
    for x0, x1 in itertools.product([-2.0, 1.0, 3.0], repeat=2):
        for bits in itertools.product((0.0, 1.0), repeat=2):
            for rv in (0.0, 1.0):
                x = np.zeros(inst.num_vars)
                x[win[0].var[0]], x[win[1].var[0]] = x0, x1
                x[z[0]], x[z[1]] = bits
                x[root] = rv
                if inst.is_feasible(x) and rv == 1.0:
                    assert x0 - 1 >= 0 and x1 - 1 >= 0
        x = np.zeros(inst.num_vars)
        x[win[0].var[0]], x[win[1].var[0]] = x0, x1
        x[z[0]] = float(x0 >= 1); x[z[1]] = float(x1 >= 1); x[root] = float(x0 >= 1 and x1 >= 1)
        assert inst.is_feasible(x)


def test_constant_slots_fold():
    inst = MilpInstance()
    p = lin({"x": 1.0})
    win = [Slot.constant(0, [3.0]), Slot.symbolic(1, [inst.add_var("x_t1", -10, 10)])]
    assert encode_formula_over_window(inst, stl.Eventually(p, 0, 1), win, 100.0, {"x": 0}) == LIT_TRUE
    assert inst.binaries() == []
    assert encode_formula_over_window(inst, p, [Slot.constant(0, [-2.0])], 100.0, {"x": 0}) == LIT_FALSE
    assert inst.num_vars == 1


def test_window_length_mismatch():
    inst = MilpInstance()
    with pytest.raises(ValueError, match="window length"):
        encode_formula_over_window(inst, stl.Always(lin({"x": 1.0}), 0, 2), _symbolic_window(inst, 2), 10.0,
                                   {"x": 0})


@pytest.mark.parametrize("seed", range(30))
def test_current_window_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 4))
    f = oracles.random_reach_avoid_formula(rng, N)
    x0 = float(rng.integers(-2, 3))
    want = oracles.enumerate_feasible(f, x0, N)
    got = solve_milp(oracles.current_window_program(f, x0, N), node_limit=100000).status == OPTIMAL
    assert got == want


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_root_literal_is_sound(seed):
    rng = np.random.default_rng(seed)
    f = stl.push_negations(oracles.random_formula(rng, ("x",), depth=3, max_b=2))
    h = stl.formula_horizon(f)
    inst = MilpInstance()
    win = _symbolic_window(inst, h + 1, -3.0, 3.0)
    enc = WindowEncoder(inst, {"x": 0}, 30.0, EncodingConfig(assert_mode="root-literal"))
    enc.enforce(f, win, "w")
    inst.set_objective({s.var[0]: float(rng.normal()) for s in win})
    sol = solve_milp(inst, node_limit=20000)
    if sol.status != OPTIMAL:
        return
    xs = np.array([[sol.x[s.var[0]]] for s in win])
    assert stl.eval_boolean(f, stl.Trajectory(xs, ("x",)))


@pytest.mark.parametrize("seed", range(20))
def test_constant_folding_keeps_the_optimum(seed):
    rng = np.random.default_rng(40 + seed)
    f = stl.push_negations(oracles.random_formula(rng, ("x",), depth=3, max_b=2))
    h = stl.formula_horizon(f)
    known = rng.uniform(-2, 2, size=int(rng.integers(1, h + 2)))
    weights = rng.normal(size=h + 1)

    def build(fold):
        inst = MilpInstance()
        win = []
        for k in range(h + 1):
            if k < len(known):
                if fold:
                    win.append(Slot.constant(k, [known[k]]))
                else:
                    win.append(Slot.symbolic(k, [inst.add_var(f"x_t{k}", known[k], known[k])]))
            else:
                win.append(Slot.symbolic(k, [inst.add_var(f"x_t{k}", -3.0, 3.0)]))
        WindowEncoder(inst, {"x": 0}, 30.0, EncodingConfig()).enforce(f, win, "w")
        obj = {s.var[0]: float(weights[k]) for k, s in enumerate(win) if not s.is_constant}
        const = sum(float(weights[k]) * known[k] for k, s in enumerate(win) if s.is_constant)
        inst.set_objective(obj, const)
        return inst

    a = solve_milp(build(True), node_limit=20000)
    b = solve_milp(build(False), node_limit=20000)
    assert a.status == b.status
    if a.status == OPTIMAL:
        assert a.objective == pytest.approx(b.objective, abs=1e-6)


# --------------------------------------------------------------------------
# norm macros

def _holds(f, point, names=("p", "q")):
    return stl.eval_boolean(f, stl.Trajectory(np.array([point], dtype=float), names))


def test_norm_le_expansion():
    f = expand_norm_predicate("<=", ["p", "q"], [5, 9], 1.0)
    assert f == stl.And((lin({"p": -1.0}, 6.0), lin({"q": -1.0}, 10.0), lin({"p": 1.0}, -4.0),
                         lin({"q": 1.0}, -8.0)))
    assert _holds(f, [5.5, 9.9]) and not _holds(f, [6.5, 9.0])


def test_norm_ge_expansion():
    exact = expand_norm_predicate(">=", ["p", "q"], [5, 9], 1.0)
    axes = expand_norm_predicate(">=", ["p", "q"], [5, 9], 1.0, form="per-axis")
    assert _holds(exact, [7, 9]) and not _holds(exact, [5, 9])
    assert not _holds(axes, [5, 9])
    # the per-axis conjunction also needs separation along q
    assert not _holds(axes, [7, 9]) and _holds(axes, [7, 11])
    with pytest.raises(ValueError):
        expand_norm_predicate(">=", ["p", "q"], [5, 9], 0.0)
    with pytest.raises(ValueError):
        expand_norm_predicate("<=", ["p"], [5], 1.0)


def test_relative_norm_between_signals():
    f = expand_norm_predicate(">=", ["p", "q"], ["r", "s"], 0.1)
    names = ("p", "q", "r", "s")
    assert _holds(f, [1.0, 1.0, 1.2, 1.0], names)
    assert not _holds(f, [1.0, 1.0, 1.05, 0.95], names)


# --------------------------------------------------------------------------
# l1 objective

@pytest.mark.parametrize("u,cost", [(3.0, 3.0), (-2.0, 2.0), (0.0, 0.0)])
def test_l1_examples(u, cost):
    inst = MilpInstance()
    j = inst.add_var("u_0_0_t0", u, u)
    pos, neg, obj = linearize_l1(inst, [j])
    inst.set_objective(obj)
    s = solve_lp(inst)
    assert s.objective == pytest.approx(cost)
    assert s.x[pos[0]] * s.x[neg[0]] == pytest.approx(0.0)


# --------------------------------------------------------------------------
# programs: structure against the auditor

def _count(inst, role):
    return sum(1 for v in inst.variables if inst.metadata["roles"].get(v.name) == role)


def _rows(inst, prefix):
    return sum(1 for c in inst.constraints if c.name.startswith(prefix))


def _double_integrator_mas(M=2, b=2.0):
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [1.0]])
    agents = [AgentModel(A, B, Polytope.box([0, -5], [10, 5]), Polytope.box([-b], [b]),
                         {f"p{i}": 0, f"v{i}": 1}) for i in range(M)]
    return MasModel(agents)


@pytest.mark.parametrize("terminal", ["c1", "single-point", "none"])
@pytest.mark.parametrize("t", [0, 1, 3, 5])
def test_program_counts_match_auditor(terminal, t):
    mas = _double_integrator_mas()
    N = 3
    phi = stl.And((stl.Always(lin({"p0": 1.0}, -1.0), 0, N), stl.Eventually(lin({"p1": -1.0}, 8.0), 1, N)))
    hist = HistoryBuffer(t, [np.full(mas.n, 2.0) for _ in range(min(t, N - 1))])
    inst = build_global_program(mas, phi, hist, np.full(mas.n, 2.0), EncodingConfig(terminal=terminal))
    want = oracles.audit_counts(mas, N, terminal)
    ua_count = _count(inst, "auxiliary") - want["l1"]
    assert _count(inst, "state") == want["states"]
    assert _count(inst, "input") == want["inputs"]
    assert ua_count == want["ua"]
    assert _rows(inst, "dyn_") == want["dyn_rows"]
    assert _rows(inst, "l1_") == want["l1_rows"]
    assert _rows(inst, "term_") == want["term_rows"]
    assert [w for _, w in inst.metadata["windows"]] == oracles.audit_window_times(t, N, terminal)
    n_hist = sum(1 for tag, _ in inst.metadata["windows"] if tag.startswith("hist"))
    assert n_hist == min(t, N - 1)
    # every variable has a role
    assert all(v.name in inst.metadata["roles"] for v in inst.variables)


def test_single_line_example_counts():
    mas = line_mas()
    N = 2
    phi = stl.Always(lin({"x": 1.0}, -1.0), 0, N)
    inst = build_global_program(mas, phi, HistoryBuffer(0, []), [2.0], EncodingConfig())
    assert _count(inst, "state") == 3 and _count(inst, "input") == 3
    tags = [tag for tag, _ in inst.metadata["windows"]]
    assert tags.count("cur") == 1
    assert sum(tag.startswith("rot") for tag in tags) == 3
    assert not any(tag.startswith("hist") for tag in tags)


def test_history_windows_at_steady_state():
    mas = line_mas()
    N = 4
    phi = stl.Eventually(lin({"x": 1.0}, -3.0), 0, N)
    hist = HistoryBuffer(9, [np.array([2.0])] * (N - 1))
    inst = build_global_program(mas, phi, hist, [2.0], EncodingConfig())
    assert sum(tag.startswith("hist") for tag, _ in inst.metadata["windows"]) == N - 1


def test_single_point_pins_the_loop_end():
    mas = line_mas()
    N = 2
    phi = stl.Always(lin({"x": 1.0}, -1.0), 0, N)
    inst = build_global_program(mas, phi, HistoryBuffer(0, []), [2.0], EncodingConfig(terminal="single-point"))
    rows = [c for c in inst.constraints if c.name.startswith("term_")]
    j = inst.index(f"x_0_0_t{N + 1}")
    assert len(rows) == 1 and rows[0].coeffs == {j: 1.0} and rows[0].rhs == 2.0
    assert not any(tag.startswith("mix") for tag, _ in inst.metadata["windows"])


def test_program_errors():
    mas = line_mas()
    with pytest.raises(ValueError):
        build_global_program(mas, lin({"x": 1.0}), HistoryBuffer(0, []), [2.0], EncodingConfig())
    phi = stl.Always(lin({"x": 1.0}), 0, 2)
    with pytest.raises(ValueError, match="history"):
        build_global_program(mas, phi, HistoryBuffer(5, [np.array([1.0])] * 3), [2.0], EncodingConfig())
    with pytest.raises(ValueError):
        EncodingConfig(terminal="maybe")
    with pytest.raises(ValueError):
        EncodingConfig(bigM=-1.0)


# --------------------------------------------------------------------------
# program semantics

def _loop_states(inst, x):
    md = inst.metadata
    t, N = md["t"], md["N"]
    rows = []
    for k in range(t + 1, t + N + 2):
        v = np.zeros(md["mas"].n)
        for i in md["symbolic"]:
            v[md["mas"].state_slice(i)] = x[md["x_vars"][(i, k)]]
        rows.append(v)
    return np.array(rows)


@pytest.mark.parametrize("terminal", ["c1", "single-point", "none"])
@pytest.mark.parametrize("x0", [0.5, 1.0, 1.7, 2.0])
def test_lasso_extension_satisfies_the_formula(terminal, x0):
    mas = line_mas(-5, 5)
    N = 4
    phi = stl.parse_formula("F[0,4](x >= 1.5) & G[0,4](x <= 2.5 | x >= 3.5) & G[0,4](x >= -1.5)", ["x"])
    inst = build_global_program(mas, phi, HistoryBuffer(0, []), [x0], EncodingConfig(terminal=terminal))
    s = solve_milp(inst, node_limit=20000)
    assert s.status == OPTIMAL
    L = _loop_states(inst, s.x)
    tr = stl.Trajectory(np.vstack([L, L, L]), mas.signal_names())
    wins = stl.eval_windows(phi, tr)
    assert len(wins) == 3 * (N + 1) - N
    assert all(ok for _, ok, _ in wins)


@pytest.mark.parametrize("xt", [2.0, 5.0, 9.5])
def test_terminal_block_matches_c1_set(xt):
    mas = line_mas(0, 10, -1, 1)
    N = 3
    phi = stl.Always(lin({"x": 1.0}, 100.0), 0, N)
    a = mas.agents[0]
    C = c1_set(a, [xt])
    for target in np.linspace(xt - 2.5, xt + 2.5, 21):
        inst = build_global_program(mas, phi, HistoryBuffer(0, []), [xt], EncodingConfig(bigM=1000.0))
        v = inst.variables[inst.index(f"x_0_0_t{N}")]
        v.lb, v.ub = max(v.lb, float(target)), min(v.ub, float(target))
        if abs(abs(target - xt) - 1.0) < 1e-9:
            continue
        feasible = solve_lp(inst).status == OPTIMAL
        assert feasible == C.contains([target], 1e-9)


def test_terminal_block_matches_c1_set_planar():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5, 0.0], [1.0, 1.0]])  # two inputs so the set has interior
    a = AgentModel(A, B, Polytope.box([-20, -20], [20, 20]), Polytope.box([-1, -1], [1, 1]), {"p": 0, "v": 1})
    mas = MasModel([a])
    xt = np.array([0.0, 0.0])
    C = c1_set(a, xt)
    N = 3
    phi = stl.Always(lin({"p": 1.0}, 100.0), 0, N)
    rng = np.random.default_rng(0)
    agree = 0
    for target in rng.uniform(-1.5, 1.5, size=(40, 2)):
        inst = build_global_program(mas, phi, HistoryBuffer(0, []), xt, EncodingConfig(bigM=1000.0))
        for d in range(2):
            j = inst.index(f"x_0_{d}_t{N}")
            inst.variables[j].lb = inst.variables[j].ub = float(target[d])
        # the terminal block alone decides: drop the rows that tie x(t+N) to x(t)
        inst2 = MilpInstance()
        keep = {j: inst2.add_var(v.name, v.lb, v.ub, v.kind) for j, v in enumerate(inst.variables)}
        for c in inst.constraints:
            if c.name.startswith("term_") or c.name.startswith("dom_ua"):
                inst2.add_constraint({keep[j]: v for j, v in c.coeffs.items()}, c.sense, c.rhs, c.name)
        feasible = solve_lp(inst2).status == OPTIMAL
        member = C.contains(target, 1e-9)
        if C.G.shape[0] and abs(np.min(C.g - C.G @ target)) < 1e-7:
            continue
        assert feasible == member
        agree += member
    assert agree > 0


# --------------------------------------------------------------------------
# local programs

def test_local_program_pins_neighbours():
    mas = _double_integrator_mas()
    N = 3
    apart = expand_norm_predicate(">=", ["p0", "v0"], ["p1", "v1"], 0.1)
    phi_hat = stl.And((stl.Always(apart, 0, N), stl.Eventually(lin({"p0": 1.0}, -1.0), 0, N)))
    pred1 = np.tile([5.0, 0.0], (N + 2, 1))
    inst = build_local_program(mas, 0, phi_hat, {1: pred1}, HistoryBuffer(0, []), np.array([2.0, 0, 5.0, 0]),
                               EncodingConfig())
    names = [v.name for v in inst.variables]
    assert not any(n.startswith("x_1_") or n.startswith("u_1_") for n in names)
    owned = {j for j, v in enumerate(inst.variables)
             if v.name.startswith(("x_0_", "u_0_"))}
    for d in inst.metadata["literals"]:
        if d[0] == "pred":
            assert set(d[2]) <= owned
    with pytest.raises(ValueError, match="prediction"):
        build_local_program(mas, 0, phi_hat, {}, HistoryBuffer(0, []), np.array([2.0, 0, 5.0, 0]),
                            EncodingConfig())
    with pytest.raises(ValueError, match="covers"):
        build_local_program(mas, 0, phi_hat, {1: pred1[:2]}, HistoryBuffer(0, []),
                            np.array([2.0, 0, 5.0, 0]), EncodingConfig())
