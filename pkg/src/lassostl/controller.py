"""Receding-horizon loops (central and distributed), fallback candidates and run logs."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import stl
from .decomposition import ScheduleState, build_graph, local_formula, next_schedule
from .encoder import (C1, NO_TERMINAL, SINGLE_POINT, EncodingConfig, HistoryBuffer, build_global_program,
                      build_local_program, complete_assignment, compute_bigM, extract_plan)
from .lti import MasModel, find_loop_input
from .milp.bnb import solve_milp
from .milp.model import INFEASIBLE, OPTIMAL, MilpInstance, MilpSolution


class InitialFeasibilityError(RuntimeError):
    """The first program has no solution, so no feasible start is known."""


class InvariantViolation(RuntimeError):
    """A nominal run became infeasible although its shifted plan should be feasible."""


class MissingLoopInput(ValueError):
    pass


# --------------------------------------------------------------------------
# plans

@dataclass
class AgentPlan:
    t: int
    inputs: np.ndarray            # u(t..t+N), shape (N+1, m)
    states: np.ndarray            # x(t..t+N+1), shape (N+2, n)
    loop_input: np.ndarray | None  # input taking x(t+N) back to x(t)
    looped: bool = True           # False for plain shifts without a closing input

    @property
    def N(self) -> int:
        return self.inputs.shape[0] - 1


@dataclass
class PlanBuffer:
    t: int
    plans: dict[int, AgentPlan]

    def __getitem__(self, i: int) -> AgentPlan:
        return self.plans[i]

    def check(self, mas: MasModel, tol: float = 1e-6) -> list[str]:
        """Dynamics consistency and loop closure of every stored plan."""
        problems = []
        for i, p in self.plans.items():
            a = mas.agents[i]
            for k in range(p.inputs.shape[0]):
                err = np.max(np.abs(a.A @ p.states[k] + a.B @ p.inputs[k] - p.states[k + 1]))
                if err > tol:
                    problems.append(f"agent {i}: state {k + 1} off by {err:.3g}")
            if p.looped:
                if p.loop_input is None:
                    problems.append(f"agent {i}: loop input missing")
                else:
                    err = np.max(np.abs(a.A @ p.states[p.N] + a.B @ p.loop_input - p.states[0]))
                    if err > tol:
                        problems.append(f"agent {i}: loop does not close ({err:.3g})")
        return problems


def _simulate(a, x0, inputs):
    xs = [np.asarray(x0, dtype=float)]
    for u in inputs:
        xs.append(a.A @ xs[-1] + a.B @ u)
    return np.array(xs)


def plan_from_solution(mas: MasModel, inst: MilpInstance, x) -> dict[int, AgentPlan]:
    """Per-agent plans from a solved program; states are re-simulated from x(t)."""
    md = inst.metadata
    t, mode = md["t"], md["terminal"]
    out = {}
    for i, p in extract_plan(inst, x).items():
        a = mas.agents[i]
        us = p["inputs"]
        lo, hi = a.input_set.bounds()
        us = np.clip(us, lo, hi)
        states = _simulate(a, p["states"][0], us)
        if mode == C1:
            loop = np.clip(np.asarray(p["u_aux"], dtype=float), lo, hi)
        elif mode == SINGLE_POINT:
            loop = find_loop_input(a, states[-2], states[0])
            if loop is None:
                loop = us[-1].copy()
        else:
            loop = find_loop_input(a, states[-2], states[0])
        out[i] = AgentPlan(t, us, states, loop, loop is not None)
    return out


def shift_candidate(plan: AgentPlan, strict: bool = True) -> np.ndarray:
    """[u(t+1..t+N-1), loop input, u(t)]: the shifted-and-looped input sequence."""
    if plan.loop_input is None or not plan.looped:
        if strict:
            raise MissingLoopInput("plan has no loop input; cannot close the shifted sequence")
        # plain shift, repeating the last input
        return np.vstack([plan.inputs[1:], plan.inputs[-1:]])
    return np.vstack([plan.inputs[1:plan.N], plan.loop_input[None, :], plan.inputs[:1]])


def candidate_plan(mas: MasModel, i: int, plan: AgentPlan, x_now=None) -> AgentPlan:
    """Plan for t+1 built from the shifted candidate, simulated from ``x_now``
    (agent state; defaults to the predicted x(t+1))."""
    a = mas.agents[i]
    looped = plan.loop_input is not None and plan.looped
    us = shift_candidate(plan, strict=False)
    x0 = plan.states[1] if x_now is None else np.asarray(x_now, dtype=float)
    states = _simulate(a, x0, us)
    loop = plan.inputs[0].copy() if looped else None
    return AgentPlan(plan.t + 1, us, states, loop, looped)


@dataclass
class ShiftCheck:
    ok: bool
    violations: list = field(default_factory=list)  # (constraint or variable name, residual)

    def __bool__(self):
        return self.ok


def verify_theorem1_shift(mas: MasModel, inst_t: MilpInstance, x_t_solution, inst_next: MilpInstance,
                          tol: float = 1e-6, plans: Mapping[int, AgentPlan] | None = None) -> ShiftCheck:
    """Does the shifted plan of the t-program satisfy every row of the t+1 program?"""
    if plans is None:
        plans = plan_from_solution(mas, inst_t, x_t_solution)
    inputs, aux = {}, {}
    for i in inst_next.metadata["symbolic"]:
        p = plans[i]
        if p.loop_input is None:
            return ShiftCheck(False, [(f"loop_input_{i}", math.inf)])
        inputs[i] = shift_candidate(p)
        aux[i] = p.inputs[0]
    try:
        x = complete_assignment(inst_next, inputs, aux)
    except (ValueError, KeyError) as exc:
        return ShiftCheck(False, [(str(exc), math.inf)])
    v = inst_next.violations(x, tol)
    return ShiftCheck(not v, v)


# --------------------------------------------------------------------------
# solver selection

SolverFn = Callable[[MilpInstance, "np.ndarray | None"], MilpSolution]


@dataclass
class SolverSettings:
    backend: str = "bundled"      # "bundled" or "external:<command template>"
    node_limit: int = 400
    time_limit: float = 30.0

    def make(self) -> SolverFn:
        if self.backend == "bundled":
            def run(inst, incumbent=None):
                return solve_milp(inst, incumbent=incumbent, node_limit=self.node_limit,
                                  time_limit=self.time_limit)
            return run
        if self.backend.startswith("external:"):
            from .milp.external import solve_external
            cmd = self.backend[len("external:"):]

            def run(inst, incumbent=None):
                return solve_external(inst, cmd)
            return run
        raise ValueError(f"unknown solver backend {self.backend!r}")


# --------------------------------------------------------------------------
# steps

@dataclass
class StepRecord:
    t: int
    schedule: list[int]                 # agents allowed to optimize (1-based), all agents in central mode
    modes: dict[int, str]               # agent (0-based) -> optimized | fallback
    status: dict[int, str]              # agent -> solver status ("" when no solve)
    objective: dict[int, float]
    solve_time: dict[int, float]
    nodes: dict[int, int]
    candidate_ok: dict[int, bool]       # shifted candidate feasible for this step's program
    shift_check: bool | None = None     # verify_theorem1_shift for the transition into t
    wall: float = 0.0                   # total solver time spent in this step

    @property
    def feasible(self) -> bool:
        """True when every solve returned an admissible point."""
        return all(s != INFEASIBLE for s in self.status.values() if s) and \
            all(m != "failed" for m in self.modes.values())

    def to_json(self) -> dict:
        return dict(t=self.t, schedule=self.schedule,
                    agents=[dict(agent=i + 1, mode=self.modes[i], status=self.status.get(i, ""),
                                 objective=_jnum(self.objective.get(i)), solve_time=self.solve_time.get(i, 0.0),
                                 nodes=self.nodes.get(i, 0), candidate_ok=self.candidate_ok.get(i))
                            for i in sorted(self.modes)],
                    shift_check=self.shift_check, wall=self.wall)


def _jnum(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return None
    return float(v)


def _candidates(mas, buffer, x_t):
    return {i: candidate_plan(mas, i, p, x_t[mas.state_slice(i)]) for i, p in buffer.plans.items()}


def _incumbent(inst, cands, agents):
    try:
        x = complete_assignment(inst, {i: cands[i].inputs for i in agents},
                                {i: cands[i].loop_input if cands[i].loop_input is not None
                                 else cands[i].inputs[-1] for i in agents})
    except (ValueError, KeyError):
        return None, False
    return x, inst.is_feasible(x, tol=1e-6)


def central_step(mas: MasModel, phi, history: HistoryBuffer, buffer: PlanBuffer | None, x_t,
                 config: EncodingConfig, solver: SolverFn, K: float, nominal: bool = True,
                 cands: Mapping[int, AgentPlan] | None = None):
    """One step of the global program.  ``cands`` overrides the shifted plans
    derived from ``buffer`` (used for a user-provided start).
    Returns (input vector, new buffer, record, instance, solution)."""
    t = history.t
    inst = build_global_program(mas, phi, history, x_t, config, K=K)
    agents = list(range(mas.M))
    if cands is None and buffer is not None:
        cands = _candidates(mas, buffer, x_t)
    inc, cand_ok = (None, False)
    if cands is not None:
        inc, cand_ok = _incumbent(inst, cands, agents)
    t0 = time.perf_counter()
    sol = solver(inst, inc if cand_ok else None)
    wall = time.perf_counter() - t0
    status = {i: sol.status for i in agents}
    if sol.has_solution:
        plans = plan_from_solution(mas, inst, sol.x)
        modes = {i: "optimized" for i in agents}
    else:
        if t == 0 or cands is None:
            raise InitialFeasibilityError(
                f"initial feasibility violated: the t={t} program has no feasible point ({sol.status})")
        if sol.status == INFEASIBLE and nominal and config.terminal != NO_TERMINAL:
            raise InvariantViolation(f"nominal program infeasible at t={t} although the shifted plan "
                                     f"was {'feasible' if cand_ok else 'not feasible'}")
        plans = cands
        modes = {i: "fallback" for i in agents}
    u = np.concatenate([plans[i].inputs[0] for i in agents])
    rec = StepRecord(t, [i + 1 for i in agents], modes, status,
                     {i: sol.objective if sol.has_solution else math.nan for i in agents},
                     {i: wall for i in agents}, {i: sol.nodes for i in agents},
                     {i: cand_ok for i in agents} if cands is not None else {}, wall=wall)
    return u, PlanBuffer(t, plans), rec, inst, sol


def local_step(mas: MasModel, i: int, phi_i, optimize: bool, cands: Mapping[int, AgentPlan],
               history: HistoryBuffer, x_t, config: EncodingConfig, solver: SolverFn, K: float,
               nominal: bool = True):
    """Agent ``i`` at time t.  ``cands`` holds every agent's shifted plan (the
    exchanged predictions).  Returns (plan, mode, status, objective, wall, nodes, cand_ok)."""
    cand = cands[i]
    if not optimize:
        return cand, "fallback", "", math.nan, 0.0, 0, None
    preds = {j: c.states for j, c in cands.items() if j != i}
    missing = [j for j in range(mas.M) if j != i and j not in preds]
    if missing:
        raise ValueError(f"agent {i}: no prediction from agents {missing}")
    inst = build_local_program(mas, i, phi_i, preds, history, x_t, config, K=K)
    inc, ok = _incumbent(inst, cands, [i])
    t0 = time.perf_counter()
    sol = solver(inst, inc if ok else None)
    wall = time.perf_counter() - t0
    if sol.has_solution:
        plan = plan_from_solution(mas, inst, sol.x)[i]
        return plan, "optimized", sol.status, sol.objective, wall, sol.nodes, ok
    if sol.status == INFEASIBLE and nominal and ok and config.terminal != NO_TERMINAL:
        raise InvariantViolation(f"agent {i}: local program infeasible at t={history.t} "
                                 "although its shifted plan is feasible")
    return cand, "fallback", sol.status, math.nan, wall, sol.nodes, ok


# --------------------------------------------------------------------------
# closed loop

@dataclass
class RunLog:
    scenario: str
    mode: str
    N: int
    signals: tuple
    states: np.ndarray            # (T+1, n)
    inputs: np.ndarray            # (T, m)
    disturbances: np.ndarray      # (T, n)
    steps: list[StepRecord]
    windows: list                 # (t, satisfied, robustness)
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    def all_windows_satisfied(self) -> bool:
        return all(w[1] for w in self.windows)

    def statuses(self) -> list[str]:
        return [s for rec in self.steps for s in rec.status.values() if s]

    def solve_times(self) -> list[float]:
        """Per-step solver time (local solves of one step are summed)."""
        return [rec.wall for rec in self.steps]

    # files ---------------------------------------------------------------------
    def write(self, outdir) -> None:
        os.makedirs(outdir, exist_ok=True)
        n, m = self.states.shape[1], self.inputs.shape[1]
        with open(os.path.join(outdir, "trajectory.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j}" for j in range(n)] + [f"u{j}" for j in range(m)]
                       + [f"w{j}" for j in range(n)])
            for k in range(self.states.shape[0]):
                row = [k] + [repr(float(v)) for v in self.states[k]]
                if k < self.T:
                    row += [repr(float(v)) for v in self.inputs[k]] + [repr(float(v)) for v in self.disturbances[k]]
                else:
                    row += [""] * (m + n)
                w.writerow(row)
        with open(os.path.join(outdir, "windows.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "satisfied", "robustness"])
            for t, ok, rho in self.windows:
                w.writerow([t, int(ok), repr(float(rho))])
        with open(os.path.join(outdir, "steps.jsonl"), "w") as fh:
            for rec in self.steps:
                fh.write(json.dumps(rec.to_json()) + "\n")
        meta = dict(self.meta, scenario=self.scenario, mode=self.mode, N=self.N, signals=list(self.signals),
                    T=self.T, state_dim=n, input_dim=m)
        with open(os.path.join(outdir, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)


def read_trajectory(outdir):
    """(states (T+1, n), inputs (T, m), disturbances (T, n), meta) from a run directory."""
    with open(os.path.join(outdir, "meta.json")) as fh:
        meta = json.load(fh)
    n, m = meta["state_dim"], meta["input_dim"]
    xs, us, ws = [], [], []
    with open(os.path.join(outdir, "trajectory.csv"), newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            xs.append([float(v) for v in row[1:1 + n]])
            if row[1 + n]:
                us.append([float(v) for v in row[1 + n:1 + n + m]])
                ws.append([float(v) for v in row[1 + n + m:1 + 2 * n + m]])
    return np.array(xs), np.array(us).reshape(-1, m), np.array(ws).reshape(-1, n), meta


def _disturbance(spec, rng, t, n):
    w = np.zeros(n)
    if spec is not None and spec.active(t) and spec.amplitude > 0:
        w[list(spec.indices)] = rng.uniform(-spec.amplitude, spec.amplitude, size=len(spec.indices))
    return w


def run_closed_loop(scenario, T_sim: int | None = None, mode: str = "central", disturb: bool = False,
                    solver: SolverSettings | SolverFn | None = None, bootstrap_inputs=None,
                    check_shift: bool = False, config: EncodingConfig | None = None,
                    progress: Callable[[StepRecord], None] | None = None) -> RunLog:
    """Closed-loop simulation of a scenario, central or distributed."""
    if mode not in ("central", "distributed"):
        raise ValueError("mode must be 'central' or 'distributed'")
    mas: MasModel = scenario.mas
    phi = scenario.formula
    cfg = config or scenario.encoding
    N = scenario.horizon
    T = scenario.steps if T_sim is None else int(T_sim)
    if T < N + 1:
        raise ValueError(f"T_sim must be at least N+1 = {N + 1}")
    if solver is None:
        solver = SolverSettings()
    solve = solver.make() if isinstance(solver, SolverSettings) else solver
    K = cfg.bigM or compute_bigM(mas, phi)
    spec = scenario.disturbance if disturb else None
    rng = np.random.default_rng(spec.seed if spec is not None else scenario.seed)
    nominal = spec is None
    graph = build_graph(scenario.tasks, mas.M)
    phis = {i: local_formula(scenario.tasks, i + 1) for i in range(mas.M)} if mode == "distributed" else {}
    sched = ScheduleState(1)

    x = scenario.initial_state.astype(float).copy()
    history = HistoryBuffer(0, [])
    buffer = None
    if bootstrap_inputs is None and scenario.raw.get("bootstrap"):
        bootstrap_inputs = scenario.raw["bootstrap"]
    start = bootstrap_plans(mas, x, bootstrap_inputs, N) if bootstrap_inputs is not None else None
    states, inputs, dists, records = [x.copy()], [], [], []
    prev = None  # (instance, solution) of the last central solve, for the shift check
    for t in range(T):
        if mode == "central" or t == 0:
            u, buffer, rec, inst, sol = central_step(mas, phi, history, buffer, x, cfg, solve, K, nominal,
                                                     cands=start if t == 0 else None)
            if mode == "distributed":
                rec.schedule = []
            if check_shift and prev is not None and nominal:
                rec.shift_check = bool(verify_theorem1_shift(mas, prev[0], prev[1].x, inst, plans=prev[2]))
            prev = (inst, sol, dict(buffer.plans)) if sol.has_solution else None
        else:
            v, O = next_schedule(sched, graph)
            sched = ScheduleState(v)
            cands = _candidates(mas, buffer, x)
            plans, modes, status, objs, walls, nodes, cok = {}, {}, {}, {}, {}, {}, {}
            for i in range(mas.M):
                res = local_step(mas, i, phis[i], (i + 1) in O, cands, history, x, cfg, solve, K, nominal)
                plans[i], modes[i], status[i], objs[i], walls[i], nodes[i], ok = res
                if ok is not None:
                    cok[i] = ok
            buffer = PlanBuffer(t, plans)
            u = np.concatenate([plans[i].inputs[0] for i in range(mas.M)])
            rec = StepRecord(t, list(O), modes, status, objs, walls, nodes, cok, wall=sum(walls.values()))
        records.append(rec)
        if progress is not None:
            progress(rec)
        w = _disturbance(spec, rng, t, mas.n)
        x_next = mas.step(x, u) + w
        inputs.append(u)
        dists.append(w)
        history = history.advance(x, N - 1)
        x = x_next
        states.append(x.copy())
    S = np.array(states)
    traj = stl.Trajectory(S, mas.signal_names())
    wins = stl.eval_windows(phi, traj)
    return RunLog(scenario.name, mode, N, tuple(mas.signal_names()), S, np.array(inputs), np.array(dists),
                  records, wins, dict(disturbed=not nominal, seed=int(spec.seed if spec else scenario.seed),
                                      terminal=cfg.terminal, bigM=K))


def bootstrap_plans(mas: MasModel, x0, inputs, N: int) -> dict[int, AgentPlan]:
    """Candidate plans at t=0 from a user-provided sequence.

    ``inputs`` has N+1 rows u(0..N) of the stacked MAS input, optionally
    followed by one row holding the loop input."""
    U = np.atleast_2d(np.asarray(inputs, dtype=float))
    if U.shape[1] != mas.m or U.shape[0] not in (N + 1, N + 2):
        raise ValueError(f"bootstrap needs {N + 1} or {N + 2} rows of {mas.m} entries, got {U.shape}")
    plans = {}
    for i, a in enumerate(mas.agents):
        us = U[:, mas.input_slice(i)]
        seq = us[:N + 1]
        loop = us[N + 1] if us.shape[0] == N + 2 else None
        plans[i] = AgentPlan(0, seq, _simulate(a, x0[mas.state_slice(i)], seq), loop, loop is not None)
    return plans
