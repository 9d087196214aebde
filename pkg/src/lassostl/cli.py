"""Command-line driver: ``lassostl <command> ...``.

Exit codes: 0 success, 1 usage or I/O error, 2 infeasible program,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys

import numpy as np

from . import stl
from .decomposition import build_graph, schedule_table

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_USAGE):
        super().__init__(msg)
        self.code = code


# --------------------------------------------------------------------------
# helpers

_KEYWORDS = {"true", "false"}


def _guess_signals(text: str) -> list[str]:
    names = []
    for m in re.finditer(r"[A-Za-z_]\w*", text):
        nm = m.group(0)
        nxt = text[m.end():m.end() + 1]
        if nxt == "[" or nm in _KEYWORDS or nm in names:
            continue
        names.append(nm)
    return names


def _read_trace(path: str) -> stl.Trajectory:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    if len(rows) < 2:
        raise CliError(f"{path}: need a header row and at least one sample")
    header = [h.strip() for h in rows[0]]
    cols = [k for k, h in enumerate(header) if h != "t"]
    try:
        vals = np.array([[float(r[k]) for k in cols] for r in rows[1:] if r])
    except (ValueError, IndexError) as exc:
        raise CliError(f"{path}: bad numeric data ({exc})") from None
    t0 = 0
    if "t" in header:
        t0 = int(float(rows[1][header.index("t")]))
    return stl.Trajectory(vals, [header[k] for k in cols], t0)


def _load(name):
    from .scenario import ScenarioError, load_scenario
    try:
        return load_scenario(name)
    except ScenarioError as exc:
        raise CliError(str(exc)) from None


def _describe(f, indent=0) -> list[str]:
    pad = "  " * indent
    if isinstance(f, stl.Pred):
        return [pad + "Pred " + stl.to_text(f)]
    if isinstance(f, stl.TrueF):
        return [pad + "True"]
    if isinstance(f, stl.Not):
        return [pad + "Not"] + _describe(f.child, indent + 1)
    if isinstance(f, (stl.And, stl.Or)):
        out = [pad + type(f).__name__]
        for c in f.children:
            out += _describe(c, indent + 1)
        return out
    if isinstance(f, (stl.Always, stl.Eventually)):
        return [pad + f"{type(f).__name__}[{f.a},{f.b}]"] + _describe(f.child, indent + 1)
    if isinstance(f, stl.Until):
        return [pad + f"Until[{f.a},{f.b}]"] + _describe(f.lhs, indent + 1) + _describe(f.rhs, indent + 1)
    return [pad + repr(f)]


# --------------------------------------------------------------------------
# commands

def cmd_parse(a) -> int:
    signals = a.signals.split(",") if a.signals else _guess_signals(a.formula)
    try:
        f = stl.parse_formula(a.formula, signals)
    except stl.STLSyntaxError as exc:
        raise CliError(str(exc)) from None
    print("\n".join(_describe(f)))
    print(f"horizon: {stl.formula_horizon(f)}")
    print(f"text: {stl.to_text(f)}")
    return EXIT_OK


def cmd_monitor(a) -> int:
    tr = _read_trace(a.trace)
    try:
        f = stl.parse_formula(a.formula, tr.signals)
    except stl.STLSyntaxError as exc:
        raise CliError(str(exc)) from None
    wins = stl.eval_windows(f, tr)
    if not wins:
        raise CliError(f"trace has {len(tr)} samples, fewer than horizon+1 = {stl.formula_horizon(f) + 1}")
    print("t,satisfied,robustness")
    for t, ok, rho in wins:
        print(f"{t},{int(ok)},{rho!r}")
    bad = sum(not w[1] for w in wins)
    print(f"# {len(wins) - bad}/{len(wins)} windows satisfied", file=sys.stderr)
    return EXIT_OK


def _history_for(sc, t, trace_dir):
    """History x(t-N+1..t-1) and x(t): from a run directory, or the initial
    state held for ``t`` steps."""
    from .controller import read_trajectory
    N = sc.horizon
    if trace_dir:
        xs, _, _, _ = read_trajectory(trace_dir)
        if t >= xs.shape[0]:
            raise CliError(f"run in {trace_dir} has only {xs.shape[0]} states")
        states = [xs[k] for k in range(max(0, t - N + 1), t)]
        return states, xs[t]
    states = [sc.initial_state.copy() for _ in range(max(0, t - N + 1), t)]
    return states, sc.initial_state.copy()


def cmd_encode(a) -> int:
    from .encoder import HistoryBuffer, build_global_program
    from .milp.lpfile import export_lp
    sc = _load(a.scenario)
    cfg = sc.encoding
    if a.terminal:
        cfg = sc.with_overrides(terminal=a.terminal).encoding
    states, x_t = _history_for(sc, a.t, a.history)
    inst = build_global_program(sc.mas, sc.formula, HistoryBuffer(a.t, states), x_t, cfg)
    text = export_lp(inst, a.out)
    nb = len(inst.binaries())
    print(f"{inst.name}: {inst.num_vars} variables ({nb} binary), {inst.num_constraints} constraints, "
          f"big-M {inst.metadata['K']:.6g}", file=sys.stderr)
    if a.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_solve(a) -> int:
    from .milp.bnb import solve_milp
    from .milp.lpfile import LPFormatError, import_lp
    try:
        inst = import_lp(a.lp)
    except (OSError, LPFormatError) as exc:
        raise CliError(f"cannot read {a.lp}: {exc}") from None
    sol = solve_milp(inst, node_limit=a.node_limit, time_limit=a.time_limit, force=a.force)
    print(f"status {sol.status}")
    print(f"objective {float(sol.objective)!r}")
    print(f"best_bound {float(sol.best_bound)!r}")
    print(f"nodes {sol.nodes}")
    print(f"wall_time {sol.wall_time:.3f}")
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(f"status {sol.status}\n")
            if sol.has_solution:
                for nm, v in zip(sol.names, sol.x):
                    fh.write(f"{nm} {float(v)!r}\n")
    return EXIT_INFEASIBLE if sol.status == "infeasible" else EXIT_OK


def _scenario_with_seed(sc, seed):
    if seed is None:
        return sc
    from .scenario import scenario_from_dict
    raw = dict(sc.raw)
    raw["simulation"] = dict(raw.get("simulation") or {}, seed=seed)
    if raw.get("disturbance"):
        raw["disturbance"] = dict(raw["disturbance"], seed=seed)
    return scenario_from_dict(raw)


def cmd_run(a) -> int:
    from .controller import InitialFeasibilityError, InvariantViolation, SolverSettings, run_closed_loop
    sc = _scenario_with_seed(_load(a.scenario), a.seed)
    backend = a.solver
    if backend == "external":
        from .milp.external import ENV_VAR
        cmd = os.environ.get(ENV_VAR)
        if not cmd:
            raise CliError(f"--solver external needs a command: external:<cmd> or ${ENV_VAR}")
        backend = "external:" + cmd
    settings = SolverSettings(backend, node_limit=a.node_limit, time_limit=a.time_limit)

    def progress(rec):
        if a.verbose:
            modes = " ".join(f"{i + 1}:{m[0]}" for i, m in sorted(rec.modes.items()))
            st = ",".join(sorted({s for s in rec.status.values() if s})) or "-"
            print(f"t={rec.t:3d} O={rec.schedule} modes {modes} status {st} wall {rec.wall:.2f}s",
                  file=sys.stderr)

    try:
        log = run_closed_loop(sc, a.steps, a.mode, disturb=a.disturb, solver=settings,
                              check_shift=a.check_shift, progress=progress)
    except (InitialFeasibilityError, InvariantViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = a.out or f"run-{sc.name}-{a.mode}"
    log.write(out)
    bad = sum(not w[1] for w in log.windows)
    fb = sum(m == "fallback" for r in log.steps for m in r.modes.values())
    print(f"{sc.name} {a.mode}: {log.T} steps, {len(log.windows) - bad}/{len(log.windows)} windows satisfied, "
          f"{fb} fallback agent-steps; log in {out}")
    return EXIT_OK


def verify_run(outdir, scenario, tol: float = 0.0) -> dict:
    """Replay a logged run and re-monitor it.  Uses the dynamics model and the
    STL monitor only; the logged verdict columns are never read."""
    from .controller import read_trajectory
    xs, us, ws, meta = read_trajectory(outdir)
    mas = scenario.mas
    report = dict(dynamics_ok=True, dynamics_errors=[], inputs_ok=True, input_errors=[])
    if xs.shape[1] != mas.n or (us.size and us.shape[1] != mas.m):
        report["dynamics_ok"] = False
        report["dynamics_errors"].append("dimension mismatch with the scenario")
        report.update(windows=[], windows_ok=False)
        return report
    for k in range(us.shape[0]):
        pred = mas.step(xs[k], us[k]) + ws[k]
        err = float(np.max(np.abs(pred - xs[k + 1])))
        if err > tol:
            report["dynamics_ok"] = False
            report["dynamics_errors"].append((k + 1, err))
        if not mas.input_set.contains(us[k], 1e-9):
            report["inputs_ok"] = False
            report["input_errors"].append(k)
    wins = stl.eval_windows(scenario.formula, stl.Trajectory(xs, mas.signal_names()))
    report["windows"] = wins
    report["windows_ok"] = bool(wins) and all(w[1] for w in wins)
    report["disturbed"] = bool(np.any(ws != 0)) if ws.size else False
    return report


def cmd_verify(a) -> int:
    sc = _load(a.scenario)
    try:
        rep = verify_run(a.rundir, sc)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read run in {a.rundir}: {exc}") from None
    wins = rep["windows"]
    bad = [w for w in wins if not w[1]]
    if rep["dynamics_ok"]:
        print("dynamics: consistent")
    else:
        first = rep["dynamics_errors"][0]
        print(f"dynamics: INCONSISTENT at {len(rep['dynamics_errors'])} steps, first {first}")
    print(f"inputs: {'admissible' if rep['inputs_ok'] else 'OUTSIDE the input set at ' + str(rep['input_errors'][:5])}")
    print(f"windows: {len(wins) - len(bad)}/{len(wins)} satisfied"
          + (f", min robustness {min(w[2] for w in wins):.6g}" if wins else ""))
    for t, _, rho in bad[:10]:
        print(f"  window t={t} violated (robustness {rho:.6g})")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(dict(dynamics_ok=rep["dynamics_ok"], inputs_ok=rep["inputs_ok"],
                           windows_ok=rep["windows_ok"],
                           windows=[[t, bool(ok), float(r)] for t, ok, r in wins]), fh)
    ok = rep["dynamics_ok"] and rep["inputs_ok"] and rep["windows_ok"]
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_schedule(a) -> int:
    sc = _load(a.scenario)
    g = build_graph(sc.tasks, sc.M)
    print("t,v,O")
    for t, v, O in schedule_table(g, a.steps, a.v0):
        print(f"{t},{v},{{{','.join(map(str, sorted(O)))}}}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lassostl", description="Recurring STL tasks via lasso-shaped MILP plans.")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("parse", help="print the syntax tree and horizon of a formula")
    s.add_argument("formula")
    s.add_argument("--signals", help="comma-separated signal names (default: identifiers in the formula)")
    s.set_defaults(fn=cmd_parse)

    s = sub.add_parser("monitor", help="windowed satisfaction and robustness over a CSV trace")
    s.add_argument("formula")
    s.add_argument("trace", help="CSV with one column per signal (optional 't' column)")
    s.set_defaults(fn=cmd_monitor)

    s = sub.add_parser("encode", help="build and export the step-t global program as an LP file")
    s.add_argument("scenario")
    s.add_argument("--t", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--history", help="run directory supplying x(0..t); default holds the initial state")
    s.add_argument("--terminal", choices=["c1", "single-point", "none"])
    s.set_defaults(fn=cmd_encode)

    s = sub.add_parser("solve", help="solve an LP file with the bundled branch-and-bound")
    s.add_argument("lp")
    s.add_argument("--out", help="write the solution in 'name value' format")
    s.add_argument("--node-limit", type=int, default=100_000)
    s.add_argument("--time-limit", type=float, default=math.inf)
    s.add_argument("--force", action="store_true", help="ignore the size guardrail")
    s.set_defaults(fn=cmd_solve)

    s = sub.add_parser("run", help="closed-loop simulation; writes a run directory")
    s.add_argument("scenario")
    s.add_argument("--mode", choices=["central", "distributed"], default="central")
    s.add_argument("--disturb", action="store_true")
    s.add_argument("--solver", default="bundled", help="bundled | external | external:<cmd with {in} {out}>")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--node-limit", type=int, default=400)
    s.add_argument("--time-limit", type=float, default=30.0)
    s.add_argument("--check-shift", action="store_true", help="check the shifted plan at every transition")
    s.add_argument("--out")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("verify", help="replay the dynamics of a run and re-monitor every window")
    s.add_argument("rundir")
    s.add_argument("scenario")
    s.add_argument("--json")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("schedule", help="print the optimizer schedule v(t), O(t)")
    s.add_argument("scenario")
    s.add_argument("--steps", type=int, default=6)
    s.add_argument("--v0", type=int, default=1)
    s.set_defaults(fn=cmd_schedule)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return a.fn(a)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
