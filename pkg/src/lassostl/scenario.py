"""Scenario files (YAML).

Layout::

    name: surveillance-small
    horizon: 10
    agents:
      - name: a1
        A: [[...], ...]            # dense, row-major
        B: [[...], ...]
        state_set: {box: [[lo...], [hi...]]}   # or {G: [[...]], g: [...]}; null = unbounded
        input_set: {box: [[-20, -20], [20, 20]]}
        signals: {p1x: 0, v1x: 1, p1y: 2, v1y: 3}
    macros:                          # named subformulas, usable as bare identifiers
      near1: {norm: "<=", signals: [p1x, p1y], center: [5, 9], radius: 1}
      apart: {norm: ">=", signals: [p1x, p1y], center: [p2x, p2y], radius: 0.1}
      other: {formula: "G[0,2](p1x >= 1)"}
    tasks:
      - {clique: [1], label: phi11, formula: "G[0,10](ws1)"}
    initial_state: [...]
    encoding: {terminal: c1, bigM: null, margin: 1.0e-5}
    cost: {u_0_0: 1.0}               # optional per-input weights on |u|
    disturbance: {indices: [1, 3], amplitude: 0.5, start: 10, stop: 90, seed: 0}
    simulation: {steps: 33, seed: 0}
    bootstrap: [[...], ...]          # optional t=0 input sequence, N+1 rows (+1 loop-input row)
    notes: {initial_state: implementation-chosen}
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from . import stl
from .decomposition import Task, TaskSet
from .encoder import EncodingConfig, expand_norm_predicate
from .lti import AgentModel, MasModel, Polytope


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.problems))


@dataclass
class DisturbanceSpec:
    indices: list[int]
    amplitude: float = 0.5
    start: int = 0
    stop: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("disturbance amplitude must be nonnegative")

    def active(self, t: int) -> bool:
        return t >= self.start and (self.stop is None or t < self.stop)

    def to_dict(self) -> dict:
        return dict(indices=list(self.indices), amplitude=self.amplitude, start=self.start,
                    stop=self.stop, seed=self.seed)


@dataclass
class Scenario:
    name: str
    mas: MasModel
    tasks: TaskSet
    horizon: int
    initial_state: np.ndarray
    encoding: EncodingConfig
    disturbance: DisturbanceSpec | None = None
    steps: int = 33
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def formula(self):
        return self.tasks.formula()

    @property
    def M(self) -> int:
        return self.mas.M

    def with_overrides(self, **encoding) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw.setdefault("encoding", {}).update(encoding)
        return scenario_from_dict(raw)


# --------------------------------------------------------------------------
# parsing

def _polytope(d, dim, where, problems):
    if d is None:
        return Polytope.whole(dim)
    try:
        P = Polytope.from_dict(d, dim)
    except Exception as exc:  # noqa: BLE001 - collect and report
        problems.append(f"{where}: {exc}")
        return Polytope.whole(dim)
    if P.dim != dim:
        problems.append(f"{where}: dimension {P.dim}, expected {dim}")
        return Polytope.whole(dim)
    return P


def _macro(name, spec, signals, macros):
    if "norm" in spec:
        return expand_norm_predicate(spec["norm"], spec["signals"], spec["center"], spec["radius"],
                                     spec.get("form", "exact"))
    if "formula" in spec:
        return stl.parse_formula(spec["formula"], signals, macros)
    raise ValueError(f"macro {name!r} needs 'norm' or 'formula'")


def scenario_from_dict(d: dict) -> Scenario:
    problems: list[str] = []
    name = d.get("name", "scenario")
    agents = []
    for k, a in enumerate(d.get("agents") or []):
        where = f"agents[{k}]"
        try:
            A = np.asarray(a["A"], dtype=float)
            B = np.asarray(a["B"], dtype=float)
        except Exception as exc:  # noqa: BLE001
            problems.append(f"{where}: bad dynamics ({exc})")
            continue
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            problems.append(f"{where}: A must be square, got shape {A.shape}")
            continue
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            problems.append(f"{where}: B must have {A.shape[0]} rows, got shape {B.shape}")
            continue
        n, m = A.shape[0], B.shape[1]
        X = _polytope(a.get("state_set"), n, f"{where}.state_set", problems)
        U = _polytope(a.get("input_set"), m, f"{where}.input_set", problems)
        sig = dict(a.get("signals") or {})
        for s, idx in sig.items():
            if not isinstance(idx, int) or not 0 <= idx < n:
                problems.append(f"{where}: signal {s!r} -> {idx} is not a state index in 0..{n - 1}")
        try:
            agents.append(AgentModel(A, B, X, U, {s: i for s, i in sig.items() if isinstance(i, int) and 0 <= i < n},
                                     a.get("name", f"agent{k + 1}")))
        except ValueError as exc:
            problems.append(f"{where}: {exc}")
    if not agents:
        problems.append("no valid agents")
        raise ScenarioError(problems)
    try:
        mas = MasModel(agents)
    except ValueError as exc:
        raise ScenarioError(problems + [str(exc)]) from None
    for k, a in enumerate(agents):
        if a.state_set.G.shape[0] and a.state_set.is_empty():
            problems.append(f"agents[{k}].state_set is empty")
        if a.input_set.G.shape[0] and a.input_set.is_empty():
            problems.append(f"agents[{k}].input_set is empty")
    signals = list(mas.signals)
    macros: dict = {}
    for mname, spec in (d.get("macros") or {}).items():
        try:
            macros[mname] = _macro(mname, spec, signals, macros)
        except Exception as exc:  # noqa: BLE001
            problems.append(f"macro {mname!r}: {exc}")
    tasks = []
    for k, tk in enumerate(d.get("tasks") or []):
        where = f"tasks[{k}]"
        clique = frozenset(tk.get("clique") or [])
        if not clique:
            problems.append(f"{where}: empty clique")
        bad = sorted(c for c in clique if not (isinstance(c, int) and 1 <= c <= mas.M))
        if bad:
            problems.append(f"{where}: clique members {bad} outside 1..{mas.M}")
        try:
            f = stl.parse_formula(tk["formula"], signals, macros)
        except (stl.STLSyntaxError, ValueError, KeyError) as exc:
            problems.append(f"{where}: {exc}")
            continue
        owners = {mas.agent_of_signal(s) + 1 for s in stl.signals_of(f)}
        if clique and not owners <= set(clique):
            problems.append(f"{where}: formula uses agents {sorted(owners)} outside clique {sorted(clique)}")
        tasks.append(Task(clique, f, tk.get("label", f"task{k}")))
    N = d.get("horizon")
    pad = bool((d.get("encoding") or {}).get("pad_horizons", True))
    ts = TaskSet(tasks)
    if tasks:
        hs = [stl.formula_horizon(t.formula) for t in tasks]
        if N is None:
            N = max(hs)
        if not pad and any(h != N for h in hs):
            problems.append("horizon mismatch (formulas must share the declared horizon): "
                            + ", ".join(f"{t.label}={h}" for t, h in zip(tasks, hs)))
        elif any(h > N for h in hs):
            problems.append(f"formula horizons exceed declared N={N}: "
                            + ", ".join(f"{t.label}={h}" for t, h in zip(tasks, hs) if h > N))
        else:
            padded = []
            for t, h in zip(tasks, hs):
                f = t.formula if h == N else stl.Always(t.formula, 0, N - h)
                padded.append(Task(t.clique, f, t.label))
            ts = TaskSet(padded)
    else:
        problems.append("no tasks")
    covered = ts.agents()
    for i in range(1, mas.M + 1):
        if tasks and i not in covered:
            problems.append(f"agent {i} appears in no task")
    x0 = np.asarray(d.get("initial_state", []), dtype=float).reshape(-1)
    if x0.size != mas.n:
        problems.append(f"initial_state has {x0.size} entries, expected {mas.n}")
    elif not mas.state_set.contains(x0, 1e-9):
        problems.append("initial_state is outside the state set")
    enc = dict(d.get("encoding") or {})
    enc.pop("pad_horizons", None)
    try:
        cfg = EncodingConfig(cost=d.get("cost"), **enc)
    except (TypeError, ValueError) as exc:
        problems.append(f"encoding: {exc}")
        cfg = EncodingConfig()
    dist = None
    if d.get("disturbance"):
        try:
            dist = DisturbanceSpec(**d["disturbance"])
            if any(not 0 <= i < mas.n for i in dist.indices):
                problems.append("disturbance indices outside the state vector")
        except (TypeError, ValueError) as exc:
            problems.append(f"disturbance: {exc}")
    if d.get("bootstrap") is not None and tasks:
        try:
            B0 = np.asarray(d["bootstrap"], dtype=float)
            if B0.ndim != 2 or B0.shape[1] != mas.m or B0.shape[0] not in (int(N) + 1, int(N) + 2):
                problems.append(f"bootstrap: expected {int(N) + 1} or {int(N) + 2} rows of {mas.m} inputs, "
                                f"got shape {B0.shape}")
            elif not all(mas.input_set.contains(r, 1e-9) for r in B0):
                problems.append("bootstrap: inputs outside the input set")
        except (TypeError, ValueError) as exc:
            problems.append(f"bootstrap: {exc}")
    sim = d.get("simulation") or {}
    if problems:
        raise ScenarioError(problems)
    return Scenario(name, mas, ts, int(N), x0, cfg, dist, int(sim.get("steps", 3 * (N + 1))),
                    int(sim.get("seed", 0)), copy.deepcopy(d))


def load_scenario(path_or_name: str) -> Scenario:
    """Load a scenario file, or a bundled scenario by name."""
    if not os.path.exists(path_or_name) and path_or_name in bundled_scenarios():
        text = resources.files("lassostl.scenarios").joinpath(f"{path_or_name}.yaml").read_text()
        where = path_or_name
    else:
        try:
            with open(path_or_name) as fh:
                text = fh.read()
        except OSError as exc:
            raise ScenarioError([f"cannot read {path_or_name}: {exc}"]) from None
        where = path_or_name
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ScenarioError([f"{where}: YAML parse error{loc}: {exc}"]) from None
    if not isinstance(d, dict):
        raise ScenarioError([f"{where}: top level must be a mapping"])
    return scenario_from_dict(d)


def write_scenario(s: Scenario, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(s.raw, fh, sort_keys=False)


def bundled_scenarios() -> list[str]:
    files = resources.files("lassostl.scenarios")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))
