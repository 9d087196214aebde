"""File-based adapter for an external MILP solver.

The command template must contain ``{in}`` (LP file written by us) and
``{out}`` (solution file written by the solver).  Solution file format::

    status optimal
    x_0_0_t0 1.0
    z3 0
    ...

Status words: optimal, infeasible, iteration-limit, time-limit.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
import time

import numpy as np

from .lpfile import export_lp
from .model import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, TIME_LIMIT, MilpInstance, MilpSolution

ENV_VAR = "LASSOSTL_EXTERNAL_SOLVER"
_STATUS_WORDS = {
    "optimal": OPTIMAL, "infeasible": INFEASIBLE,
    "iteration-limit": ITERATION_LIMIT, "time-limit": TIME_LIMIT,
    "feasible": ITERATION_LIMIT,
}


class ExternalSolverError(RuntimeError):
    pass


def parse_solution_text(text: str) -> tuple[str, dict[str, float]]:
    status = None
    values: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ExternalSolverError(f"solution line {lineno}: expected 'name value', got {line!r}")
        key, val = parts
        if key == "status":
            word = val.lower()
            if word not in _STATUS_WORDS:
                raise ExternalSolverError(f"unknown status word {val!r}")
            status = _STATUS_WORDS[word]
            continue
        try:
            values[key] = float(val)
        except ValueError:
            raise ExternalSolverError(f"solution line {lineno}: bad value {val!r}") from None
    if status is None:
        raise ExternalSolverError("solution file has no status line")
    return status, values


def _is_auxiliary(inst: MilpInstance, name: str) -> bool:
    roles = inst.metadata.get("roles", {})
    return roles.get(name) in ("auxiliary", "literal")


def solve_external(inst: MilpInstance, command: str, workdir=None, timeout: float | None = None) -> MilpSolution:
    if "{in}" not in command or "{out}" not in command:
        raise ValueError("command template needs {in} and {out} placeholders")
    t0 = time.perf_counter()
    own_dir = workdir is None
    wd = tempfile.mkdtemp(prefix="lassostl-") if own_dir else str(workdir)
    os.makedirs(wd, exist_ok=True)
    lp_path = os.path.join(wd, f"{inst.name}.lp")
    sol_path = os.path.join(wd, f"{inst.name}.sol")
    if os.path.exists(sol_path):
        os.remove(sol_path)
    export_lp(inst, lp_path)
    cmd = command.replace("{in}", shlex.quote(lp_path)).replace("{out}", shlex.quote(sol_path))
    proc = subprocess.run(cmd, shell=True, capture_output=True, text=True, timeout=timeout)
    if proc.returncode != 0:
        raise ExternalSolverError(
            f"external solver exited with {proc.returncode}\nstdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
    if not os.path.exists(sol_path):
        raise ExternalSolverError(f"external solver wrote no solution file\nstdout:\n{proc.stdout}")
    with open(sol_path) as fh:
        status, values = parse_solution_text(fh.read())
    names = [v.name for v in inst.variables]
    wall = time.perf_counter() - t0
    if status == INFEASIBLE or not values:
        return MilpSolution(status, names=names, wall_time=wall)
    x = np.zeros(inst.num_vars)
    missing = []
    for j, nm in enumerate(names):
        if nm in values:
            x[j] = values[nm]
        elif not _is_auxiliary(inst, nm):
            missing.append(nm)
    if missing:
        raise ExternalSolverError(f"solution misses {len(missing)} non-auxiliary variables, e.g. {missing[:5]}")
    # snap binaries the solver returned within tolerance
    for j in inst.binaries():
        if abs(x[j] - round(x[j])) <= 1e-6:
            x[j] = round(x[j])
    return MilpSolution(status, x, inst.objective_value(x), 0, wall, names,
                        best_bound=-math.inf, message=proc.stdout[-2000:])
