"""Solver-agnostic MILP instances and solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

CONTINUOUS = "continuous"
BINARY = "binary"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"
TIME_LIMIT = "time-limit"

SENSES = ("<=", "=", ">=")


@dataclass
class Variable:
    name: str
    lb: float
    ub: float
    kind: str = CONTINUOUS


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""


class MilpInstance:
    """Variables, linear rows and a linear objective (always minimized).

    ``metadata`` carries encoder-specific annotations (variable roles and
    literal definitions); solvers ignore it.
    """

    def __init__(self, name: str = "milp"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self.objective_constant = 0.0
        self.metadata: dict = {}
        self._by_name: dict[str, int] = {}

    # construction -----------------------------------------------------------
    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, kind: str = CONTINUOUS) -> int:
        if name in self._by_name:
            raise ValueError(f"duplicate variable name {name!r}")
        if kind == BINARY:
            lb, ub = max(0.0, lb), min(1.0, ub)
        self.variables.append(Variable(name, float(lb), float(ub), kind))
        self._by_name[name] = len(self.variables) - 1
        return len(self.variables) - 1

    def add_constraint(self, coeffs: Mapping[int, float], sense: str, rhs: float, name: str = "") -> int:
        if sense not in SENSES:
            raise ValueError(f"bad sense {sense!r}")
        clean = {}
        for j, v in coeffs.items():
            if not 0 <= j < len(self.variables):
                raise ValueError(f"constraint {name!r} references undeclared variable {j}")
            if v != 0.0:
                clean[int(j)] = clean.get(int(j), 0.0) + float(v)
        self.constraints.append(Constraint(clean, sense, float(rhs), name or f"c{len(self.constraints)}"))
        return len(self.constraints) - 1

    def set_objective(self, coeffs: Mapping[int, float], constant: float = 0.0) -> None:
        self.objective = {int(j): float(v) for j, v in coeffs.items() if v != 0.0}
        self.objective_constant = float(constant)

    # queries ----------------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def index(self, name: str) -> int:
        return self._by_name[name]

    def binaries(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.kind == BINARY]

    def arrays(self):
        """(c, A csr, row_lo, row_hi, lb, ub, is_binary)."""
        n = self.num_vars
        rows, cols, vals = [], [], []
        lo = np.empty(self.num_constraints)
        hi = np.empty(self.num_constraints)
        for i, con in enumerate(self.constraints):
            for j, v in con.coeffs.items():
                rows.append(i); cols.append(j); vals.append(v)
            lo[i] = con.rhs if con.sense in (">=", "=") else -np.inf
            hi[i] = con.rhs if con.sense in ("<=", "=") else np.inf
        A = sp.csr_matrix((vals, (rows, cols)), shape=(self.num_constraints, n))
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] = v
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        isbin = np.array([v.kind == BINARY for v in self.variables], dtype=bool)
        return c, A, lo, hi, lb, ub, isbin

    def objective_value(self, x) -> float:
        return self.objective_constant + sum(v * x[j] for j, v in self.objective.items())

    def violations(self, x, tol: float = 1e-7, int_tol: float = 1e-6) -> list[tuple[str, float]]:
        """(name, amount) for every bound, integrality or row violated beyond ``tol``."""
        out = []
        x = np.asarray(x, dtype=float)
        for j, v in enumerate(self.variables):
            if x[j] < v.lb - tol:
                out.append((f"bound:{v.name}", v.lb - x[j]))
            if x[j] > v.ub + tol:
                out.append((f"bound:{v.name}", x[j] - v.ub))
            if v.kind == BINARY and abs(x[j] - round(x[j])) > int_tol:
                out.append((f"integrality:{v.name}", abs(x[j] - round(x[j]))))
        for con in self.constraints:
            act = sum(v * x[j] for j, v in con.coeffs.items())
            if con.sense == "<=" and act > con.rhs + tol:
                out.append((con.name, act - con.rhs))
            elif con.sense == ">=" and act < con.rhs - tol:
                out.append((con.name, con.rhs - act))
            elif con.sense == "=" and abs(act - con.rhs) > tol:
                out.append((con.name, abs(act - con.rhs)))
        return out

    def is_feasible(self, x, tol: float = 1e-7, int_tol: float = 1e-6) -> bool:
        return not self.violations(x, tol, int_tol)

    def copy_structure(self) -> "MilpInstance":
        other = MilpInstance(self.name)
        for v in self.variables:
            other.add_var(v.name, v.lb, v.ub, v.kind)
        for c in self.constraints:
            other.add_constraint(dict(c.coeffs), c.sense, c.rhs, c.name)
        other.set_objective(self.objective, self.objective_constant)
        return other


@dataclass
class MilpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    nodes: int = 0
    wall_time: float = 0.0
    names: list[str] | None = None
    best_bound: float = -math.inf
    # per-node traces, filled by branch-and-bound
    incumbent_trace: list[float] = field(default_factory=list)
    bound_trace: list[float] = field(default_factory=list)
    row_duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    message: str = ""

    @property
    def has_solution(self) -> bool:
        return self.x is not None

    @property
    def assignment(self) -> dict[str, float]:
        if self.x is None or self.names is None:
            return {}
        return dict(zip(self.names, map(float, self.x)))
