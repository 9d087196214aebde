"""MILP data model, bundled branch-and-bound solver and LP-file adapters."""

from .model import (BINARY, CONTINUOUS, INFEASIBLE, ITERATION_LIMIT, OPTIMAL, TIME_LIMIT,
                    Constraint, MilpInstance, MilpSolution, Variable)
from .bnb import SolverCapacityError, solve_lp, solve_milp, tighten_bounds
from .lpfile import LPFormatError, export_lp, import_lp
from .external import ExternalSolverError, parse_solution_text, solve_external
