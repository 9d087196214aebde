"""External-solver command backed by scipy's HiGHS interface.

    python -m lassostl.milp.highs_cmd problem.lp solution.sol [--time-limit S]

Reads an LP file, solves it and writes the plain solution format read by
``lassostl.milp.external``.  Useful as a drop-in ``{in} {out}`` command.
"""

from __future__ import annotations

import argparse
import shlex
import sys

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .lpfile import import_lp
from .model import BINARY


def default_command() -> str:
    return f"{shlex.quote(sys.executable)} -m lassostl.milp.highs_cmd {{in}} {{out}}"


def solve_file(lp_path: str, out_path: str, time_limit: float | None = None) -> str:
    inst = import_lp(lp_path)
    c, A, lo, hi, lb, ub, isbin = inst.arrays()
    opts = {"disp": False}
    if time_limit:
        opts["time_limit"] = float(time_limit)
    cons = [LinearConstraint(A, lo, hi)] if A.shape[0] else []
    res = milp(c, constraints=cons, bounds=Bounds(lb, ub), integrality=isbin.astype(int), options=opts)
    if res.x is None:
        word = "infeasible" if res.status == 2 else "time-limit"
        lines = [f"status {word}"]
    else:
        word = "optimal" if res.status == 0 else "feasible"
        lines = [f"status {word}"]
        x = np.asarray(res.x)
        for v, val in zip(inst.variables, x):
            if v.kind == BINARY:
                val = round(val)
            lines.append(f"{v.name} {float(val)!r}")
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return word


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lassostl-highs")
    ap.add_argument("lp")
    ap.add_argument("out")
    ap.add_argument("--time-limit", type=float, default=None)
    a = ap.parse_args(argv)
    print(solve_file(a.lp, a.out, a.time_limit))
    return 0


if __name__ == "__main__":
    sys.exit(main())
