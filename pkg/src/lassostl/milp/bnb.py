"""LP-based branch-and-bound over the dual simplex."""

from __future__ import annotations

import heapq
import math
import time

import numpy as np
import scipy.sparse as sp

from . import simplex
from .model import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, TIME_LIMIT, MilpInstance, MilpSolution

MAX_VARS = 50_000
MAX_BINARIES = 5_000


class SolverCapacityError(RuntimeError):
    pass


def tighten_bounds(A, row_lo, row_hi, lb, ub, isbin, passes: int = 20, tol: float = 1e-9):
    """Activity-based bound propagation.  Returns (lb, ub, feasible)."""
    A = sp.csr_matrix(A)
    lb = lb.astype(float).copy()
    ub = ub.astype(float).copy()
    for _ in range(passes):
        changed = False
        for i in range(A.shape[0]):
            s, e = A.indptr[i], A.indptr[i + 1]
            if s == e:
                continue
            cols = A.indices[s:e]
            a = A.data[s:e]
            lo_c = np.where(a > 0, a * lb[cols], a * ub[cols])
            hi_c = np.where(a > 0, a * ub[cols], a * lb[cols])
            lo_inf = ~np.isfinite(lo_c)
            hi_inf = ~np.isfinite(hi_c)
            lo_sum = lo_c[~lo_inf].sum()
            hi_sum = hi_c[~hi_inf].sum()
            n_lo_inf, n_hi_inf = int(lo_inf.sum()), int(hi_inf.sum())
            for k, j in enumerate(cols):
                # activity of the rest of the row
                if n_lo_inf - lo_inf[k] == 0:
                    rest_min = lo_sum - (0.0 if lo_inf[k] else lo_c[k])
                else:
                    rest_min = -math.inf
                if n_hi_inf - hi_inf[k] == 0:
                    rest_max = hi_sum - (0.0 if hi_inf[k] else hi_c[k])
                else:
                    rest_max = math.inf
                ak = a[k]
                new_lo, new_hi = -math.inf, math.inf
                if np.isfinite(row_hi[i]) and np.isfinite(rest_min):
                    b = (row_hi[i] - rest_min) / ak
                    if ak > 0:
                        new_hi = b
                    else:
                        new_lo = b
                if np.isfinite(row_lo[i]) and np.isfinite(rest_max):
                    b = (row_lo[i] - rest_max) / ak
                    if ak > 0:
                        new_lo = max(new_lo, b)
                    else:
                        new_hi = min(new_hi, b)
                if isbin[j]:
                    new_hi = 0.0 if new_hi < 1 - 1e-6 else math.inf
                    new_lo = 1.0 if new_lo > 1e-6 else -math.inf
                else:
                    new_hi += 1e-7 * (1 + abs(new_hi)) if np.isfinite(new_hi) else 0.0
                    new_lo -= 1e-7 * (1 + abs(new_lo)) if np.isfinite(new_lo) else 0.0
                if new_hi < ub[j] - 1e-6 * (1 + abs(ub[j]) if np.isfinite(ub[j]) else 1):
                    ub[j] = new_hi
                    changed = True
                if new_lo > lb[j] + 1e-6 * (1 + abs(lb[j]) if np.isfinite(lb[j]) else 1):
                    lb[j] = new_lo
                    changed = True
                if lb[j] > ub[j] + tol + 1e-7 * (1 + abs(ub[j])):
                    return lb, ub, False
                if lb[j] > ub[j]:
                    lb[j] = ub[j] = 0.5 * (lb[j] + ub[j])
            if changed:
                # refresh sums lazily on the next pass
                pass
        if not changed:
            break
    return lb, ub, True


def _check_capacity(inst: MilpInstance, force: bool):
    if force:
        return
    nb = len(inst.binaries())
    if inst.num_vars > MAX_VARS or nb > MAX_BINARIES:
        raise SolverCapacityError(
            f"instance has {inst.num_vars} variables / {nb} binaries; "
            f"limits are {MAX_VARS} / {MAX_BINARIES} (pass force=True to override)")


def solve_lp(inst: MilpInstance, force: bool = False) -> MilpSolution:
    """LP relaxation (integrality dropped)."""
    _check_capacity(inst, force)
    t0 = time.perf_counter()
    c, A, lo, hi, lb, ub, _ = inst.arrays()
    names = [v.name for v in inst.variables]
    if np.any(lb > ub) or np.any(lo > hi):
        return MilpSolution(INFEASIBLE, names=names, wall_time=time.perf_counter() - t0)
    lp = simplex.DualSimplex(c, A, lo, hi, lb, ub)
    st = lp.solve()
    wall = time.perf_counter() - t0
    if st == simplex.OPTIMAL:
        if lp.hits_artificial_box():
            return MilpSolution(INFEASIBLE, names=names, wall_time=wall, message="unbounded")
        x = lp.structural()
        obj = inst.objective_value(x)
        y = lp.duals()
        return MilpSolution(OPTIMAL, x, obj, 0, wall, names, best_bound=obj,
                            row_duals=y, reduced_costs=lp.reduced_costs(y)[: inst.num_vars])
    if st == simplex.INFEASIBLE:
        return MilpSolution(INFEASIBLE, names=names, wall_time=wall)
    return MilpSolution(ITERATION_LIMIT, names=names, wall_time=wall)


def solve_milp(inst: MilpInstance, incumbent=None, node_limit: int = 100_000,
               time_limit: float = math.inf, branching: str = "most-fractional",
               gap_tol: float = 1e-6, int_tol: float = 1e-6, force: bool = False,
               presolve: bool = True) -> MilpSolution:
    """Exact branch-and-bound.  ``incumbent`` (a full assignment vector) is
    used as the starting upper bound when it is feasible.

    ``branching``: "most-fractional", "first-fractional", or "priority"
    (highest ``inst.metadata["levels"]`` first, ties by fractionality)."""
    _check_capacity(inst, force)
    t0 = time.perf_counter()
    c, A, rlo, rhi, lb0, ub0, isbin = inst.arrays()
    names = [v.name for v in inst.variables]
    n = inst.num_vars
    inc_x, inc_obj = None, math.inf
    if incumbent is not None:
        x = np.asarray(incumbent, dtype=float)
        if x.shape == (n,) and inst.is_feasible(x, tol=1e-6):
            inc_x, inc_obj = x.copy(), float(c @ x)
    bins = np.flatnonzero(isbin)
    if branching not in ("most-fractional", "first-fractional", "priority"):
        raise ValueError(f"unknown branching rule {branching!r}")
    prio = np.zeros(n)
    if branching == "priority":
        for j, lev in inst.metadata.get("levels", {}).items():
            prio[j] = lev

    def finish(status, nodes, inc_tr, bnd_tr, bound, msg=""):
        sol = MilpSolution(status, inc_x, math.nan if inc_x is None else inst.objective_value(inc_x),
                           nodes, time.perf_counter() - t0, names,
                           best_bound=bound + inst.objective_constant,
                           incumbent_trace=[v + inst.objective_constant for v in inc_tr],
                           bound_trace=[v + inst.objective_constant for v in bnd_tr], message=msg)
        return sol

    if np.any(lb0 > ub0) or np.any(rlo > rhi):
        return finish(INFEASIBLE, 0, [], [], math.inf)
    lb, ub = lb0, ub0
    if presolve:
        lb, ub, ok = tighten_bounds(A, rlo, rhi, lb0, ub0, isbin)
        if not ok:
            if inc_x is not None:
                return finish(OPTIMAL, 0, [inc_obj], [inc_obj], inc_obj)
            return finish(INFEASIBLE, 0, [], [], math.inf)
    lp = simplex.DualSimplex(c, A, rlo, rhi, lb, ub)
    lp.stale = False
    root_lb = lp.lo[:n].copy()
    root_ub = lp.hi[:n].copy()

    def load(node_lb, node_ub, state):
        lp.lo[:n] = node_lb
        lp.hi[:n] = node_ub
        # the current basis stays dual feasible under bound changes, so it is
        # kept; stored states are only used when the last solve failed
        if state is not None and lp.stale:
            lp.set_state(state)
            lp.stale = False

    # open nodes: heap of (bound, seq, lb, ub, basis state)
    heap: list = []
    seq = 0
    nodes = 0
    inc_tr: list[float] = []
    bnd_tr: list[float] = []
    best_bound = -math.inf
    exhausted = True
    status_msg = ""
    current = (-math.inf, root_lb, root_ub, None)
    while current is not None:
        bound_in, node_lb, node_ub, state = current
        current = None
        if time.perf_counter() - t0 > time_limit:
            heapq.heappush(heap, (bound_in, seq, node_lb, node_ub, state)); seq += 1
            exhausted = False
            status_msg = TIME_LIMIT
            break
        if nodes >= node_limit:
            heapq.heappush(heap, (bound_in, seq, node_lb, node_ub, state)); seq += 1
            exhausted = False
            status_msg = ITERATION_LIMIT
            break
        nodes += 1
        load(node_lb, node_ub, state)
        cutoff = inc_obj - gap_tol * max(1.0, abs(inc_obj)) if inc_x is not None else math.inf
        if bound_in >= cutoff:
            st = simplex.CUTOFF
        else:
            st = lp.solve(cutoff=cutoff)
        children = None
        if st == simplex.ITERATION_LIMIT:
            lp.stale = True
            exhausted = False
            status_msg = ITERATION_LIMIT
        elif st == simplex.OPTIMAL:
            x = lp.structural()
            obj = float(c @ x)
            frac = np.abs(x[bins] - np.round(x[bins]))
            fractional = bins[frac > int_tol]
            if fractional.size == 0:
                cand = _polish(lp, x, bins, n)
                if cand is not None and inst.is_feasible(cand, tol=1e-6):
                    cobj = float(c @ cand)
                    if cobj < inc_obj:
                        inc_x, inc_obj = cand, cobj
                        if heap:
                            # drop dominated nodes
                            cut = inc_obj - gap_tol * max(1.0, abs(inc_obj))
                            heap = [h for h in heap if h[0] < cut]
                            heapq.heapify(heap)
                else:
                    # the point leaned on near-integral slack; keep branching
                    fractional = bins[frac > 0.0]
                    if fractional.size == 0 and inst.is_feasible(x, tol=1e-6) and obj < inc_obj:
                        inc_x, inc_obj = x.copy(), obj
            if fractional.size:
                if branching == "first-fractional":
                    j = int(fractional[0])
                elif branching == "priority":
                    top = fractional[prio[fractional] == prio[fractional].max()]
                    fk = np.abs(x[top] - np.round(x[top]))
                    j = int(top[np.argmax(fk)])
                else:
                    fk = np.abs(x[fractional] - np.round(x[fractional]))
                    j = int(fractional[np.argmax(fk)])
                st_after = lp.get_state()
                down_ub = node_ub.copy(); down_ub[j] = 0.0
                up_lb = node_lb.copy(); up_lb[j] = 1.0
                down = (obj, node_lb, down_ub, st_after)
                up = (obj, up_lb, node_ub, st_after)
                children = (up, down) if x[j] >= 0.5 else (down, up)
        if children is not None:
            first, second = children
            heapq.heappush(heap, (second[0], seq, second[1], second[2], second[3])); seq += 1
            current = first
        elif heap:
            if inc_x is None:
                # no incumbent yet: keep diving from the most recent open node
                k = max(range(len(heap)), key=lambda h: heap[h][1])
                b, _, hl, hu, hs = heap[k]
                heap[k] = heap[-1]
                heap.pop()
                heapq.heapify(heap)
            else:
                b, _, hl, hu, hs = heapq.heappop(heap)
            current = (b, hl, hu, hs)
        # global lower bound over the open tree
        open_min = min([h[0] for h in heap[:1]] + ([current[0]] if current is not None else []),
                       default=math.inf)
        glb = min(open_min, inc_obj)
        if current is None and not heap and exhausted:
            glb = inc_obj
        best_bound = max(best_bound, glb)
        inc_tr.append(inc_obj)
        bnd_tr.append(best_bound)
    if exhausted and not heap:
        if inc_x is None:
            return finish(INFEASIBLE, nodes, inc_tr, bnd_tr, math.inf)
        return finish(OPTIMAL, nodes, inc_tr, bnd_tr, inc_obj)
    return finish(status_msg or ITERATION_LIMIT, nodes, inc_tr, bnd_tr, best_bound)


def _polish(lp: simplex.DualSimplex, x, bins, n):
    """Fix binaries at their rounded values and re-solve so the returned
    point is exactly integral."""
    saved_lo = lp.lo[bins].copy()
    saved_hi = lp.hi[bins].copy()
    state = lp.get_state()
    r = np.round(x[bins])
    lp.lo[bins] = r
    lp.hi[bins] = r
    st = lp.solve()
    out = None
    if st == simplex.OPTIMAL:
        out = lp.structural()
        out[bins] = r
    lp.lo[bins] = saved_lo
    lp.hi[bins] = saved_hi
    lp.set_state(state)
    return out
