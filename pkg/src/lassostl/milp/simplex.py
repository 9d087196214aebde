"""Bounded-variable dual simplex.

The LP ``min c^T x  s.t.  row_lo <= A x <= row_hi,  lb <= x <= ub`` is worked
in the form ``[A, -I] (x, r) = 0`` with one logical ``r_i`` per row carrying
the row bounds.  The all-logical basis is dual feasible once every nonbasic
structural sits at the bound its cost sign prefers, so no phase 1 is needed;
infinite bounds are replaced by a large finite box.  A child node in
branch-and-bound only changes bounds, so the parent's final basis stays dual
feasible and the solve resumes from it.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

BIG = 1e6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
CUTOFF = "cutoff"
ITERATION_LIMIT = "iteration-limit"


class DualSimplex:
    def __init__(self, c, A, row_lo, row_hi, lb, ub, feas_tol: float = 1e-7,
                 max_iter: int | None = None, refactor_every: int = 128):
        A = sp.csc_matrix(A, dtype=float)
        self.m, self.n = A.shape
        self.A = A
        self.AT = sp.csr_matrix(A.T)
        m, n = self.m, self.n
        self.cost = np.concatenate([np.asarray(c, dtype=float), np.zeros(m)])
        lo = np.concatenate([np.asarray(lb, dtype=float), np.asarray(row_lo, dtype=float)])
        hi = np.concatenate([np.asarray(ub, dtype=float), np.asarray(row_hi, dtype=float)])
        self.orig_lo = lo.copy()
        self.orig_hi = hi.copy()
        self.lo = np.where(np.isfinite(lo), lo, -BIG)
        self.hi = np.where(np.isfinite(hi), hi, BIG)
        self.feas_tol = feas_tol
        self.piv_tol = 1e-7
        self.dual_tol = 1e-9
        self.max_iter = max_iter or max(5000, 30 * (m + n))
        self.refactor_every = refactor_every
        self.iterations = 0
        self._retry_once = False
        self.reset_basis()

    # basis management ---------------------------------------------------------
    def reset_basis(self):
        m, n = self.m, self.n
        self.basis = np.arange(n, n + m)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[n:] = True
        self.at_upper = self.cost < 0
        self.Binv = -np.eye(m)
        self._since_refactor = 0

    def get_state(self):
        return self.basis.copy(), self.at_upper.copy()

    def set_state(self, state):
        basis, at_upper = state
        if not np.array_equal(basis, self.basis):
            self.basis = basis.copy()
            self.is_basic[:] = False
            self.is_basic[self.basis] = True
            self.refactor()
        self.at_upper = at_upper.copy()

    def set_bounds(self, j: int, lo: float, hi: float):
        self.lo[j] = lo if np.isfinite(lo) else -BIG
        self.hi[j] = hi if np.isfinite(hi) else BIG

    def column(self, j: int) -> np.ndarray:
        if j < self.n:
            col = np.zeros(self.m)
            s, e = self.A.indptr[j], self.A.indptr[j + 1]
            col[self.A.indices[s:e]] = self.A.data[s:e]
            return col
        col = np.zeros(self.m)
        col[j - self.n] = -1.0
        return col

    def refactor(self):
        if self.m == 0:
            self.Binv = np.zeros((0, 0))
            return
        B = np.column_stack([self.column(j) for j in self.basis])
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            # numerically singular basis: restart from the logical one
            self.reset_basis()
            return False
        self._since_refactor = 0
        return True

    # core quantities ---------------------------------------------------------------
    def nonbasic_values(self) -> np.ndarray:
        v = np.where(self.at_upper, self.hi, self.lo)
        v[self.is_basic] = 0.0
        return v

    def primal(self) -> np.ndarray:
        xhat = self.nonbasic_values()
        r = self.A @ xhat[: self.n] - xhat[self.n:]
        xhat[self.basis] = -(self.Binv @ r)
        return xhat

    def duals(self) -> np.ndarray:
        return self.cost[self.basis] @ self.Binv

    def reduced_costs(self, y=None) -> np.ndarray:
        if y is None:
            y = self.duals()
        d = np.empty(self.n + self.m)
        d[: self.n] = self.cost[: self.n] - self.A.T @ y
        d[self.n:] = y
        d[self.is_basic] = 0.0
        return d

    # main loop -------------------------------------------------------------------------
    def solve(self, cutoff: float = math.inf) -> str:
        m, n = self.m, self.n
        bland = False
        degenerate = 0
        fixed = self.hi - self.lo <= 1e-12
        start_iter = self.iterations
        banned = np.zeros(n + m, dtype=bool)  # tiny-pivot candidates skipped until the next pivot
        self._restore_dual_feasibility(fixed)
        while True:
            if self.iterations - start_iter > self.max_iter:
                self.x = self.primal()
                return ITERATION_LIMIT
            xhat = self.primal()
            if cutoff < math.inf and self.cost @ xhat >= cutoff:
                if self._fresh():
                    self.x = xhat
                    return CUTOFF
                continue
            if m == 0:
                self.x = xhat
                return OPTIMAL
            xb = xhat[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            below = lob - xb
            above = xb - hib
            viol = np.maximum(below, above)
            if bland:
                cands = np.flatnonzero(viol > self.feas_tol)
                if cands.size == 0:
                    if self._accurate(xhat):
                        self.x = xhat
                        return OPTIMAL
                    continue
                p = int(cands[np.argmin(self.basis[cands])])
            else:
                p = int(np.argmax(viol))
                if viol[p] <= self.feas_tol:
                    if self._accurate(xhat):
                        self.x = xhat
                        return OPTIMAL
                    continue
            to_lower = below[p] > 0
            rho = self.Binv[p]
            alpha = np.empty(n + m)
            alpha[:n] = self.AT @ rho
            alpha[n:] = -rho
            at = -alpha if to_lower else alpha
            d = self.reduced_costs()
            nb = ~self.is_basic & ~fixed & ~banned
            lower_ok = nb & ~self.at_upper & (at > self.piv_tol)
            upper_ok = nb & self.at_upper & (at < -self.piv_tol)
            cand = np.flatnonzero(lower_ok | upper_ok)
            if cand.size == 0:
                if banned.any():
                    banned[:] = False
                    self.refactor()
                    if self._since_refactor == 0 and not self._retry_once:
                        self._retry_once = True
                        continue
                # only trust an infeasibility certificate from a fresh inverse
                if self._fresh():
                    self.x = xhat
                    return INFEASIBLE
                continue
            dj = d[cand]
            aj = at[cand]
            dj = np.where(self.at_upper[cand], np.minimum(dj, 0.0), np.maximum(dj, 0.0))
            ratios = dj / aj
            if bland:
                best = ratios.min()
                ties = cand[ratios <= best + 1e-12]
                q = int(ties.min())
                theta = best
            else:
                bound = np.min((np.abs(dj) + self.dual_tol) / np.abs(aj))
                ok = ratios <= bound
                k = int(np.argmax(np.where(ok, np.abs(aj), -1.0)))
                q = int(cand[k])
                theta = ratios[k]
            w = self.Binv @ self.column(q)
            a_row = alpha[q]
            if abs(w[p]) < 1e-9 or abs(w[p] - a_row) > 1e-6 * (1.0 + abs(w[p])):
                # row and column disagree: refactor once, then trust the column
                if self._since_refactor > 0:
                    self.refactor()
                    continue
                if abs(w[p]) < 1e-7:
                    banned[q] = True
                    continue
            banned[:] = False
            self._retry_once = False
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > 3 * (m + n):
                    bland = True
            else:
                degenerate = 0
            self._pivot(p, q, to_lower, w)

    def _restore_dual_feasibility(self, fixed):
        # variables unfixed since the last solve may sit at the wrong bound;
        # every bound is finite (artificial box), so flipping always works
        d = self.reduced_costs()
        free = ~self.is_basic & ~fixed
        self.at_upper[free & (d < -self.dual_tol)] = True
        self.at_upper[free & (d > self.dual_tol)] = False

    def _fresh(self) -> bool:
        """True if the inverse was just factorized; otherwise refactor now."""
        if self._since_refactor == 0:
            return True
        self.refactor()
        return False

    def _accurate(self, xhat, tol: float = 1e-8) -> bool:
        """Residual check of A x - r = 0; refactors (and returns False) when it drifted."""
        n = self.n
        res = self.A @ xhat[:n] - xhat[n:]
        scale = 1.0 + np.max(np.abs(xhat))
        if np.max(np.abs(res), initial=0.0) <= tol * scale:
            return True
        return self._fresh()

    def _pivot(self, p: int, q: int, leave_to_lower: bool, w: np.ndarray):
        leaving = self.basis[p]
        piv = w[p]
        self.basis[p] = q
        self.is_basic[q] = True
        self.is_basic[leaving] = False
        self.at_upper[leaving] = not leave_to_lower
        self.iterations += 1
        self._since_refactor += 1
        if self._since_refactor >= self.refactor_every:
            self.refactor()
            return
        row = self.Binv[p] / piv
        w[p] = 0.0
        nz = np.flatnonzero(np.abs(w) > 1e-14)
        if nz.size:
            self.Binv[nz] -= w[nz, None] * row
        self.Binv[p] = row

    # results -------------------------------------------------------------------------------
    def objective(self) -> float:
        return float(self.cost @ self.x)

    def structural(self) -> np.ndarray:
        return self.x[: self.n].copy()

    def hits_artificial_box(self, tol: float = 1e-3) -> bool:
        x = self.x
        art_lo = ~np.isfinite(self.orig_lo) & (x <= -BIG + tol * BIG)
        art_hi = ~np.isfinite(self.orig_hi) & (x >= BIG - tol * BIG)
        return bool(np.any(art_lo | art_hi))
