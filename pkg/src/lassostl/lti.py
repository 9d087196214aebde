"""Linear agent dynamics, H-polytopes and one-step backward reachability."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import linprog

__all__ = [
    "Polytope", "AgentModel", "MasModel", "simulate_step", "polytope_contains",
    "pre_set", "c1_set", "find_loop_input", "fourier_motzkin",
]


@dataclass
class Polytope:
    """``{y : G y <= g}``.  Zero rows means the whole space."""

    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        if self.G.shape[0] != self.g.shape[0]:
            if self.g.shape[0] == 0 and self.G.size == 0:
                self.G = self.G.reshape(0, self.G.shape[-1] if self.G.ndim == 2 else 0)
            else:
                raise ValueError(f"G has {self.G.shape[0]} rows but g has {self.g.shape[0]} entries")

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "Polytope":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.size
        rows, rhs = [], []
        for i in range(n):
            if np.isfinite(hi[i]):
                r = np.zeros(n); r[i] = 1.0
                rows.append(r); rhs.append(hi[i])
            if np.isfinite(lo[i]):
                r = np.zeros(n); r[i] = -1.0
                rows.append(r); rhs.append(-lo[i])
        return cls(np.array(rows).reshape(len(rows), n), np.array(rhs))

    @classmethod
    def whole(cls, n: int) -> "Polytope":
        return cls(np.zeros((0, n)), np.zeros(0))

    @classmethod
    def point(cls, y: Sequence[float]) -> "Polytope":
        # halfspace form [I; -I] y <= (y, -y)
        y = np.asarray(y, dtype=float)
        n = y.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([y, -y]))

    def intersect(self, other: "Polytope") -> "Polytope":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return Polytope(np.vstack([self.G, other.G]), np.concatenate([self.g, other.g]))

    def contains(self, y, tol: float = 1e-9) -> bool:
        return polytope_contains(self, y, tol)

    def is_empty(self) -> bool:
        if self.G.shape[0] == 0:
            return False
        res = linprog(np.zeros(self.dim), A_ub=self.G, b_ub=self.g,
                      bounds=[(None, None)] * self.dim, method="highs")
        return res.status == 2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate interval hull read off axis-aligned rows (others ignored)."""
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for row, rhs in zip(self.G, self.g):
            nz = np.flatnonzero(row)
            if nz.size == 1:
                j = nz[0]
                if row[j] > 0:
                    hi[j] = min(hi[j], rhs / row[j])
                else:
                    lo[j] = max(lo[j], rhs / row[j])
        return lo, hi

    def general_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows that are not single-coordinate bounds."""
        mask = np.count_nonzero(self.G, axis=1) > 1
        return self.G[mask], self.g[mask]

    def support(self, direction) -> float:
        """max d^T y over the polytope (inf if unbounded, -inf if empty)."""
        d = np.asarray(direction, dtype=float)
        res = linprog(-d, A_ub=self.G if self.G.shape[0] else None,
                      b_ub=self.g if self.G.shape[0] else None,
                      bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 2:
            return -np.inf
        if res.status == 3:
            return np.inf
        return -res.fun

    def to_dict(self) -> dict:
        return {"G": self.G.tolist(), "g": self.g.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping, dim: int | None = None) -> "Polytope":
        if "box" in d:
            lo, hi = d["box"]
            lo = [(-np.inf if v is None else v) for v in lo]
            hi = [(np.inf if v is None else v) for v in hi]
            return cls.box(lo, hi)
        G = np.asarray(d["G"], dtype=float)
        if G.size == 0 and dim is not None:
            G = G.reshape(0, dim)
        return cls(G, d["g"])

    def product(self, other: "Polytope") -> "Polytope":
        G = np.zeros((self.G.shape[0] + other.G.shape[0], self.dim + other.dim))
        G[: self.G.shape[0], : self.dim] = self.G
        G[self.G.shape[0]:, self.dim:] = other.G
        return Polytope(G, np.concatenate([self.g, other.g]))


def polytope_contains(P: Polytope, y, tol: float = 1e-9) -> bool:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != P.dim:
        raise ValueError(f"point has dimension {y.size}, polytope {P.dim}")
    if P.G.shape[0] == 0:
        return True
    return bool(np.all(P.G @ y <= P.g + tol))


@dataclass
class AgentModel:
    A: np.ndarray
    B: np.ndarray
    state_set: Polytope
    input_set: Polytope
    signals: dict[str, int] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n, m = self.n, self.m
        if self.A.shape != (n, n) or self.B.shape[0] != n:
            raise ValueError(f"inconsistent dynamics shapes A{self.A.shape} B{self.B.shape}")
        if self.state_set.dim != n or self.input_set.dim != m:
            raise ValueError("state/input set dimensions do not match the dynamics")
        if self.state_set.is_empty() or self.input_set.is_empty():
            raise ValueError("state and input sets must be nonempty")
        for name, idx in self.signals.items():
            if not 0 <= idx < n:
                raise ValueError(f"signal {name!r} maps to state index {idx} outside 0..{n - 1}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return simulate_step(self, x, u)


class MasModel:
    """Dynamically decoupled agents stacked as ``x = (x_1, ..., x_M)``."""

    def __init__(self, agents: Sequence[AgentModel]):
        if not agents:
            raise ValueError("a multi-agent model needs at least one agent")
        self.agents = list(agents)
        self.state_offsets = np.cumsum([0] + [a.n for a in self.agents])
        self.input_offsets = np.cumsum([0] + [a.m for a in self.agents])
        self.A = block_diag(*[a.A for a in self.agents])
        self.B = block_diag(*[a.B for a in self.agents])
        sset = self.agents[0].state_set
        uset = self.agents[0].input_set
        for a in self.agents[1:]:
            sset = sset.product(a.state_set)
            uset = uset.product(a.input_set)
        self.state_set = sset
        self.input_set = uset
        table = {}
        for i, a in enumerate(self.agents):
            for name, idx in a.signals.items():
                if name in table:
                    raise ValueError(f"signal {name!r} declared by two agents")
                table[name] = int(self.state_offsets[i] + idx)
        self.signals = table

    @property
    def M(self) -> int:
        return len(self.agents)

    @property
    def n(self) -> int:
        return int(self.state_offsets[-1])

    @property
    def m(self) -> int:
        return int(self.input_offsets[-1])

    def state_slice(self, i: int) -> slice:
        return slice(int(self.state_offsets[i]), int(self.state_offsets[i + 1]))

    def input_slice(self, i: int) -> slice:
        return slice(int(self.input_offsets[i]), int(self.input_offsets[i + 1]))

    def signal_names(self) -> tuple[str, ...]:
        """Names for every aggregate state coordinate (unnamed ones get x<agent>_<dim>)."""
        names = [f"_x{i}_{d}" for i, a in enumerate(self.agents) for d in range(a.n)]
        for name, idx in self.signals.items():
            names[idx] = name
        return tuple(names)

    def agent_of_signal(self, name: str) -> int:
        idx = self.signals[name]
        return int(np.searchsorted(self.state_offsets, idx, side="right") - 1)

    def step(self, x, u) -> np.ndarray:
        return simulate_step(self, x, u)


def simulate_step(model, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != model.A.shape[1] or u.size != model.B.shape[1]:
        raise ValueError(f"state/input sizes {x.size}/{u.size} do not match model "
                         f"{model.A.shape[1]}/{model.B.shape[1]}")
    if isinstance(model, MasModel):
        # per-agent blocks keep the arithmetic identical to agent-level stepping
        out = np.empty(model.n)
        for i, a in enumerate(model.agents):
            out[model.state_slice(i)] = a.A @ x[model.state_slice(i)] + a.B @ u[model.input_slice(i)]
        return out
    return model.A @ x + model.B @ u


# --------------------------------------------------------------------------
# projection

def _normalize_rows(G, g):
    scale = np.max(np.abs(G), axis=1) if G.size else np.zeros(0)
    keep_zero = scale == 0
    if np.any(keep_zero & (g < -1e-12)):
        # 0 <= negative: infeasible; keep one witness row
        i = int(np.flatnonzero(keep_zero & (g < -1e-12))[0])
        return np.zeros((1, G.shape[1])), np.array([-1.0])
    G = G[~keep_zero]
    g = g[~keep_zero]
    s = scale[~keep_zero]
    G = G / s[:, None]
    g = g / s
    # exact duplicate removal (keep tightest rhs)
    order = np.lexsort(np.round(G, 12).T[::-1])
    G, g = G[order], g[order]
    out_G, out_g = [], []
    for row, rhs in zip(G, g):
        if out_G and np.allclose(row, out_G[-1], atol=1e-12):
            out_g[-1] = min(out_g[-1], rhs)
        else:
            out_G.append(row)
            out_g.append(rhs)
    if not out_G:
        return np.zeros((0, G.shape[1])), np.zeros(0)
    return np.array(out_G), np.array(out_g)


def _prune_redundant(G, g):
    """Drop rows implied by the others (LP test per row)."""
    keep = np.ones(G.shape[0], dtype=bool)
    for i in range(G.shape[0]):
        others = keep.copy()
        others[i] = False
        if not np.any(others):
            continue
        res = linprog(-G[i], A_ub=G[others], b_ub=g[others] , bounds=[(None, None)] * G.shape[1],
                      method="highs")
        if res.status == 2:
            # the other rows alone are infeasible; the set is empty
            return np.zeros((1, G.shape[1])), np.array([-1.0])
        if res.status == 0 and -res.fun <= g[i] + 1e-9:
            keep[i] = False
    return G[keep], g[keep]


def fourier_motzkin(G: np.ndarray, g: np.ndarray, eliminate: Sequence[int], prune: bool = True):
    """Project ``{z : G z <= g}`` by eliminating the coordinates ``eliminate``."""
    G = np.asarray(G, dtype=float)
    g = np.asarray(g, dtype=float)
    keep_cols = [j for j in range(G.shape[1]) if j not in set(eliminate)]
    cols = list(range(G.shape[1]))
    for j in sorted(eliminate, reverse=True):
        jj = cols.index(j)
        col = G[:, jj]
        pos = np.flatnonzero(col > 1e-12)
        neg = np.flatnonzero(col < -1e-12)
        zero = np.flatnonzero(np.abs(col) <= 1e-12)
        rows = [G[zero]]
        rhs = [g[zero]]
        if pos.size and neg.size:
            P = G[pos] / col[pos, None]
            p = g[pos] / col[pos]
            Nn = G[neg] / -col[neg, None]
            q = g[neg] / -col[neg]
            rows.append((P[:, None, :] + Nn[None, :, :]).reshape(-1, G.shape[1]))
            rhs.append((p[:, None] + q[None, :]).reshape(-1))
        G = np.delete(np.vstack(rows), jj, axis=1)
        g = np.concatenate(rhs)
        cols.pop(jj)
        G, g = _normalize_rows(G, g)
        if prune and G.shape[0]:
            G, g = _prune_redundant(G, g)
    assert cols == keep_cols
    return G, g


def pre_set(model, S: Polytope, max_dim: int = 12) -> Polytope:
    """States from which some admissible input lands in ``S`` in one step."""
    n, m = model.A.shape[0], model.B.shape[1]
    if S.dim != n:
        raise ValueError("target set dimension does not match the state dimension")
    if n + m > max_dim:
        raise ValueError(f"projection guard: n + m = {n + m} exceeds {max_dim}")
    GU, gU = model.input_set.G, model.input_set.g
    G = np.vstack([np.hstack([S.G @ model.A, S.G @ model.B]),
                   np.hstack([np.zeros((GU.shape[0], n)), GU])])
    g = np.concatenate([S.g, gU])
    if G.shape[0] == 0:
        return Polytope.whole(n)
    Gp, gp = fourier_motzkin(G, g, list(range(n, n + m)))
    return Polytope(Gp.reshape(-1, n), gp)


def c1_set(model, target_state, max_dim: int = 12) -> Polytope:
    """One-step controllable set of the singleton ``{target_state}``."""
    pre = pre_set(model, Polytope.point(target_state), max_dim)
    return pre.intersect(model.state_set)


def find_loop_input(model, x_from, x_to, tol: float = 1e-6):
    """Admissible ``u`` with ``||A x_from + B u - x_to||_inf <= tol``, else None."""
    A, B = model.A, model.B
    x_from = np.asarray(x_from, dtype=float).reshape(-1)
    x_to = np.asarray(x_to, dtype=float).reshape(-1)
    n, m = B.shape
    r = x_to - A @ x_from
    # variables (u, s): minimize s, -s <= B u - r <= s, G_U u <= g_U
    c = np.zeros(m + 1); c[-1] = 1.0
    A_ub = np.vstack([np.hstack([B, -np.ones((n, 1))]),
                      np.hstack([-B, -np.ones((n, 1))])])
    b_ub = np.concatenate([r, -r])
    GU, gU = model.input_set.G, model.input_set.g
    if GU.shape[0]:
        A_ub = np.vstack([A_ub, np.hstack([GU, np.zeros((GU.shape[0], 1))])])
        b_ub = np.concatenate([b_ub, gU])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * m + [(0, None)], method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"loop-input LP failed: {res.message}")
    if res.x[-1] > tol:
        return None
    return res.x[:m]
