"""Interaction graph, teams, local formulas and the rotating optimizer schedule.

Agents are numbered 1..M here, matching how cliques are written in scenario
files; the controller converts to 0-based indices at its boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

from . import stl


@dataclass(frozen=True)
class Task:
    clique: frozenset
    formula: object
    label: str = ""


@dataclass
class TaskSet:
    tasks: list[Task] = field(default_factory=list)

    @classmethod
    def from_pairs(cls, pairs) -> "TaskSet":
        return cls([Task(frozenset(c), f) for c, f in pairs])

    def agents(self) -> set[int]:
        return set().union(*[t.clique for t in self.tasks]) if self.tasks else set()

    def cliques(self) -> list[frozenset]:
        out = []
        for t in self.tasks:
            if t.clique not in out:
                out.append(t.clique)
        return out

    def formula(self):
        return stl.conj([t.formula for t in self.tasks])

    def validate(self, M: int) -> None:
        for t in self.tasks:
            if not t.clique:
                raise ValueError("empty clique")
            bad = [a for a in t.clique if not 1 <= a <= M]
            if bad:
                raise ValueError(f"clique {sorted(t.clique)} has agents outside 1..{M}")

    def padded(self) -> "TaskSet":
        fs = stl.pad_to_common_horizon([t.formula for t in self.tasks])
        return TaskSet([Task(t.clique, f, t.label) for t, f in zip(self.tasks, fs)])


@dataclass(frozen=True)
class InteractionGraph:
    nodes: tuple[int, ...]
    edges: frozenset  # of frozenset pairs

    def adjacent(self, i: int, j: int) -> bool:
        return frozenset((i, j)) in self.edges

    def neighbors(self, i: int) -> set[int]:
        return {j for e in self.edges if i in e for j in e if j != i}

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(tuple(sorted(e)) for e in self.edges)


def build_graph(tasks: TaskSet, M: int) -> InteractionGraph:
    tasks.validate(M)
    edges = set()
    for t in tasks.tasks:
        for i, j in combinations(sorted(t.clique), 2):
            edges.add(frozenset((i, j)))
    return InteractionGraph(tuple(range(1, M + 1)), frozenset(edges))


def teams(tasks: TaskSet, i: int) -> list[frozenset]:
    out = []
    for c in tasks.cliques():
        if i in c and len(c) >= 2:
            team = c - {i}
            if team not in out:
                out.append(team)
    return out


def local_formula(tasks: TaskSet, i: int):
    parts = [t.formula for t in tasks.tasks if i in t.clique]
    if not parts:
        raise ValueError(f"agent {i} appears in no task")
    return stl.conj(parts)


@dataclass(frozen=True)
class ScheduleState:
    v: int  # previous initializer v(t-1)


def next_schedule(state: ScheduleState, graph: InteractionGraph) -> tuple[int, list[int]]:
    """Advance the initializer and grow a greedy independent set from it."""
    M = len(graph.nodes)
    if M == 0:
        raise ValueError("empty graph")
    v = state.v % M + 1
    chosen = [v]
    for k in range(1, M):
        q = (v + k - 1) % M + 1
        if all(not graph.adjacent(q, p) for p in chosen):
            chosen.append(q)
    return v, chosen


def schedule_table(graph: InteractionGraph, steps: int, v0: int = 1) -> list[tuple[int, int, list[int]]]:
    """(t, v(t), O(t)) for t = 1..steps starting from v(0) = v0."""
    rows = []
    st = ScheduleState(v0)
    for t in range(1, steps + 1):
        v, O = next_schedule(st, graph)
        rows.append((t, v, O))
        st = ScheduleState(v)
    return rows
