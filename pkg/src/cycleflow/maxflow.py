"""Edmonds-Karp maximum flow on oriented graphs with two-way arc capacities.

Arc ``k = (t, h)`` may carry up to ``capacity[k]`` from ``t`` to ``h`` and up
to ``reverse_capacity[k]`` from ``h`` to ``t``.  Both directions share one
residual edge pair, so the returned arc flow is signed along the arc's
orientation.  Several sources and sinks are joined to a super-source and a
super-sink.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np

from .graph import OrientedGraph, build_incidence

if TYPE_CHECKING:
    from .reduction import FlowProblem

__all__ = ["MaxFlowResult", "max_flow", "cut_capacity", "check_capacity_feasibility"]


@dataclass(frozen=True)
class MaxFlowResult:
    value: float
    flows: np.ndarray
    source_side: frozenset
    cut_value: float

    @property
    def certified(self) -> bool:
        return np.isclose(self.value, self.cut_value, rtol=1e-12, atol=1e-9)


def cut_capacity(
    g: OrientedGraph,
    side: Iterable[int],
    capacity: Sequence[float],
    reverse_capacity: Optional[Sequence[float]] = None,
) -> float:
    """Capacity of the arcs leaving node set ``side``."""
    side = set(side)
    rev = capacity if reverse_capacity is None else reverse_capacity
    total = 0.0
    for k, (t, h) in enumerate(g.arcs):
        if t in side and h not in side:
            total += capacity[k]
        elif h in side and t not in side:
            total += rev[k]
    return total


class _Residual:
    def __init__(self, size: int):
        self.adj: list[list[int]] = [[] for _ in range(size)]
        self.to: list[int] = []
        self.cap: list[float] = []

    def add_pair(self, u: int, v: int, cap_uv: float, cap_vu: float) -> int:
        e = len(self.to)
        self.to += [v, u]
        self.cap += [cap_uv, cap_vu]
        self.adj[u].append(e)
        self.adj[v].append(e + 1)
        return e

    def augment(self, s: int, t: int, tol: float) -> float:
        """One shortest augmenting path (BFS); returns the pushed amount."""
        pred = [-1] * len(self.adj)
        pred[s] = -2
        queue = deque([s])
        while queue and pred[t] == -1:
            u = queue.popleft()
            for e in self.adj[u]:
                v = self.to[e]
                if pred[v] == -1 and self.cap[e] > tol:
                    pred[v] = e
                    queue.append(v)
        if pred[t] == -1:
            return 0.0
        push = np.inf
        v = t
        while v != s:
            e = pred[v]
            push = min(push, self.cap[e])
            v = self.to[e ^ 1]
        v = t
        while v != s:
            e = pred[v]
            self.cap[e] -= push
            self.cap[e ^ 1] += push
            v = self.to[e ^ 1]
        return push

    def reachable(self, s: int, tol: float) -> set:
        seen = {s}
        stack = [s]
        while stack:
            u = stack.pop()
            for e in self.adj[u]:
                v = self.to[e]
                if v not in seen and self.cap[e] > tol:
                    seen.add(v)
                    stack.append(v)
        return seen


def max_flow(
    g: OrientedGraph,
    sources: Iterable[int],
    sinks: Iterable[int],
    capacity: Sequence[float],
    reverse_capacity: Optional[Sequence[float]] = None,
    source_limits: Optional[dict] = None,
    sink_limits: Optional[dict] = None,
) -> MaxFlowResult:
    """Maximum flow from ``sources`` to ``sinks`` (Edmonds-Karp, O(nm^2)).

    ``reverse_capacity`` defaults to ``capacity`` (symmetric arcs).
    ``source_limits`` / ``sink_limits`` optionally cap how much each
    terminal may inject or absorb; otherwise terminals are unbounded.
    The minimum cut found from the final residual graph is returned with
    the flow, so ``result.certified`` checks max-flow = min-cut.
    """
    sources, sinks = sorted(set(sources)), sorted(set(sinks))
    if set(sources) & set(sinks):
        raise ValueError("a node cannot be both source and sink")
    cap = [float(c) for c in capacity]
    rev = cap if reverse_capacity is None else [float(c) for c in reverse_capacity]
    if len(cap) != g.m or len(rev) != g.m:
        raise ValueError(f"need {g.m} capacities")
    if min(cap + rev, default=0.0) < 0:
        raise ValueError("capacities must be nonnegative")

    limits = list((source_limits or {}).values()) + list((sink_limits or {}).values())
    big = sum(c for c in cap + rev + limits if np.isfinite(c)) + 1.0
    cap = [min(c, big) for c in cap]
    rev = [min(c, big) for c in rev]
    S, T = g.n, g.n + 1
    res = _Residual(g.n + 2)
    first = [res.add_pair(t, h, cap[k], rev[k]) for k, (t, h) in enumerate(g.arcs)]
    for s in sources:
        res.add_pair(S, s, (source_limits or {}).get(s, big), 0.0)
    for t in sinks:
        res.add_pair(t, T, (sink_limits or {}).get(t, big), 0.0)

    tol = 1e-12 * big
    value = 0.0
    while True:
        pushed = res.augment(S, T, tol)
        if pushed <= 0:
            break
        value += pushed
    flows = np.array([cap[k] - res.cap[first[k]] for k in range(g.m)])
    side = res.reachable(S, tol)
    cut = 0.0
    for u in side:
        for e in res.adj[u]:
            if res.to[e] not in side:
                cut += _original_cap(e, cap, rev, res, g.m)
    return MaxFlowResult(value, flows, frozenset(v for v in side if v < g.n), cut)


def _original_cap(e, cap, rev, res, m):
    # first 2m residual edges mirror arcs; the rest are terminal edges whose
    # reverse twin starts at zero
    if e < 2 * m:
        return cap[e // 2] if e % 2 == 0 else rev[e // 2]
    if e % 2 == 0:
        return res.cap[e] + res.cap[e + 1]
    return 0.0


def check_capacity_feasibility(problem: "FlowProblem", tol: float = 1e-9) -> bool:
    """True iff the injections can be routed inside the capacity box.

    Shifting ``x = lower + x'`` turns the box into one-way capacities
    ``0 <= x' <= upper - lower`` and the injections into
    ``f - I lower``; the box is feasible exactly when a maximum flow
    saturates every shifted supply.
    """
    g = problem.graph
    lower = np.asarray(problem.lower, dtype=float)
    upper = np.asarray(problem.upper, dtype=float)
    supply = np.asarray(problem.injections, dtype=float) - build_incidence(g) @ lower
    need = float(np.sum(supply[supply > 0]))
    if need <= tol:
        return True
    sources = [i for i in range(g.n) if supply[i] > tol]
    sinks = [i for i in range(g.n) if supply[i] < -tol]
    res = max_flow(
        g,
        sources,
        sinks,
        upper - lower,
        np.zeros(g.m),
        source_limits={i: supply[i] for i in sources},
        sink_limits={i: -supply[i] for i in sinks},
    )
    return res.value >= need - tol * max(1.0, need)
