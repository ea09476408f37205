"""Oriented physical-layer graphs.

Nodes are dense zero-based integers ``0..n-1`` and arcs are dense zero-based
integers ``0..m-1`` in file order.  An arc's orientation only fixes the sign
convention of its flow; every traversal here treats the graph as undirected
and records whether an arc was walked along (+1) or against (-1) its
orientation.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GraphError, InvalidTree, NotConnected

__all__ = [
    "OrientedGraph",
    "SpanningTree",
    "ShortestPathTree",
    "build_incidence",
    "is_connected",
    "is_biconnected",
    "spanning_tree",
    "tree_from_arcs",
    "shortest_path",
    "shortest_path_tree",
]


@dataclass(frozen=True)
class OrientedGraph:
    """Node count plus an ordered list of ``(tail, head)`` arcs.

    Parallel arcs with the same orientation are accepted; a pair of arcs
    ``(u, v)`` and ``(v, u)`` is not.
    """

    n: int
    arcs: tuple[tuple[int, int], ...]
    weights: tuple[float, ...] = ()
    _incident: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arcs = tuple((int(t), int(h)) for t, h in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        weights = tuple(float(w) for w in self.weights) if self.weights else (1.0,) * len(arcs)
        if len(weights) != len(arcs):
            raise GraphError(f"{len(weights)} weights for {len(arcs)} arcs")
        if any(w < 0 for w in weights):
            raise GraphError("arc weights must be nonnegative")
        object.__setattr__(self, "weights", weights)

        seen = set()
        incident: list[list[tuple[int, int, int]]] = [[] for _ in range(self.n)]
        for k, (t, h) in enumerate(arcs):
            if not (0 <= t < self.n and 0 <= h < self.n):
                raise GraphError(f"arc {k + 1} ({t + 1}, {h + 1}) references a missing node")
            if t == h:
                raise GraphError(f"arc {k + 1} is a self-loop at node {t + 1}")
            if (h, t) in seen:
                raise GraphError(f"arc {k + 1} ({t + 1}, {h + 1}) has a symmetric twin")
            seen.add((t, h))
            incident[t].append((k, h, 1))
            incident[h].append((k, t, -1))
        object.__setattr__(self, "_incident", tuple(tuple(a) for a in incident))

    @property
    def m(self) -> int:
        return len(self.arcs)

    @property
    def mu(self) -> int:
        """Cycle-space dimension ``m - n + 1`` (meaningful when connected)."""
        return self.m - self.n + 1

    def incident(self, node: int) -> tuple[tuple[int, int, int], ...]:
        """``(arc, other_node, direction)`` triples in ascending arc order.

        ``direction`` is +1 when leaving ``node`` along the arc follows its
        orientation.
        """
        return self._incident[node]

    def with_weights(self, weights: Sequence[float]) -> "OrientedGraph":
        return OrientedGraph(self.n, self.arcs, tuple(weights))


def build_incidence(g: OrientedGraph) -> np.ndarray:
    """Oriented incidence matrix: +1 at each arc's tail row, -1 at its head."""
    inc = np.zeros((g.n, g.m), dtype=np.int64)
    for k, (t, h) in enumerate(g.arcs):
        inc[t, k] = 1
        inc[h, k] = -1
    return inc


def _reachable(g: OrientedGraph, root: int) -> list[bool]:
    seen = [False] * g.n
    seen[root] = True
    stack = [root]
    while stack:
        u = stack.pop()
        for _, v, _ in g.incident(u):
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return seen


def is_connected(g: OrientedGraph) -> bool:
    return all(_reachable(g, 0))


def is_biconnected(g: OrientedGraph) -> bool:
    """Connected with no articulation node.

    Two nodes joined by an arc count as biconnected, as in networkx.
    """
    if g.n < 2 or not is_connected(g):
        return False
    disc = [-1] * g.n
    low = [0] * g.n
    timer = 0
    # iterative DFS from node 0 with lowpoints; parent arc is skipped by id
    disc[0] = low[0] = timer
    root_children = 0
    stack = [(0, -1, iter(g.incident(0)))]
    while stack:
        u, via, it = stack[-1]
        advanced = False
        for k, v, _ in it:
            if k == via:
                continue
            if disc[v] < 0:
                timer += 1
                disc[v] = low[v] = timer
                stack.append((v, k, iter(g.incident(v))))
                advanced = True
                break
            low[u] = min(low[u], disc[v])
        if advanced:
            continue
        stack.pop()
        if stack:
            p = stack[-1][0]
            low[p] = min(low[p], low[u])
            if p == 0:
                root_children += 1
            elif low[u] >= disc[p]:
                return False
    return root_children <= 1


@dataclass(frozen=True)
class SpanningTree:
    """Rooted spanning tree stored as parent pointers.

    ``parent_arc[v]`` is the tree arc joining ``v`` to ``parent[v]``; both are
    -1 at the root.
    """

    root: int
    parent: tuple[int, ...]
    parent_arc: tuple[int, ...]
    depth: tuple[int, ...]

    @property
    def arcs(self) -> frozenset[int]:
        return frozenset(a for a in self.parent_arc if a >= 0)

    def path_to_root(self, g: OrientedGraph, node: int) -> list[tuple[int, int]]:
        """Arcs walked from ``node`` up to the root, with traversal signs."""
        path = []
        while node != self.root:
            a = self.parent_arc[node]
            path.append((a, 1 if g.arcs[a][0] == node else -1))
            node = self.parent[node]
        return path


def spanning_tree(g: OrientedGraph, root: int = 0) -> SpanningTree:
    """Breadth-first spanning tree; arcs are scanned in ascending id order."""
    parent = [-1] * g.n
    parent_arc = [-1] * g.n
    depth = [-1] * g.n
    depth[root] = 0
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for k, v, _ in g.incident(u):
            if depth[v] < 0:
                depth[v] = depth[u] + 1
                parent[v] = u
                parent_arc[v] = k
                queue.append(v)
    if min(depth) < 0:
        raise NotConnected(f"node {depth.index(-1) + 1} is unreachable from node {root + 1}")
    return SpanningTree(root, tuple(parent), tuple(parent_arc), tuple(depth))


def tree_from_arcs(g: OrientedGraph, arcs, root: int = 0) -> SpanningTree:
    """Root a given set of ``n - 1`` arcs at ``root``.

    Raises
    ------
    InvalidTree
        If the arcs do not form a spanning tree of ``g``.
    """
    arcs = sorted({int(a) for a in arcs})
    if len(arcs) != g.n - 1 or any(not 0 <= a < g.m for a in arcs):
        raise InvalidTree(f"a spanning tree has {g.n - 1} arcs of the graph")
    sub = OrientedGraph(g.n, tuple(g.arcs[a] for a in arcs))
    try:
        local = spanning_tree(sub, root)
    except NotConnected:
        raise InvalidTree("arcs do not connect every node") from None
    parent_arc = tuple(arcs[a] if a >= 0 else -1 for a in local.parent_arc)
    return SpanningTree(root, local.parent, parent_arc, local.depth)


@dataclass(frozen=True)
class ShortestPathTree:
    root: int
    dist: tuple[float, ...]
    parent: tuple[int, ...]
    parent_arc: tuple[int, ...]

    def path_from(self, g: OrientedGraph, node: int) -> list[tuple[int, int]]:
        """Walk from ``node`` to the root; each step is ``(arc, sign)``."""
        if self.dist[node] == np.inf:
            raise NotConnected(f"node {node + 1} cannot reach node {self.root + 1}")
        path = []
        while node != self.root:
            a = self.parent_arc[node]
            path.append((a, 1 if g.arcs[a][0] == node else -1))
            node = self.parent[node]
        return path

    def path_to(self, g: OrientedGraph, node: int) -> list[tuple[int, int]]:
        """Walk from the root to ``node``."""
        return [(a, -s) for a, s in reversed(self.path_from(g, node))]


def shortest_path_tree(
    g: OrientedGraph, root: int, weights: Optional[Sequence[float]] = None
) -> ShortestPathTree:
    """Dijkstra from ``root`` ignoring arc orientation.

    The heap is keyed on ``(distance, node)`` and a node's parent only changes
    on a strict improvement, so among equally short routes the one through
    the earliest settled node wins.
    """
    w = g.weights if weights is None else tuple(float(x) for x in weights)
    if len(w) != g.m:
        raise GraphError(f"{len(w)} weights for {g.m} arcs")
    if any(x < 0 for x in w):
        raise GraphError("Dijkstra needs nonnegative weights")
    dist = [np.inf] * g.n
    parent = [-1] * g.n
    parent_arc = [-1] * g.n
    done = [False] * g.n
    dist[root] = 0.0
    heap = [(0.0, root)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for k, v, _ in g.incident(u):
            nd = d + w[k]
            if not done[v] and nd < dist[v]:
                dist[v] = nd
                parent[v] = u
                parent_arc[v] = k
                heapq.heappush(heap, (nd, v))
    return ShortestPathTree(root, tuple(dist), tuple(parent), tuple(parent_arc))


def shortest_path(
    g: OrientedGraph, src: int, dst: int, weights: Optional[Sequence[float]] = None
) -> list[tuple[int, int]]:
    """Minimum-weight arc sequence from ``src`` to ``dst``.

    Returns ``[(arc, sign), ...]`` in walking order, ``sign`` being +1 when
    the arc is walked tail to head.

    Raises
    ------
    NotConnected
        If ``dst`` is unreachable from ``src``.
    """
    tree = shortest_path_tree(g, src, weights)
    return tree.path_to(g, dst)
