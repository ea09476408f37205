"""Oriented cycle bases of an oriented graph.

Two constructors are provided: the fundamental basis of a spanning tree and
Horton's minimum-weight basis.  Either way the rows of the returned matrix
are oriented cycle vectors over {-1, 0, +1} lying in the null space of the
incidence matrix, and each row is oriented so that its first arc (the
defining non-tree arc, or the lowest arc id for Horton cycles) carries +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import InvalidTree, NotConnected, ShapeMismatch
from .graph import (
    OrientedGraph,
    SpanningTree,
    build_incidence,
    is_connected,
    shortest_path_tree,
    spanning_tree,
)

__all__ = [
    "OrientedCycle",
    "CycleBasis",
    "BasisCertificate",
    "orient_cycle",
    "fundamental_basis",
    "horton_basis",
    "verify_basis",
    "gf2_rank",
    "rational_rank",
    "certify",
]


@dataclass(frozen=True)
class OrientedCycle:
    """A simple cycle with a traversal direction.

    ``walk`` lists ``(arc, sign)`` in traversal order, starting with the
    cycle's first arc walked along its orientation.
    """

    walk: tuple[tuple[int, int], ...]
    m: int
    defining_arc: Optional[int] = None

    @property
    def arcs(self) -> tuple[int, ...]:
        return tuple(sorted(a for a, _ in self.walk))

    @property
    def entries(self) -> np.ndarray:
        c = np.zeros(self.m, dtype=np.int64)
        for a, s in self.walk:
            c[a] = s
        return c

    def weight(self, weights: Sequence[float]) -> float:
        return float(sum(weights[a] for a, _ in self.walk))


@dataclass(frozen=True)
class CycleBasis:
    cycles: tuple[OrientedCycle, ...]
    n: int
    m: int
    source: Literal["tree", "horton", "file"]

    @property
    def mu(self) -> int:
        return len(self.cycles)

    @property
    def matrix(self) -> np.ndarray:
        """The ``mu x m`` integer cycle matrix, one oriented cycle per row."""
        B = np.zeros((self.mu, self.m), dtype=np.int64)
        for i, c in enumerate(self.cycles):
            for a, s in c.walk:
                B[i, a] = s
        return B

    def weight(self, weights: Sequence[float]) -> float:
        return float(sum(c.weight(weights) for c in self.cycles))

    @classmethod
    def from_matrix(cls, g: OrientedGraph, B, source="file") -> "CycleBasis":
        """Rebuild a basis from its signed matrix.

        The traversal of each row is recovered from the graph; a row whose
        signs disagree with any traversal keeps its signs but is walked in
        arc order, so ``verify_basis`` will flag it.
        """
        B = np.asarray(B, dtype=np.int64)
        if B.ndim != 2 or B.shape[1] != g.m:
            raise ShapeMismatch(f"cycle matrix has shape {B.shape}, graph has {g.m} arcs")
        cycles = []
        for row in B:
            arcs = [int(a) for a in np.flatnonzero(row)]
            try:
                walk = orient_cycle(g, arcs, arcs[0])
                oriented = all(row[a] == s for a, s in walk) or all(row[a] == -s for a, s in walk)
            except ValueError:
                oriented = False
            if not oriented:
                walk = tuple((a, int(row[a])) for a in arcs)
            elif walk[0][1] != row[walk[0][0]]:
                walk = tuple((a, -s) for a, s in walk)
            cycles.append(OrientedCycle(tuple(walk), g.m))
        return cls(tuple(cycles), g.n, g.m, source)


def orient_cycle(g: OrientedGraph, arcs: Sequence[int], first: int) -> tuple[tuple[int, int], ...]:
    """Traverse the simple cycle on ``arcs`` starting along arc ``first``.

    Raises ``ValueError`` when the arcs do not form one simple cycle.
    """
    arcs = list(arcs)
    if first not in arcs or len(arcs) < 2:
        raise ValueError("a cycle needs at least two arcs including the first")
    touching: dict[int, list[int]] = {}
    for a in arcs:
        for v in g.arcs[a]:
            touching.setdefault(v, []).append(a)
    if any(len(v) != 2 for v in touching.values()):
        raise ValueError("arc set is not a simple cycle")
    start, node = g.arcs[first]
    walk = [(first, 1)]
    prev = first
    while node != start:
        a, b = touching[node]
        nxt = b if a == prev else a
        t, h = g.arcs[nxt]
        sign = 1 if t == node else -1
        walk.append((nxt, sign))
        node = h if sign == 1 else t
        prev = nxt
    if len(walk) != len(arcs):
        raise ValueError("arc set splits into several cycles")
    return tuple(walk)


def _check_tree(g: OrientedGraph, tree: SpanningTree) -> None:
    if len(tree.parent) != g.n or len(tree.arcs) != g.n - 1:
        raise InvalidTree("tree must have one parent slot per node and n-1 arcs")
    for v in range(g.n):
        if v == tree.root:
            if tree.parent[v] != -1:
                raise InvalidTree("root has a parent")
            continue
        a, p = tree.parent_arc[v], tree.parent[v]
        if not (0 <= a < g.m) or set(g.arcs[a]) != {v, p}:
            raise InvalidTree(f"node {v + 1}: arc {a + 1} does not join it to its parent")
    for v in range(g.n):
        steps, u = 0, v
        while u != tree.root:
            u = tree.parent[u]
            steps += 1
            if steps > g.n:
                raise InvalidTree("parent pointers contain a loop")


def fundamental_basis(g: OrientedGraph, tree: Optional[SpanningTree] = None) -> CycleBasis:
    """One cycle per non-tree arc: the arc closed by its tree path.

    Cycles are ordered by their defining arc.  With ``tree=None`` the BFS
    tree rooted at node 0 is used.
    """
    if not is_connected(g):
        raise NotConnected("fundamental basis needs a connected graph")
    if tree is None:
        tree = spanning_tree(g, 0)
    _check_tree(g, tree)
    in_tree = tree.arcs
    cycles = []
    for k, (t, h) in enumerate(g.arcs):
        if k in in_tree:
            continue
        up_h = tree.path_to_root(g, h)
        up_t = tree.path_to_root(g, t)
        # drop the shared stretch above the lowest common ancestor
        while up_h and up_t and up_h[-1][0] == up_t[-1][0]:
            up_h.pop()
            up_t.pop()
        walk = [(k, 1)] + up_h + [(a, -s) for a, s in reversed(up_t)]
        cycles.append(OrientedCycle(tuple(walk), g.m, defining_arc=k))
    return CycleBasis(tuple(cycles), g.n, g.m, "tree")


def _mask(arcs) -> int:
    bits = 0
    for a in arcs:
        bits |= 1 << int(a)
    return bits


class _GF2Eliminator:
    """Incremental row reduction over GF(2) on arc bitmasks."""

    def __init__(self):
        self.pivots: dict[int, int] = {}

    def insert(self, vec: int) -> bool:
        while vec:
            p = vec.bit_length() - 1
            if p not in self.pivots:
                self.pivots[p] = vec
                return True
            vec ^= self.pivots[p]
        return False


def horton_basis(g: OrientedGraph, weights: Optional[Sequence[float]] = None) -> CycleBasis:
    """Minimum-weight cycle basis by Horton's candidate set.

    Candidates are ``P(v, x) + (x, y) + P(y, v)`` for every root ``v`` and arc
    ``(x, y)``, with ``P`` taken from the shortest-path tree of ``v``; any
    candidate whose two tree paths meet away from ``v`` is not a simple cycle
    and is dropped.  Candidates are keyed by arc set, sorted by
    ``(weight, sorted arcs)`` and accepted greedily while independent over
    GF(2).  The BFS-tree fundamental cycles are appended to the pool, which
    keeps the result no heavier than that basis even for zero weights.
    """
    if not is_connected(g):
        raise NotConnected("Horton basis needs a connected graph")
    w = g.weights if weights is None else tuple(float(x) for x in weights)
    pool: dict[frozenset, float] = {}

    def offer(arcs: frozenset):
        if arcs not in pool:
            pool[arcs] = float(sum(w[a] for a in arcs))

    for v in range(g.n):
        spt = shortest_path_tree(g, v, w)
        # nodes and arcs on each node's tree path back to v
        node_path: list[Optional[frozenset]] = [None] * g.n
        arc_path: list[Optional[frozenset]] = [None] * g.n
        node_path[v] = frozenset((v,))
        arc_path[v] = frozenset()
        for u in range(g.n):
            chain = []
            while node_path[u] is None:
                chain.append(u)
                u = spt.parent[u]
            for x in reversed(chain):
                p = spt.parent[x]
                node_path[x] = node_path[p] | {x}
                arc_path[x] = arc_path[p] | {spt.parent_arc[x]}
        for k, (x, y) in enumerate(g.arcs):
            if node_path[x] & node_path[y] != {v}:
                continue
            if k in arc_path[x] or k in arc_path[y]:
                continue
            offer(arc_path[x] | arc_path[y] | {k})

    for c in fundamental_basis(g).cycles:
        offer(frozenset(c.arcs))

    ranked = sorted(pool.items(), key=lambda kv: (kv[1], tuple(sorted(kv[0]))))
    elim = _GF2Eliminator()
    chosen = []
    for arcs, _ in ranked:
        if elim.insert(_mask(arcs)):
            first = min(arcs)
            chosen.append(OrientedCycle(orient_cycle(g, sorted(arcs), first), g.m))
            if len(chosen) == g.mu:
                break
    return CycleBasis(tuple(chosen), g.n, g.m, "horton")


def gf2_rank(matrix) -> int:
    """Rank over GF(2) of an integer matrix (entries taken mod 2)."""
    elim = _GF2Eliminator()
    rank = 0
    for row in np.asarray(matrix, dtype=np.int64):
        if elim.insert(_mask(np.flatnonzero(row % 2))):
            rank += 1
    return rank


def rational_rank(matrix) -> int:
    """Exact rank over the rationals by Gaussian elimination on Fractions."""
    rows = [[Fraction(int(x)) for x in row] for row in np.asarray(matrix)]
    if not rows:
        return 0
    ncols = len(rows[0])
    rank = 0
    for col in range(ncols):
        piv = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        p = rows[rank]
        for r in range(rank + 1, len(rows)):
            if rows[r][col] != 0:
                f = rows[r][col] / p[col]
                rows[r] = [a - f * b for a, b in zip(rows[r], p)]
        rank += 1
        if rank == len(rows):
            break
    return rank


@dataclass(frozen=True)
class BasisCertificate:
    orthogonality: bool
    rank_ok: bool
    rank_gf2: int
    rank_rational: int
    mu: int

    def __bool__(self) -> bool:
        return self.orthogonality and self.rank_ok


def verify_basis(basis, inc) -> BasisCertificate:
    """Certify a cycle matrix against the incidence matrix.

    ``basis`` may be a :class:`CycleBasis` or a raw ``mu x m`` array.
    Orthogonality is checked by exact integer multiplication; the rank must
    equal ``m - n + 1`` both over GF(2) and over the rationals.
    """
    B = basis.matrix if isinstance(basis, CycleBasis) else np.asarray(basis, dtype=np.int64)
    inc = np.asarray(inc, dtype=np.int64)
    n, m = inc.shape
    if B.ndim != 2 or (B.size and B.shape[1] != m):
        raise ShapeMismatch(f"cycle matrix {B.shape} vs incidence matrix {inc.shape}")
    B = B.reshape(-1, m)
    mu = m - n + 1
    orth = bool(np.all(inc @ B.T == 0))
    r2 = gf2_rank(B)
    rq = rational_rank(B)
    return BasisCertificate(orth, B.shape[0] == mu and r2 == mu and rq == mu, r2, rq, mu)


def certify(g: OrientedGraph, basis: CycleBasis) -> BasisCertificate:
    return verify_basis(basis, build_incidence(g))
