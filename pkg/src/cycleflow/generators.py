"""Seeded random instances for tests and experiments.

The default seed comes from the ``CYCLEFLOW_SEED`` environment variable
(0 when unset), so a failing randomized run can be replayed exactly.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np

from .graph import OrientedGraph, build_incidence
from .opf import OpfProblem
from .reduction import FlowProblem

__all__ = [
    "SEED_ENV",
    "default_seed",
    "make_rng",
    "random_connected_graph",
    "random_balanced_injections",
    "random_flow_problem",
    "random_opf_problem",
]

SEED_ENV = "CYCLEFLOW_SEED"


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def make_rng(seed: Optional[int] = None) -> np.random.Generator:
    return np.random.default_rng(default_seed() if seed is None else seed)


def random_connected_graph(
    rng: np.random.Generator, n: int, m: int, parallel: float = 0.0
) -> OrientedGraph:
    """Random spanning tree on ``n`` nodes plus extra arcs, ``m`` arcs in total
    when the simple-graph limit allows it.

    Orientations are random.  With probability ``parallel`` an extra arc
    duplicates an existing one with the same orientation.
    """
    if m < n - 1:
        raise ValueError(f"a connected graph on {n} nodes needs at least {n - 1} arcs")
    arcs: list[tuple[int, int]] = []
    pairs = set()
    order = rng.permutation(n)
    for i in range(1, n):
        u, v = int(order[int(rng.integers(0, i))]), int(order[i])
        arc = (u, v) if rng.random() < 0.5 else (v, u)
        arcs.append(arc)
        pairs.add(frozenset(arc))
    limit = n * (n - 1) // 2
    while len(arcs) < m:
        if arcs and rng.random() < parallel:
            arcs.append(arcs[int(rng.integers(0, len(arcs)))])
            continue
        if len(pairs) >= limit:
            break
        u, v = (int(x) for x in rng.choice(n, 2, replace=False))
        if frozenset((u, v)) in pairs:
            continue
        pairs.add(frozenset((u, v)))
        arcs.append((u, v))
    perm = rng.permutation(len(arcs))
    return OrientedGraph(n, tuple(arcs[i] for i in perm))


def random_balanced_injections(rng: np.random.Generator, n: int, scale: int = 10) -> np.ndarray:
    """Integer injections summing to zero."""
    f = rng.integers(-scale, scale + 1, n)
    f[int(rng.integers(0, n))] -= f.sum()
    return f.astype(np.int64)


def random_flow_problem(
    rng: np.random.Generator,
    g: OrientedGraph,
    slack: float = 5.0,
    linear: bool = True,
) -> FlowProblem:
    """Quadratic-cost flow problem guaranteed feasible.

    A random flow ``x0`` is drawn first, the injections are ``I x0``, and
    the box is widened around ``x0`` by up to ``slack`` on each side.
    """
    m = g.m
    x0 = rng.integers(-10, 11, m)
    f = build_incidence(g) @ x0
    lower = x0 - rng.uniform(0, slack, m)
    upper = x0 + rng.uniform(0, slack, m)
    a = rng.uniform(0.1, 2.0, m)
    b = rng.uniform(-1.0, 1.0, m) if linear else np.zeros(m)
    return FlowProblem(g, lower, upper, a, b, f.astype(np.int64))


def random_opf_problem(rng: np.random.Generator, g: OrientedGraph, T: int) -> OpfProblem:
    """Small OPF instance with generous generation so it is feasible."""
    n, m = g.n, g.m
    return OpfProblem(
        g,
        loads=-rng.uniform(0, 5, (T, n)),
        gen_lower=0.0,
        gen_upper=rng.uniform(5 * n, 10 * n, n),
        gen_quadratic=rng.uniform(0.1, 2.0, n),
        gen_linear=rng.uniform(0.0, 3.0, n),
        storage_lower=0.0,
        storage_upper=10.0,
        storage_initial=rng.uniform(0, 10, n),
        dissipation=rng.uniform(0.8, 1.0, n),
        charge_lower=-3.0,
        charge_upper=3.0,
        susceptance=rng.uniform(1, 10, m),
        flow_lower=-15.0 * n,
        flow_upper=15.0 * n,
        flow_quadratic=rng.uniform(0, 1, m),
        flow_linear=0.0,
    )
