"""Eliminating flow conservation from minimum-cost flow problems.

Every solution of ``I x = f`` is ``B' z + xp`` for a cycle matrix ``B`` and
one particular solution ``xp``.  The particular solution is a superposition
of path-traced unit flows, one per injecting node, each routed to a common
reference node.  Substituting the parametrisation leaves a problem over
``mu = m - n + 1`` cycle flows with box constraints only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .cycles import CycleBasis, certify
from .errors import (
    MissingElementaryColumn,
    NotConnected,
    ShapeMismatch,
    UnbalancedInjection,
    UncertifiedInputs,
    ValidationError,
)
from .graph import OrientedGraph, build_incidence, is_connected, shortest_path_tree
from .solver import QpSpec, SolveReport, SolverParams, Status, solve_qp

__all__ = [
    "FlowProblem",
    "ElementarySolutionSet",
    "ReducedFlowProblem",
    "FlowSolution",
    "elementary_solutions",
    "particular_solution",
    "reduce",
    "lift",
    "full_qp",
    "solve_full",
    "solve_reduced",
    "check_balanced",
]


def _is_integral(v: np.ndarray) -> bool:
    return v.dtype.kind in "iu"


def check_balanced(f, name="injections") -> None:
    """Raise :class:`UnbalancedInjection` unless ``sum(f) == 0``.

    Integer vectors must balance exactly; float vectors to ``1e-9 * |f|_1``.
    """
    f = np.asarray(f)
    total = f.sum()
    if _is_integral(f):
        ok = total == 0
    else:
        ok = abs(float(total)) <= 1e-9 * max(float(np.abs(f).sum()), 1e-300)
    if not ok:
        raise UnbalancedInjection(f"{name} sum to {total}, not zero")


@dataclass
class FlowProblem:
    """Minimum-cost flow with separable quadratic costs ``a x^2 + b x``."""

    graph: OrientedGraph
    lower: np.ndarray
    upper: np.ndarray
    quadratic: np.ndarray
    linear: np.ndarray
    injections: np.ndarray

    def __post_init__(self):
        m, n = self.graph.m, self.graph.n
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.quadratic = np.asarray(self.quadratic, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float)
        f = np.asarray(self.injections)
        self.injections = f if _is_integral(f) else f.astype(float)
        for name in ("lower", "upper", "quadratic", "linear"):
            if getattr(self, name).shape != (m,):
                raise ValidationError(name, f"expected {m} values")
        if self.injections.shape != (n,):
            raise ValidationError("injections", f"expected {n} values")
        if np.any(self.lower > self.upper):
            k = int(np.argmax(self.lower > self.upper))
            raise ValidationError("arcs", f"arc {k + 1} has lower bound above upper bound")
        if np.any(self.quadratic < 0):
            raise ValidationError("arcs", "quadratic cost coefficients must be nonnegative")
        try:
            check_balanced(self.injections)
        except UnbalancedInjection:
            raise ValidationError("injections", "unbalanced") from None

    def cost(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sum(self.quadratic * x * x + self.linear * x))

    def with_injections(self, f) -> "FlowProblem":
        return FlowProblem(self.graph, self.lower, self.upper, self.quadratic, self.linear, f)


@dataclass(frozen=True)
class ElementarySolutionSet:
    """Unit path flows from selected nodes to a common reference node.

    ``columns[v]`` satisfies ``I @ columns[v] = e_v - e_reference``.
    """

    reference: int
    columns: dict
    m: int

    def matrix(self, n: int) -> np.ndarray:
        """``m x n`` matrix of columns; the reference and absent nodes are zero."""
        X = np.zeros((self.m, n), dtype=np.int64)
        for v, col in self.columns.items():
            X[:, v] = col
        return X


def elementary_solutions(
    g: OrientedGraph, reference: Optional[int] = None, needed: Optional[Iterable[int]] = None
) -> ElementarySolutionSet:
    """Trace a unit flow from each node in ``needed`` to ``reference``.

    Paths are fewest-arc paths read off one unit-weight Dijkstra tree rooted
    at the reference.  ``reference`` defaults to the last node and
    ``needed`` to every other node.
    """
    reference = g.n - 1 if reference is None else int(reference)
    needed = [v for v in range(g.n) if v != reference] if needed is None else sorted(set(needed))
    if reference in needed:
        raise ValueError(f"reference node {reference + 1} cannot need its own column")
    if not is_connected(g):
        raise NotConnected("elementary solutions need a connected graph")
    tree = shortest_path_tree(g, reference, [1.0] * g.m)
    columns = {}
    for v in needed:
        col = np.zeros(g.m, dtype=np.int64)
        for a, s in tree.path_from(g, v):
            col[a] = s
        columns[v] = col
    return ElementarySolutionSet(reference, columns, g.m)


def particular_solution(elems: ElementarySolutionSet, f) -> np.ndarray:
    """Superpose ``f_v`` times each elementary column.

    Integer injections give an exact integer result.
    """
    f = np.asarray(f)
    check_balanced(f)
    dtype = np.int64 if _is_integral(f) else float
    xp = np.zeros(elems.m, dtype=dtype)
    for v in np.flatnonzero(f):
        v = int(v)
        if v == elems.reference:
            continue
        if v not in elems.columns:
            raise MissingElementaryColumn(f"no elementary column for node {v + 1}")
        xp += f[v] * elems.columns[v]
    return xp


def lift(z, basis: CycleBasis, xp) -> np.ndarray:
    """Arc flows ``B' z + xp``."""
    z = np.asarray(z)
    xp = np.asarray(xp)
    B = basis.matrix
    if z.shape != (basis.mu,) or xp.shape != (basis.m,):
        raise ShapeMismatch(f"z {z.shape} / xp {xp.shape} vs basis {B.shape}")
    return B.T @ z + xp


def _conserves(g: OrientedGraph, x, f) -> bool:
    r = build_incidence(g) @ np.asarray(x) - np.asarray(f)
    if _is_integral(np.asarray(x)) and _is_integral(np.asarray(f)):
        return bool(np.all(r == 0))
    scale = max(1.0, float(np.abs(f).max(initial=0.0)))
    return bool(np.max(np.abs(r), initial=0.0) <= 1e-9 * scale)


@dataclass
class ReducedFlowProblem:
    """The cycle-flow image of a :class:`FlowProblem`.

    Arc ``j`` carries ``B[:, j] . z + xp[j]``, so the box becomes
    ``lower - xp <= B' z <= upper - xp``.
    """

    problem: FlowProblem
    basis: CycleBasis
    xp: np.ndarray
    B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.B = self.basis.matrix

    @property
    def mu(self) -> int:
        return self.basis.mu

    @property
    def lower(self) -> np.ndarray:
        return self.problem.lower - self.xp

    @property
    def upper(self) -> np.ndarray:
        return self.problem.upper - self.xp

    def objective(self, z) -> float:
        return self.problem.cost(self.lift(z))

    def lift(self, z) -> np.ndarray:
        return lift(z, self.basis, self.xp)

    def to_qp(self) -> QpSpec:
        a, b = self.problem.quadratic, self.problem.linear
        xp = self.xp.astype(float)
        Bf = self.B.astype(float)
        P = 2.0 * (Bf * a) @ Bf.T
        q = Bf @ (2.0 * a * xp + b)
        const = float(np.sum(a * xp * xp + b * xp))
        return QpSpec(P, q, Bf.T, self.lower, self.upper, const)


def reduce(problem: FlowProblem, basis: CycleBasis, xp) -> ReducedFlowProblem:
    """Substitute ``x = B' z + xp`` into ``problem``.

    Raises
    ------
    UncertifiedInputs
        If ``basis`` fails its exact certificate or ``I xp != f``.
    """
    g = problem.graph
    if basis.m != g.m or basis.n != g.n:
        raise UncertifiedInputs("basis was built for a different graph")
    if not certify(g, basis):
        raise UncertifiedInputs("cycle basis is not an independent null-space basis")
    xp = np.asarray(xp)
    if xp.shape != (g.m,) or not _conserves(g, xp, problem.injections):
        raise UncertifiedInputs("particular solution does not satisfy flow conservation")
    return ReducedFlowProblem(problem, basis, xp)


def full_qp(problem: FlowProblem) -> QpSpec:
    """Arc-space problem with conservation as explicit equality rows."""
    g = problem.graph
    inc = build_incidence(g).astype(float)
    f = problem.injections.astype(float)
    A = np.vstack([inc, np.eye(g.m)])
    return QpSpec(
        2.0 * np.diag(problem.quadratic),
        problem.linear,
        A,
        np.r_[f, problem.lower],
        np.r_[f, problem.upper],
    )


@dataclass
class FlowSolution:
    x: np.ndarray
    objective: float
    report: SolveReport
    z: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.report.ok


def solve_full(problem: FlowProblem, params: Optional[SolverParams] = None) -> FlowSolution:
    x, rep = solve_qp(full_qp(problem), params)
    return FlowSolution(x, problem.cost(x), rep)


def solve_reduced(
    reduced: ReducedFlowProblem, params: Optional[SolverParams] = None, z0=None
) -> FlowSolution:
    """Solve the cycle-flow problem and lift the optimum back to arcs."""
    if reduced.mu == 0:
        # a tree: conservation pins every arc flow, only feasibility remains
        x = reduced.xp.astype(float)
        ok = bool(np.all(x >= reduced.problem.lower - 1e-9) and np.all(x <= reduced.problem.upper + 1e-9))
        status = Status.OPTIMAL if ok else Status.INFEASIBLE
        cost = reduced.problem.cost(x)
        rep = SolveReport(status, 0, cost if ok else np.nan, np.zeros(reduced.problem.graph.m))
        return FlowSolution(x, cost, rep, np.zeros(0))
    z, rep = solve_qp(reduced.to_qp(), params, x0=z0)
    x = reduced.lift(z)
    return FlowSolution(x, reduced.problem.cost(x), rep, z)
