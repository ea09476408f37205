"""Cycle-based distributed optimisation on a simulated cyber layer.

One agent is placed on every basis cycle.  Two agents are neighbours when
their cycles share an arc, and agent ``i`` keeps local copies ``y_i`` of its
own cycle flow and of each neighbour's.  Each arc's cost is split evenly
among the cycles through it, so every agent's objective only involves arcs
it can evaluate from its own copies.

Agreement is enforced edge by edge: for every cyber edge ``(i, j)`` and
every cycle index held by both agents there is an edge variable ``w`` with
constraints ``y_i[c] = w`` and ``y_j[c] = w``.  The resulting ADMM runs in
synchronous rounds::

    y_i  <- argmin theta_i(y) + rho/2 sum_e |y[c] - w_e + u_ie|^2   (local box)
    w_e  <- mean of (y + u) over the edge's two endpoints
    u_ie <- u_ie + y_i[c] - w_e

Every value an agent reads from another agent passes through
:class:`MessageBus`, which rejects traffic between non-neighbours.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cycles import CycleBasis, certify
from .errors import LocalInfeasible, MaxRounds, ShapeMismatch, UncertifiedInputs
from .graph import OrientedGraph
from .reduction import (
    ElementarySolutionSet,
    FlowProblem,
    elementary_solutions,
    particular_solution,
    reduce,
    solve_reduced,
)
from .solver import QpSpec, QpWorkspace, SolverParams, Status

__all__ = [
    "CyberLayer",
    "LocalObjective",
    "AgentState",
    "AdmmParams",
    "ScheduleEntry",
    "RoundTrace",
    "RunResult",
    "MessageBus",
    "build_cyber_layer",
    "split_costs",
    "local_subproblem",
    "run",
]


@dataclass(frozen=True)
class CyberLayer:
    """Agents, their neighbourhoods and the arc-to-cycle registry.

    ``variables[i]`` is agent ``i``'s copy layout: its own cycle index first,
    then its neighbours in ascending order.
    """

    basis: CycleBasis
    xp: np.ndarray
    neighbors: tuple[tuple[int, ...], ...]
    agent_arcs: tuple[tuple[int, ...], ...]
    registry: dict
    bridges: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.neighbors)

    @property
    def variables(self) -> tuple[tuple[int, ...], ...]:
        return tuple((i,) + nb for i, nb in enumerate(self.neighbors))

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for i, nb in enumerate(self.neighbors) for j in nb if i < j)

    def shared(self, i: int, j: int) -> tuple[int, ...]:
        """Cycle indices both agents hold a copy of."""
        return tuple(sorted(set(self.variables[i]) & set(self.variables[j])))

    def is_connected(self) -> bool:
        if self.size == 0:
            return True
        seen, stack = {0}, [0]
        while stack:
            for j in self.neighbors[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.size


def build_cyber_layer(basis: CycleBasis, xp, graph: OrientedGraph) -> CyberLayer:
    """Place one agent per cycle of a certified ``basis``.

    Raises
    ------
    UncertifiedInputs
        If ``basis`` is not an exact cycle basis of ``graph``.
    """
    if basis.m != graph.m or basis.n != graph.n or not certify(graph, basis):
        raise UncertifiedInputs("cyber layer needs a certified cycle basis of the graph")
    xp = np.asarray(xp)
    if xp.shape != (graph.m,):
        raise ShapeMismatch(f"particular solution has shape {xp.shape}, expected ({graph.m},)")
    B = basis.matrix
    registry = {k: tuple(int(i) for i in np.flatnonzero(B[:, k])) for k in range(graph.m)}
    bridges = tuple(k for k, cyc in registry.items() if not cyc)
    registry = {k: cyc for k, cyc in registry.items() if cyc}
    agent_arcs = tuple(tuple(int(k) for k in np.flatnonzero(row)) for row in B)
    neighbors = []
    for i in range(basis.mu):
        nb = set()
        for k in agent_arcs[i]:
            nb.update(registry[k])
        nb.discard(i)
        neighbors.append(tuple(sorted(nb)))
    return CyberLayer(basis, xp, tuple(neighbors), agent_arcs, registry, bridges)


@dataclass
class LocalObjective:
    """Agent ``i``'s share ``theta_i`` of the arc costs and its local boxes.

    Arc ``arcs[r]`` carries ``coef[r] @ y + xp[r]`` where ``y`` follows the
    agent's copy layout; its cost ``a x^2 + b x`` is scaled by ``weight[r]``.
    """

    agent: int
    variables: tuple[int, ...]
    arcs: tuple[int, ...]
    coef: np.ndarray
    weight: np.ndarray
    quadratic: np.ndarray
    linear: np.ndarray
    xp: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def flows(self, y) -> np.ndarray:
        return self.coef @ np.asarray(y, dtype=float) + self.xp

    def value(self, y) -> float:
        x = self.flows(y)
        return float(np.sum(self.weight * (self.quadratic * x * x + self.linear * x)))

    def qp_terms(self):
        """``(P, q, constant)`` with ``theta_i(y) = y'Py/2 + q'y + constant``."""
        wa = self.weight * self.quadratic
        P = 2.0 * (self.coef.T * wa) @ self.coef
        q = self.coef.T @ (self.weight * (2.0 * self.quadratic * self.xp + self.linear))
        const = float(np.sum(self.weight * (self.quadratic * self.xp**2 + self.linear * self.xp)))
        return P, q, const

    def bounds(self):
        return self.lower - self.xp, self.upper - self.xp

    def with_xp(self, xp_full) -> "LocalObjective":
        xp = np.asarray(xp_full, dtype=float)[list(self.arcs)]
        return LocalObjective(
            self.agent, self.variables, self.arcs, self.coef, self.weight,
            self.quadratic, self.linear, xp, self.lower, self.upper,
        )


def split_costs(layer: CyberLayer, problem: FlowProblem, xp=None) -> list[LocalObjective]:
    """Split every non-bridge arc cost evenly among the cycles through it.

    Summed over agents at consistent copies, the local objectives give the
    total cost of the non-bridge arcs.
    """
    xp = np.asarray(layer.xp if xp is None else xp, dtype=float)
    B = layer.basis.matrix.astype(float)
    out = []
    for i, vars_i in enumerate(layer.variables):
        arcs = layer.agent_arcs[i]
        idx = list(arcs)
        coef = B[np.ix_(list(vars_i), idx)].T
        weight = np.array([1.0 / len(layer.registry[k]) for k in arcs])
        out.append(
            LocalObjective(
                i, vars_i, arcs, coef, weight,
                problem.quadratic[idx], problem.linear[idx], xp[idx],
                problem.lower[idx], problem.upper[idx],
            )
        )
    return out


@dataclass
class AgentState:
    """Local copies, scaled duals and the cached local solver of one agent.

    ``penalty[c]`` counts the consensus constraints on copy ``c``;
    ``duals[j]`` holds the scaled duals on the edge to neighbour ``j``,
    aligned with ``layer.shared(i, j)``.
    """

    index: int
    objective: LocalObjective
    y: np.ndarray
    duals: dict
    edge_values: dict
    penalty: np.ndarray
    local_dual: Optional[np.ndarray] = None
    workspace: Optional[QpWorkspace] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.y.size


def _local_spec(obj: LocalObjective, penalty, target, rho) -> QpSpec:
    P, q, const = obj.qp_terms()
    lo, hi = obj.bounds()
    P = P + rho * np.diag(penalty)
    q = q - rho * penalty * target
    return QpSpec(P, q, obj.coef, lo, hi, const)


def local_subproblem(
    objective: LocalObjective,
    target,
    penalty,
    rho: float,
    params: Optional[SolverParams] = None,
    y0=None,
    dual0=None,
    workspace: Optional[QpWorkspace] = None,
):
    """Minimise ``theta_i(y) + rho/2 sum_c penalty[c] (y[c] - target[c])^2``.

    The minimisation is over the agent's arc boxes.  ``target[c]`` is the
    mean of ``w - u`` over the consensus constraints on copy ``c``.  Passing
    the agent's ``workspace`` reuses its factorization, and ``y0`` / ``dual0``
    warm-start the copies and the box multipliers.  Returns
    ``(y, local_dual)``.

    Raises
    ------
    LocalInfeasible
        If the local arc boxes admit no point.
    """
    target = np.asarray(target, dtype=float)
    penalty = np.asarray(penalty, dtype=float)
    if workspace is None:
        workspace = QpWorkspace(_local_spec(objective, penalty, target, rho), params)
    else:
        P, q, _ = objective.qp_terms()
        workspace.update(q=q - rho * penalty * target)
    y, rep = workspace.solve(x0=y0, y0=dual0, record=False)
    if rep.status is Status.INFEASIBLE:
        raise LocalInfeasible(f"agent {objective.agent + 1}: local arc boxes are empty")
    return y, rep.y


class MessageBus:
    """Synchronous in-process message passing restricted to cyber edges.

    Messages posted during a phase are delivered together at the barrier,
    each inbox ordered by ascending sender.
    """

    def __init__(self, layer: CyberLayer):
        self._allowed = [set(nb) for nb in layer.neighbors]
        self._pending: list[list] = [[] for _ in range(layer.size)]
        self.delivered = 0

    def post(self, src: int, dst: int, payload) -> None:
        if dst not in self._allowed[src]:
            raise PermissionError(f"agent {src + 1} may not message agent {dst + 1}")
        self._pending[dst].append((src, payload))

    def deliver(self) -> list[dict]:
        inboxes = [dict(sorted(box, key=lambda m: m[0])) for box in self._pending]
        self.delivered += sum(len(b) for b in self._pending)
        self._pending = [[] for _ in self._pending]
        return inboxes


@dataclass(frozen=True)
class AdmmParams:
    rho: float = 0.005
    eps: float = 1e-9
    max_rounds: int = 5000
    workers: int = 1
    local: SolverParams = SolverParams(eps_abs=1e-11, eps_rel=1e-11, max_iterations=20000)

    def __post_init__(self):
        if self.rho <= 0 or self.eps <= 0 or self.max_rounds < 1 or self.workers < 1:
            raise ValueError("rho, eps, max_rounds and workers must be positive")


@dataclass(frozen=True)
class ScheduleEntry:
    round: int
    injections: np.ndarray


@dataclass
class RoundTrace:
    """Per-round, per-agent history of a run.

    ``arc_error[r, i, k]`` is ``|x_k - x_k*|`` for agent ``i``'s own estimate
    of arc ``k`` (NaN when the arc is outside the agent's cycle).
    ``objective`` is the cost of the flows lifted from every agent's own
    copy; ``lifted_error`` is the inf-norm error of those flows.
    """

    m: int
    rounds: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    switch: list = field(default_factory=list)
    disagreement: list = field(default_factory=list)
    arc_error: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    lifted_error: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rounds)

    def rows(self):
        """Flat ``(round, agent, phase, switch, disagreement, objective, errors)``."""
        for r in range(len(self)):
            for i, d in enumerate(self.disagreement[r]):
                yield (
                    self.rounds[r], i, self.phase[r], self.switch[r], float(d),
                    self.objective[r], self.arc_error[r][i],
                )


@dataclass
class RunResult:
    trace: RoundTrace
    z: np.ndarray
    x: np.ndarray
    copies: list
    converged: list
    references: list

    @property
    def rounds(self) -> int:
        return len(self.trace)


def _normalize_schedule(problem: FlowProblem, schedule) -> list[ScheduleEntry]:
    if not schedule:
        return [ScheduleEntry(0, np.asarray(problem.injections))]
    out = []
    for e in schedule:
        if isinstance(e, ScheduleEntry):
            out.append(e)
        elif isinstance(e, dict):
            out.append(ScheduleEntry(int(e["round"]), np.asarray(e["injections"])))
        else:
            r, f = e
            out.append(ScheduleEntry(int(r), np.asarray(f)))
    out.sort(key=lambda e: e.round)
    if out[0].round != 0:
        out.insert(0, ScheduleEntry(0, np.asarray(problem.injections)))
    for e in out:
        if e.injections.shape != (problem.graph.n,):
            raise ShapeMismatch(f"schedule entry at round {e.round} has {e.injections.size} injections")
    return out


def _centralized(problem: FlowProblem, basis: CycleBasis, xp, params) -> np.ndarray:
    sol = solve_reduced(reduce(problem, basis, xp), params)
    if not sol.ok:
        raise UncertifiedInputs(f"centralized reference failed: {sol.report.status.value}")
    return sol.x


def run(
    problem: FlowProblem,
    layer: CyberLayer,
    params: Optional[AdmmParams] = None,
    schedule: Optional[Sequence] = None,
    references: Optional[Sequence] = None,
    elements: Optional[ElementarySolutionSet] = None,
    workers: Optional[int] = None,
) -> RunResult:
    """Simulate synchronous consensus rounds, switching injections on schedule.

    ``schedule`` lists ``(round, injections)`` entries; an entry at round
    ``r`` takes effect from round ``r + 1``.  On a switch each agent
    recomputes its particular flows from the broadcast injections and
    continues from its current copies and duals.  ``references`` gives the
    optimal arc flows per phase; by default they come from the centralized
    reduced solver.  Phases before the last run until the next switch; the
    last phase stops once disagreement and edge-variable change fall below
    ``params.eps``.

    Raises
    ------
    MaxRounds
        If the last phase has not converged after ``params.max_rounds``
        rounds; the partial :class:`RunResult` is attached as ``.result``.
    """
    params = params or AdmmParams()
    workers = params.workers if workers is None else workers
    g = problem.graph
    basis = layer.basis
    entries = _normalize_schedule(problem, schedule)
    if elements is None:
        needed = sorted({int(v) for e in entries for v in np.flatnonzero(e.injections)} - {g.n - 1})
        elements = elementary_solutions(g, needed=needed)
    xps = [particular_solution(elements, e.injections) for e in entries]
    problems = [problem.with_injections(e.injections) for e in entries]
    if references is None:
        references = [_centralized(p, basis, xp, params.local) for p, xp in zip(problems, xps)]
    references = [np.asarray(r, dtype=float) for r in references]
    if len(references) != len(entries):
        raise ShapeMismatch(f"{len(references)} references for {len(entries)} phases")

    mu, rho = layer.size, params.rho
    B = basis.matrix
    trace = RoundTrace(g.m)
    if mu == 0:
        x = xps[-1].astype(float)
        return RunResult(trace, np.zeros(0), x, [], [0] * len(entries), references)

    objectives = split_costs(layer, problems[0], xps[0])
    shared = {(i, j): layer.shared(i, j) for i in range(mu) for j in layer.neighbors[i]}
    agents = []
    for i, obj in enumerate(objectives):
        pos = {c: p for p, c in enumerate(obj.variables)}
        penalty = np.zeros(len(obj.variables))
        for j in layer.neighbors[i]:
            for c in shared[i, j]:
                penalty[pos[c]] += 1.0
        agents.append(
            AgentState(
                i, obj, np.zeros(len(obj.variables)),
                {j: np.zeros(len(shared[i, j])) for j in layer.neighbors[i]},
                {j: np.zeros(len(shared[i, j])) for j in layer.neighbors[i]},
                penalty,
            )
        )
    positions = [{c: p for p, c in enumerate(a.objective.variables)} for a in agents]
    bus = MessageBus(layer)

    def target(a: AgentState) -> np.ndarray:
        acc = np.zeros(a.dim)
        pos = positions[a.index]
        for j, w in a.edge_values.items():
            for c, wv, uv in zip(shared[a.index, j], w, a.duals[j]):
                acc[pos[c]] += wv - uv
        return np.divide(acc, a.penalty, out=np.zeros_like(acc), where=a.penalty > 0)

    def solve_agent(a: AgentState):
        t = target(a)
        if a.workspace is None:
            a.workspace = QpWorkspace(_local_spec(a.objective, a.penalty, t, rho), params.local)
        return local_subproblem(
            a.objective, t, a.penalty, rho, y0=a.y, dual0=a.local_dual, workspace=a.workspace
        )

    def estimates(a: AgentState, ref) -> np.ndarray:
        err = np.full(g.m, np.nan)
        idx = list(a.objective.arcs)
        err[idx] = np.abs(a.objective.flows(a.y) - ref[idx])
        return err

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    converged: list = [None] * len(entries)
    phase = 0
    xp = xps[0]
    try:
        for rnd in range(1, params.max_rounds + 1):
            switched = False
            if phase + 1 < len(entries) and rnd > entries[phase + 1].round:
                phase += 1
                switched = True
                xp = xps[phase]
                for a in agents:
                    a.objective = a.objective.with_xp(xp)
                    lo, hi = a.objective.bounds()
                    a.workspace.update(l=lo, u=hi)

            # compute: local solves are independent within a round
            results = list(pool.map(solve_agent, agents)) if pool else [solve_agent(a) for a in agents]
            for a, (y, ld) in zip(agents, results):
                a.y, a.local_dual = y, ld

            # exchange: each agent sends y + u on every shared copy
            for a in agents:
                pos = positions[a.index]
                for j in layer.neighbors[a.index]:
                    vals = np.array([a.y[pos[c]] for c in shared[a.index, j]]) + a.duals[j]
                    bus.post(a.index, j, vals)
            inboxes = bus.deliver()

            primal = dual = 0.0
            disagreement = np.zeros(mu)
            for a in agents:
                i, pos = a.index, positions[a.index]
                mine_all = {}
                for j in layer.neighbors[i]:
                    mine = np.array([a.y[pos[c]] for c in shared[i, j]]) + a.duals[j]
                    theirs = inboxes[i][j]
                    lo_v, hi_v = (mine, theirs) if i < j else (theirs, mine)
                    w = 0.5 * (lo_v + hi_v)
                    dual = max(dual, rho * float(np.max(np.abs(w - a.edge_values[j]), initial=0.0)))
                    a.edge_values[j] = w
                    mine_all[j] = w
                for j, w in mine_all.items():
                    copies = np.array([a.y[pos[c]] for c in shared[i, j]])
                    gap = copies - w
                    a.duals[j] = a.duals[j] + gap
                    disagreement[i] = max(disagreement[i], float(np.max(np.abs(gap), initial=0.0)))
                primal = max(primal, disagreement[i])

            z = np.array([a.y[0] for a in agents])
            x = B.T @ z + xp
            ref = references[phase]
            trace.rounds.append(rnd)
            trace.phase.append(phase)
            trace.switch.append(switched)
            trace.disagreement.append(disagreement)
            trace.arc_error.append(np.array([estimates(a, ref) for a in agents]))
            trace.objective.append(problems[phase].cost(x))
            trace.primal.append(primal)
            trace.dual.append(dual)
            trace.lifted_error.append(float(np.max(np.abs(x - ref))))

            if primal <= params.eps and dual <= params.eps:
                if converged[phase] is None:
                    converged[phase] = rnd
                if phase == len(entries) - 1:
                    break
            elif converged[phase] is not None and phase == len(entries) - 1:
                converged[phase] = None
    finally:
        if pool:
            pool.shutdown()

    z = np.array([a.y[0] for a in agents])
    result = RunResult(trace, z, B.T @ z + xp, [a.y.copy() for a in agents], converged, references)
    if converged[-1] is None:
        err = MaxRounds(f"no consensus after {params.max_rounds} rounds")
        err.result = result
        raise err
    return result
