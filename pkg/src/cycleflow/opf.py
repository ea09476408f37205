"""Multi-period DC optimal power flow with generation and storage.

Each bus has a generator ``delta``, a battery with charge/discharge ``u`` and
level ``s``, and a known load ``d <= 0``.  Per period the arc flows obey
conservation ``I x = delta + u + d`` and the DC law
``b_e (theta_tail - theta_head) = x_e``; storage follows
``s(t+1) = lam * s(t) + u(t)`` from a given ``s(1)``.

The reduced form replaces ``x(t)`` by ``B' z(t) + X (delta + u + d)(t)``
where ``X`` stacks the elementary path flows to the reference bus.  That
substitution needs the per-period balance ``sum(delta + u + d) = 0``
as an explicit constraint.  In both forms the storage levels are eliminated
by unrolling the dynamics in the reduced problem and kept as variables in
the full one, and the reference bus angle is pinned to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cycles import CycleBasis, certify
from .errors import HorizonMismatch, ShapeMismatch, UncertifiedInputs, ValidationError
from .graph import OrientedGraph, build_incidence
from .reduction import ElementarySolutionSet
from .solver import QpSpec, SolveReport, SolverParams, solve_qp

__all__ = [
    "OpfProblem",
    "ReducedOpfProblem",
    "OpfSolution",
    "reduce_opf",
    "solve_opf",
    "solve_opf_full",
    "validate_opf_solution",
]


def _vec(value, size, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    if arr.shape != (size,):
        raise ValidationError(name, f"expected {size} values, got shape {arr.shape}")
    return arr


@dataclass
class OpfProblem:
    graph: OrientedGraph
    loads: np.ndarray  # (T, n), nonpositive
    gen_lower: np.ndarray
    gen_upper: np.ndarray
    gen_quadratic: np.ndarray
    gen_linear: np.ndarray
    storage_lower: np.ndarray
    storage_upper: np.ndarray
    storage_initial: np.ndarray
    dissipation: np.ndarray
    charge_lower: np.ndarray
    charge_upper: np.ndarray
    susceptance: np.ndarray
    flow_lower: np.ndarray
    flow_upper: np.ndarray
    flow_quadratic: np.ndarray
    flow_linear: np.ndarray
    horizon: Optional[int] = None
    terminal_storage: Optional[np.ndarray] = None

    def __post_init__(self):
        n, m = self.graph.n, self.graph.m
        loads = np.asarray(self.loads, dtype=float)
        if loads.ndim == 1:
            loads = loads[None, :]
        if self.horizon is None:
            self.horizon = loads.shape[0]
        if loads.shape != (self.horizon, n):
            raise HorizonMismatch(f"loads have shape {loads.shape}, expected ({self.horizon}, {n})")
        if np.any(loads > 0):
            raise ValidationError("loads", "loads must be nonpositive")
        self.loads = loads
        for name in ("gen_lower", "gen_upper", "gen_quadratic", "gen_linear", "storage_lower",
                     "storage_upper", "storage_initial", "dissipation", "charge_lower", "charge_upper"):
            setattr(self, name, _vec(getattr(self, name), n, name))
        for name in ("susceptance", "flow_lower", "flow_upper", "flow_quadratic", "flow_linear"):
            setattr(self, name, _vec(getattr(self, name), m, name))
        if self.terminal_storage is not None:
            self.terminal_storage = _vec(self.terminal_storage, n, "terminal_storage")
        for lo, hi in (("gen_lower", "gen_upper"), ("storage_lower", "storage_upper"),
                       ("charge_lower", "charge_upper"), ("flow_lower", "flow_upper")):
            if np.any(getattr(self, lo) > getattr(self, hi)):
                raise ValidationError(lo, f"{lo} exceeds {hi}")
        if np.any(self.dissipation <= 0) or np.any(self.dissipation > 1):
            raise ValidationError("dissipation", "must lie in (0, 1]")
        if np.any(self.susceptance == 0):
            raise ValidationError("susceptance", "must be nonzero")
        if np.any(self.gen_quadratic < 0) or np.any(self.flow_quadratic < 0):
            raise ValidationError("cost", "quadratic coefficients must be nonnegative")
        s1 = self.storage_initial
        if np.any(s1 < self.storage_lower) or np.any(s1 > self.storage_upper):
            raise ValidationError("storage_initial", "initial level outside storage bounds")

    @property
    def T(self) -> int:
        return self.horizon

    def cost(self, x, delta) -> float:
        """Time-averaged generation plus flow cost of ``(T, m)`` / ``(T, n)`` trajectories."""
        x = np.asarray(x, dtype=float)
        delta = np.asarray(delta, dtype=float)
        g = np.sum(self.gen_quadratic * delta**2 + self.gen_linear * delta)
        f = np.sum(self.flow_quadratic * x**2 + self.flow_linear * x)
        return float((g + f) / self.T)

    def storage_trajectory(self, u) -> np.ndarray:
        """Levels ``s(1..T+1)`` obtained by running the dynamics on ``u``."""
        u = np.asarray(u, dtype=float)
        s = np.empty((self.T + 1, self.graph.n))
        s[0] = self.storage_initial
        for t in range(self.T):
            s[t + 1] = self.dissipation * s[t] + u[t]
        return s


@dataclass
class OpfSolution:
    x: np.ndarray
    delta: np.ndarray
    u: np.ndarray
    s: np.ndarray
    theta: np.ndarray
    objective: float
    report: SolveReport
    z: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.report.ok


class _Layout:
    """Offsets of variable blocks in a stacked decision vector."""

    def __init__(self, **sizes):
        self.slices = {}
        pos = 0
        for name, size in sizes.items():
            self.slices[name] = slice(pos, pos + size)
            pos += size
        self.size = pos

    def __getitem__(self, name):
        return self.slices[name]


def _angle_map(g: OrientedGraph, susceptance, reference):
    """``(m, n-1)`` matrix sending free angles to ``b_e (theta_t - theta_h)``."""
    inc = build_incidence(g).astype(float)
    keep = [v for v in range(g.n) if v != reference]
    return susceptance[:, None] * inc.T[:, keep], keep


def _quadratic_terms(L, c, a, b, weight):
    """Hessian/gradient/constant of ``weight * sum(a y^2 + b y)`` with ``y = L w + c``."""
    P = 2.0 * weight * (L.T * a) @ L
    q = weight * L.T @ (2.0 * a * c + b)
    const = weight * float(np.sum(a * c * c + b * c))
    return P, q, const


@dataclass
class ReducedOpfProblem:
    problem: OpfProblem
    basis: CycleBasis
    elems: ElementarySolutionSet
    X: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.X = self.elems.matrix(self.problem.graph.n).astype(float)
        p = self.problem
        n, T, mu = p.graph.n, p.T, self.basis.mu
        self.layout = _Layout(z=T * mu, delta=T * n, u=T * n, theta=T * (n - 1))

    @property
    def reference(self) -> int:
        return self.elems.reference

    @property
    def variable_count(self) -> int:
        return self.layout.size

    @property
    def flow_variable_count(self) -> int:
        return self.problem.T * self.basis.mu

    def particular(self, delta, u, d) -> np.ndarray:
        """``X (delta + u + d)`` for one period."""
        return self.X @ (np.asarray(delta) + np.asarray(u) + np.asarray(d))

    def _flow_map(self, t):
        """Rows giving ``x(t) = L w + c``."""
        p, lay = self.problem, self.layout
        n, mu = p.graph.n, self.basis.mu
        L = np.zeros((p.graph.m, lay.size))
        zs, ds, us = lay["z"].start, lay["delta"].start, lay["u"].start
        L[:, zs + t * mu: zs + (t + 1) * mu] = self.basis.matrix.T
        L[:, ds + t * n: ds + (t + 1) * n] = self.X
        L[:, us + t * n: us + (t + 1) * n] = self.X
        return L, self.X @ p.loads[t]

    def to_qp(self) -> QpSpec:
        p, lay = self.problem, self.layout
        n, m, T, mu = p.graph.n, p.graph.m, p.T, self.basis.mu
        N = lay.size
        P = np.zeros((N, N))
        q = np.zeros(N)
        const = 0.0
        rows, lo, hi = [], [], []

        def add(A, l, u):
            rows.append(A)
            lo.append(np.broadcast_to(l, A.shape[0]).astype(float))
            hi.append(np.broadcast_to(u, A.shape[0]).astype(float))

        angle, keep = _angle_map(p.graph, p.susceptance, self.reference)
        ds, us, ths = lay["delta"].start, lay["u"].start, lay["theta"].start
        lam = p.dissipation
        for t in range(T):
            L, c = self._flow_map(t)
            Pt, qt, ct = _quadratic_terms(L, c, p.flow_quadratic, p.flow_linear, 1.0 / T)
            P += Pt
            q += qt
            const += ct
            G = np.zeros((n, N))
            G[:, ds + t * n: ds + (t + 1) * n] = np.eye(n)
            Pt, qt, ct = _quadratic_terms(G, np.zeros(n), p.gen_quadratic, p.gen_linear, 1.0 / T)
            P += Pt
            q += qt
            const += ct

            bal = np.zeros((1, N))
            bal[0, ds + t * n: ds + (t + 1) * n] = 1.0
            bal[0, us + t * n: us + (t + 1) * n] = 1.0
            total_load = -p.loads[t].sum()
            add(bal, total_load, total_load)

            # DC law: b (theta_t - theta_h) - (B'z + X(delta + u)) = X d
            dc = -L.copy()
            dc[:, ths + t * (n - 1): ths + (t + 1) * (n - 1)] += angle
            add(dc, c, c)

            add(L, p.flow_lower - c, p.flow_upper - c)
            add(G, p.gen_lower, p.gen_upper)
            U = np.zeros((n, N))
            U[:, us + t * n: us + (t + 1) * n] = np.eye(n)
            add(U, p.charge_lower, p.charge_upper)

            # s(t+2) = lam^(t+1) s(1) + sum_{tau<=t} lam^(t-tau) u(tau)
            S = np.zeros((n, N))
            for tau in range(t + 1):
                S[:, us + tau * n: us + (tau + 1) * n] = np.diag(lam ** (t - tau))
            base = lam ** (t + 1) * p.storage_initial
            if t == T - 1 and p.terminal_storage is not None:
                add(S, p.terminal_storage - base, p.terminal_storage - base)
            else:
                add(S, p.storage_lower - base, p.storage_upper - base)
        return QpSpec(P, q, np.vstack(rows), np.concatenate(lo), np.concatenate(hi), const)

    def decode(self, w, report: SolveReport) -> OpfSolution:
        p, lay = self.problem, self.layout
        n, T, mu = p.graph.n, p.T, self.basis.mu
        z = w[lay["z"]].reshape(T, mu)
        delta = w[lay["delta"]].reshape(T, n)
        u = w[lay["u"]].reshape(T, n)
        theta = np.zeros((T, n))
        keep = [v for v in range(n) if v != self.reference]
        theta[:, keep] = w[lay["theta"]].reshape(T, n - 1)
        x = np.array([self.basis.matrix.T @ z[t] + self.particular(delta[t], u[t], p.loads[t]) for t in range(T)])
        s = p.storage_trajectory(u)
        return OpfSolution(x, delta, u, s, theta, p.cost(x, delta), report, z)


def reduce_opf(p: OpfProblem, basis: CycleBasis, elems: ElementarySolutionSet) -> ReducedOpfProblem:
    """Replace the per-period arc flows by cycle flows plus the affine particular map.

    Raises
    ------
    UncertifiedInputs
        If the basis fails its certificate or ``elems`` does not hold an
        exact unit path flow for every non-reference bus.
    HorizonMismatch
        If the load profile does not span the horizon.
    """
    g = p.graph
    if p.loads.shape != (p.T, g.n):
        raise HorizonMismatch(f"loads {p.loads.shape} do not match horizon {p.T}")
    if basis.m != g.m or basis.n != g.n or not certify(g, basis):
        raise UncertifiedInputs("cycle basis failed its certificate for this graph")
    inc = build_incidence(g)
    ref = elems.reference
    for v in range(g.n):
        if v == ref:
            continue
        if v not in elems.columns:
            raise UncertifiedInputs(f"no elementary path flow for bus {v + 1}")
        target = np.zeros(g.n, dtype=np.int64)
        target[v], target[ref] = 1, -1
        if not np.array_equal(inc @ elems.columns[v], target):
            raise UncertifiedInputs(f"elementary flow for bus {v + 1} does not conserve")
    return ReducedOpfProblem(p, basis, elems)


def solve_opf(rp: ReducedOpfProblem, params: Optional[SolverParams] = None) -> OpfSolution:
    w, rep = solve_qp(rp.to_qp(), params)
    return rp.decode(w, rep)


def solve_opf_full(p: OpfProblem, params: Optional[SolverParams] = None, reference: Optional[int] = None) -> OpfSolution:
    """Solve the arc-space formulation directly (conservation kept, storage as variables)."""
    g = p.graph
    n, m, T = g.n, g.m, p.T
    ref = n - 1 if reference is None else reference
    lay = _Layout(x=T * m, delta=T * n, u=T * n, s=T * n, theta=T * (n - 1))
    N = lay.size
    P = np.zeros((N, N))
    q = np.zeros(N)
    rows, lo, hi = [], [], []

    def add(A, l, u):
        rows.append(A)
        lo.append(np.broadcast_to(l, A.shape[0]).astype(float))
        hi.append(np.broadcast_to(u, A.shape[0]).astype(float))

    inc = build_incidence(g).astype(float)
    angle, keep = _angle_map(g, p.susceptance, ref)
    xs, ds, us, ss, ths = (lay[k].start for k in ("x", "delta", "u", "s", "theta"))
    I_n = np.eye(n)
    for t in range(T):
        X = slice(xs + t * m, xs + (t + 1) * m)
        D = slice(ds + t * n, ds + (t + 1) * n)
        U = slice(us + t * n, us + (t + 1) * n)
        S = slice(ss + t * n, ss + (t + 1) * n)  # holds s(t+2)
        TH = slice(ths + t * (n - 1), ths + (t + 1) * (n - 1))
        P[X, X] += 2.0 / T * np.diag(p.flow_quadratic)
        q[X] += p.flow_linear / T
        P[D, D] += 2.0 / T * np.diag(p.gen_quadratic)
        q[D] += p.gen_linear / T

        A = np.zeros((n, N))
        A[:, X] = inc
        A[:, D] = -I_n
        A[:, U] = -I_n
        add(A, p.loads[t], p.loads[t])

        A = np.zeros((n, N))
        A[:, S] = I_n
        A[:, U] = -I_n
        if t == 0:
            rhs = p.dissipation * p.storage_initial
        else:
            A[:, ss + (t - 1) * n: ss + t * n] = -np.diag(p.dissipation)
            rhs = np.zeros(n)
        add(A, rhs, rhs)

        A = np.zeros((m, N))
        A[:, TH] = angle
        A[:, X] = -np.eye(m)
        add(A, 0.0, 0.0)

        for sl, size, l, u in ((X, m, p.flow_lower, p.flow_upper), (D, n, p.gen_lower, p.gen_upper),
                               (U, n, p.charge_lower, p.charge_upper)):
            A = np.zeros((size, N))
            A[:, sl] = np.eye(size)
            add(A, l, u)
        A = np.zeros((n, N))
        A[:, S] = I_n
        if t == T - 1 and p.terminal_storage is not None:
            add(A, p.terminal_storage, p.terminal_storage)
        else:
            add(A, p.storage_lower, p.storage_upper)

    spec = QpSpec(P, q, np.vstack(rows), np.concatenate(lo), np.concatenate(hi))
    w, rep = solve_qp(spec, params)
    x = w[lay["x"]].reshape(T, m)
    delta = w[lay["delta"]].reshape(T, n)
    u = w[lay["u"]].reshape(T, n)
    s = np.vstack([p.storage_initial, w[lay["s"]].reshape(T, n)])
    theta = np.zeros((T, n))
    theta[:, keep] = w[lay["theta"]].reshape(T, n - 1)
    return OpfSolution(x, delta, u, s, theta, p.cost(x, delta), rep)


@dataclass
class OpfResiduals:
    """Largest violation per constraint family plus the per-bus conservation residual."""

    families: dict
    conservation: np.ndarray

    def max(self) -> float:
        return max(self.families.values())

    def __getitem__(self, name):
        return self.families[name]


def validate_opf_solution(p: OpfProblem, sol: OpfSolution) -> OpfResiduals:
    """Check a lifted solution against every constraint of the arc-space problem."""
    n, m, T = p.graph.n, p.graph.m, p.T
    shapes = {"x": (T, m), "delta": (T, n), "u": (T, n), "s": (T + 1, n), "theta": (T, n)}
    for name, shape in shapes.items():
        if np.shape(getattr(sol, name)) != shape:
            raise ShapeMismatch(f"{name} has shape {np.shape(getattr(sol, name))}, expected {shape}")
    inc = build_incidence(p.graph)
    x, delta, u, s, theta = sol.x, sol.delta, sol.u, sol.s, sol.theta
    cons = x @ inc.T - (delta + u + p.loads)
    dyn = s[1:] - (p.dissipation * s[:-1] + u)
    dc = p.susceptance * (theta @ inc) - x
    bal = (delta + u + p.loads).sum(axis=1)

    def box(v, lo, hi):
        return float(np.max(np.maximum(lo - v, 0) + np.maximum(v - hi, 0), initial=0.0))

    fam = {
        "conservation": float(np.max(np.abs(cons), initial=0.0)),
        "dynamics": float(np.max(np.abs(dyn), initial=0.0)),
        "initial_storage": float(np.max(np.abs(s[0] - p.storage_initial), initial=0.0)),
        "dc_flow": float(np.max(np.abs(dc), initial=0.0)),
        "balance": float(np.max(np.abs(bal), initial=0.0)),
        "flow_bounds": box(x, p.flow_lower, p.flow_upper),
        "generation_bounds": box(delta, p.gen_lower, p.gen_upper),
        "charge_bounds": box(u, p.charge_lower, p.charge_upper),
        "storage_bounds": box(s[1:], p.storage_lower, p.storage_upper),
    }
    if p.terminal_storage is not None:
        fam["terminal_storage"] = float(np.max(np.abs(s[-1] - p.terminal_storage)))
    return OpfResiduals(fam, cons)
