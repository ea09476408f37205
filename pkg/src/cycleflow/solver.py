"""Operator-splitting solver for convex quadratic programs.

Problems have the form::

    minimize    0.5 x'Px + q'x + constant
    subject to  l <= Ax <= u

with equality rows written as ``l == u``.  Each iteration solves one
equality-constrained quadratic step against a cached factorization and
then projects onto the box ``[l, u]``, followed by a scaled dual update.
The penalty is fixed for the whole solve (equality rows get a constant
multiple of it), so the factorization is computed once.

On convergence the solver guesses the active set from the dual signs and
solves the reduced KKT system directly ("polishing").  A polished point is
accepted only if its residuals meet the tolerances and its multipliers have
the right signs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

__all__ = [
    "QpSpec",
    "SolverParams",
    "SolveReport",
    "Status",
    "solve_qp",
    "QpWorkspace",
    "kkt_residuals",
]

_EQ_RHO_SCALE = 1e3
_FREE_RHO = 1e-6
_INF = 1e20


@dataclass
class QpSpec:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        nv = self.q.size
        self.P = np.asarray(self.P, dtype=float).reshape(nv, nv)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, nv)
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        if not (self.l.size == self.u.size == self.A.shape[0]):
            raise ValueError(
                f"constraint rows: A has {self.A.shape[0]}, l has {self.l.size}, u has {self.u.size}"
            )
        if np.any(self.l > self.u):
            raise ValueError("lower bound above upper bound")
        if not np.allclose(self.P, self.P.T, atol=1e-12, rtol=1e-10):
            raise ValueError("P must be symmetric")

    @property
    def num_vars(self) -> int:
        return self.q.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x + self.constant)


@dataclass(frozen=True)
class SolverParams:
    rho: float = 1.0
    eps_abs: float = 1e-8
    eps_rel: float = 1e-6
    max_iterations: int = 50000
    alpha: float = 1.6
    sigma: float = 1e-6
    eps_infeasible: float = 1e-6
    scaling_passes: int = 10
    check_every: int = 10
    polish: bool = True

    def __post_init__(self):
        if self.rho <= 0 or self.eps_abs < 0 or self.eps_rel < 0 or self.sigma <= 0:
            raise ValueError("rho and sigma must be positive, tolerances nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not 1.0 <= self.alpha <= 1.8:
            raise ValueError("over-relaxation must lie in [1, 1.8]")


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


@dataclass
class SolveReport:
    status: Status
    iterations: int
    objective: float
    y: np.ndarray
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    combined_residuals: list = field(default_factory=list)
    polished: bool = False

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def trace_rows(self):
        """``(iteration, primal_res, dual_res, objective)`` per iteration."""
        return [
            (k + 1, p, d, o)
            for k, (p, d, o) in enumerate(
                zip(self.primal_residuals, self.dual_residuals, self.objectives)
            )
        ]


def kkt_residuals(spec: QpSpec, x, y) -> dict:
    """Stationarity, primal feasibility and complementarity residuals (inf-norms)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    Ax = spec.A @ x
    stat = spec.P @ x + spec.q + spec.A.T @ y
    prim = np.maximum(spec.l - Ax, 0) + np.maximum(Ax - spec.u, 0)
    up = np.where(y > 0, y * np.where(np.isfinite(spec.u), spec.u - Ax, _INF), 0.0)
    lo = np.where(y < 0, -y * np.where(np.isfinite(spec.l), Ax - spec.l, _INF), 0.0)
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(np.max(prim, initial=0.0)),
        "complementarity": float(np.max(np.abs(up) + np.abs(lo), initial=0.0)),
    }


def _ruiz(P, q, A, passes):
    """Modified Ruiz equilibration; returns variable, row and cost scalings."""
    nv, nc = P.shape[0], A.shape[0]
    D = np.ones(nv)
    E = np.ones(nc)
    Ps, As, qs = P.copy(), A.copy(), q.copy()
    for _ in range(passes):
        col = np.max(np.abs(np.vstack([Ps, As])), axis=0) if nc else np.max(np.abs(Ps), axis=0)
        dvec = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        dvec[col == 0] = 1.0
        evec = np.ones(nc)
        if nc:
            row = np.max(np.abs(As), axis=1)
            evec = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
            evec[row == 0] = 1.0
        Ps = dvec[:, None] * Ps * dvec[None, :]
        As = evec[:, None] * As * dvec[None, :]
        qs = dvec * qs
        D *= dvec
        E *= evec
    scale = max(np.mean(np.max(np.abs(Ps), axis=0)) if nv else 0.0, np.max(np.abs(qs), initial=0.0))
    c = 1.0 / np.clip(scale, 1e-4, 1e4) if scale > 0 else 1.0
    return D, E, c


class _Scaled:
    """Scaled copy of a QP with the fixed-penalty factorization cached."""

    def __init__(self, spec: QpSpec, params: SolverParams):
        self.spec = spec
        self.params = params
        if params.scaling_passes > 0:
            D, E, c = _ruiz(spec.P, spec.q, spec.A, params.scaling_passes)
        else:
            D, E, c = np.ones(spec.num_vars), np.ones(spec.A.shape[0]), 1.0
        self.D, self.E, self.c = D, E, c
        self.P = c * D[:, None] * spec.P * D[None, :]
        self.q = c * D * spec.q
        self.A = E[:, None] * spec.A * D[None, :]
        with np.errstate(invalid="ignore"):
            self.l = np.where(np.isfinite(spec.l), E * spec.l, -_INF)
            self.u = np.where(np.isfinite(spec.u), E * spec.u, _INF)
        rho = np.full(spec.A.shape[0], params.rho)
        eq = spec.l == spec.u
        rho[eq] *= _EQ_RHO_SCALE
        rho[(self.l <= -_INF) & (self.u >= _INF)] = _FREE_RHO
        self.rho = rho
        K = self.P + params.sigma * np.eye(spec.num_vars) + self.A.T @ (rho[:, None] * self.A)
        self.factor = sla.cho_factor(K)

    def unscale(self, xs, zs, ys):
        return self.D * xs, zs / self.E, self.E * ys / self.c

    def scale(self, x, z, y):
        return x / self.D, self.E * z, self.c * y / self.E


def _polish(spec: QpSpec, x, z, y, delta=1e-10, refine=5):
    nc = spec.A.shape[0]
    eq = spec.l == spec.u
    lower = eq | ((y < 0) & (z - spec.l < -y))
    upper = ~lower & (y > 0) & (spec.u - z < y)
    act = np.flatnonzero(lower | upper)
    Aa = spec.A[act]
    ba = np.where(lower[act], spec.l[act], spec.u[act])
    nv, na = spec.num_vars, act.size
    K = np.block([[spec.P, Aa.T], [Aa, np.zeros((na, na))]])
    Kreg = K + np.diag(np.r_[np.full(nv, delta), np.full(na, -delta)])
    rhs = np.r_[-spec.q, ba]
    try:
        lu = sla.lu_factor(Kreg)
    except (ValueError, np.linalg.LinAlgError):
        return None
    sol = sla.lu_solve(lu, rhs)
    for _ in range(refine):
        sol = sol + sla.lu_solve(lu, rhs - K @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:nv]
    yp = np.zeros(nc)
    yp[act] = sol[nv:]
    # multiplier signs must match the guessed sides
    tol = 1e-9 * max(1.0, np.max(np.abs(yp), initial=0.0))
    ineq_lo = lower & ~eq
    if np.any(yp[ineq_lo] > tol) or np.any(yp[upper] < -tol):
        return None
    Ax = spec.A @ xp
    return xp, np.clip(Ax, spec.l, spec.u), yp


def _residuals(spec, x, z, y):
    Ax = spec.A @ x
    Px = spec.P @ x
    Aty = spec.A.T @ y
    r_prim = np.max(np.abs(Ax - z), initial=0.0)
    r_dual = np.max(np.abs(Px + spec.q + Aty), initial=0.0)
    n_prim = max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0))
    n_dual = max(
        np.max(np.abs(Px), initial=0.0),
        np.max(np.abs(Aty), initial=0.0),
        np.max(np.abs(spec.q), initial=0.0),
    )
    return r_prim, r_dual, n_prim, n_dual


class QpWorkspace:
    """A QP with its scaling and factorization cached.

    The linear term and the bounds may be changed between solves with
    :meth:`update`; the Hessian, the constraint matrix and the penalty stay
    fixed, so the factorization is reused.
    """

    def __init__(self, spec: QpSpec, params: Optional[SolverParams] = None):
        self.params = params or SolverParams()
        self.spec = spec
        self._scaled = _Scaled(spec, self.params)

    def update(self, q=None, l=None, u=None, constant=None) -> None:
        spec, S = self.spec, self._scaled
        if q is not None:
            spec.q = np.asarray(q, dtype=float).ravel()
            S.q = S.c * S.D * spec.q
        if l is not None or u is not None:
            if l is not None:
                spec.l = np.asarray(l, dtype=float).ravel()
            if u is not None:
                spec.u = np.asarray(u, dtype=float).ravel()
            if np.any(spec.l > spec.u):
                raise ValueError("lower bound above upper bound")
            with np.errstate(invalid="ignore"):
                S.l = np.where(np.isfinite(spec.l), S.E * spec.l, -_INF)
                S.u = np.where(np.isfinite(spec.u), S.E * spec.u, _INF)
        if constant is not None:
            spec.constant = float(constant)

    def solve(self, x0=None, y0=None, record: bool = True):
        """Run the splitting iterations; returns ``(x, SolveReport)``."""
        spec, params, S = self.spec, self.params, self._scaled
        nv, nc = spec.num_vars, spec.A.shape[0]

        x = np.zeros(nv) if x0 is None else np.asarray(x0, dtype=float).copy()
        y = np.zeros(nc) if y0 is None else np.asarray(y0, dtype=float).copy()
        z = np.clip(spec.A @ x, spec.l, spec.u)
        report = SolveReport(Status.MAX_ITERATIONS, 0, np.nan, y)

        if params.polish and x0 is not None and y0 is not None:
            # a warm start usually carries the right active set already
            pol = _polish(spec, x, z, y)
            if pol is not None:
                rp, rd, npn, ndn = _residuals(spec, *pol)
                if rp <= params.eps_abs + params.eps_rel * npn and rd <= params.eps_abs + params.eps_rel * ndn:
                    x, _, y = pol
                    report.status = Status.OPTIMAL
                    report.polished = True
                    report.y = y
                    report.objective = spec.objective(x)
                    return x, report

        xs, zs, ys = S.scale(x, z, y)
        alpha, sigma, rho = params.alpha, params.sigma, S.rho
        Ast = S.A.T
        last_polish = -np.inf
        eps_abs, eps_rel = params.eps_abs, params.eps_rel

        for k in range(1, params.max_iterations + 1):
            rhs = sigma * xs - S.q + Ast @ (rho * zs - ys)
            xt = sla.cho_solve(S.factor, rhs)
            zt = S.A @ xt
            xs_new = alpha * xt + (1 - alpha) * xs
            zr = alpha * zt + (1 - alpha) * zs
            zs_new = np.clip(zr + ys / rho, S.l, S.u)
            ys_new = ys + rho * (zr - zs_new)
            dy = ys_new - ys
            if record:
                # splitting fixed-point residual; non-increasing in this metric
                dx = xs_new - xs
                dv = (zs_new - zs) + dy / rho
                report.combined_residuals.append(float(np.sqrt(sigma * dx @ dx + np.sum(rho * dv * dv))))
            xs, zs, ys = xs_new, zs_new, ys_new

            check = record or k % params.check_every == 0 or k == params.max_iterations
            if not check:
                continue
            x, z, y = S.unscale(xs, zs, ys)
            r_prim, r_dual, n_prim, n_dual = _residuals(spec, x, z, y)
            report.iterations = k
            if record:
                report.primal_residuals.append(float(r_prim))
                report.dual_residuals.append(float(r_dual))
                report.objectives.append(spec.objective(x))
            if k % params.check_every and k != params.max_iterations:
                continue
            eps_p = eps_abs + eps_rel * n_prim
            eps_d = eps_abs + eps_rel * n_dual
            if r_prim <= eps_p and r_dual <= eps_d:
                report.status = Status.OPTIMAL
                break
            if (
                params.polish
                and r_prim <= 1e3 * eps_p
                and r_dual <= 1e3 * eps_d
                and k - last_polish >= 5 * params.check_every
            ):
                last_polish = k
                pol = _polish(spec, x, z, y)
                if pol is not None:
                    rp, rd, npn, ndn = _residuals(spec, *pol)
                    if rp <= eps_abs + eps_rel * npn and rd <= eps_abs + eps_rel * ndn:
                        x, z, y = pol
                        report.status = Status.OPTIMAL
                        report.polished = True
                        break
            if _certifies_infeasible(S, dy, params.eps_infeasible):
                report.status = Status.INFEASIBLE
                break

        if not report.polished:
            x, z, y = S.unscale(xs, zs, ys)
        if report.status is Status.OPTIMAL and params.polish and not report.polished:
            pol = _polish(spec, x, z, y)
            if pol is not None:
                rp, rd, _, _ = _residuals(spec, *pol)
                r_prim, r_dual, _, _ = _residuals(spec, x, z, y)
                if rp <= max(r_prim, 1e-12) and rd <= max(r_dual, 1e-12):
                    x, z, y = pol
                    report.polished = True
        report.y = y
        report.objective = spec.objective(x) if report.status is not Status.INFEASIBLE else np.nan
        return x, report


def solve_qp(
    spec: QpSpec,
    params: Optional[SolverParams] = None,
    x0=None,
    y0=None,
    record: bool = True,
):
    """Solve ``spec``; returns ``(x, SolveReport)``.

    ``x0`` and ``y0`` warm-start the primal and dual iterates.  Non-optimal
    outcomes are reported through ``SolveReport.status`` rather than raised.
    """
    return QpWorkspace(spec, params).solve(x0, y0, record)


def _certifies_infeasible(S: _Scaled, dy, eps) -> bool:
    """Farkas-type test on the dual increment: A'dy ~ 0 with negative support."""
    dy_un = S.E * dy
    norm = np.max(np.abs(dy_un), initial=0.0)
    if norm < 1e-12:
        return False
    if np.max(np.abs((S.A.T @ dy) / S.D), initial=0.0) > eps * norm:
        return False
    pos, neg = np.maximum(dy, 0), np.minimum(dy, 0)
    if np.any((pos > 0) & (S.u >= _INF)) or np.any((neg < 0) & (S.l <= -_INF)):
        return False
    support = np.sum(np.where(pos > 0, S.u * pos, 0.0)) + np.sum(np.where(neg < 0, S.l * neg, 0.0))
    return support < -eps * norm
