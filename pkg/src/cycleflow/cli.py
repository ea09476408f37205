"""Command-line interface: ``cycleflow <command> ...``.

Exit codes: 0 on success, 1 when an input fails validation, 2 when a solver
does not converge.  Node numbers typed on the command line and printed in
messages count from 1; node indices inside JSON files count from 0.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import io
from .cycles import certify, fundamental_basis, horton_basis
from .distributed import AdmmParams, build_cyber_layer, run
from .errors import (
    CycleflowError,
    HorizonMismatch,
    MaxRounds,
    ParseError,
    ShapeMismatch,
    UnbalancedInjection,
    UncertifiedInputs,
    ValidationError,
)
from .graph import OrientedGraph
from .maxflow import check_capacity_feasibility, max_flow
from .opf import OpfProblem, reduce_opf, solve_opf, solve_opf_full, validate_opf_solution
from .reduction import (
    FlowProblem,
    elementary_solutions,
    particular_solution,
    reduce,
    solve_full,
    solve_reduced,
)
from .solver import SolverParams

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2

_INVALID = (
    ValidationError,
    ParseError,
    UncertifiedInputs,
    UnbalancedInjection,
    ShapeMismatch,
    HorizonMismatch,
)


class NotConverged(CycleflowError):
    pass


def _emit(doc, out: Optional[str]) -> None:
    text = io.write_json(doc, out)
    if out is None:
        sys.stdout.write(text)


def _basis_for(g: OrientedGraph, path: Optional[str], method: str = "horton"):
    if path is None:
        return horton_basis(g) if method == "horton" else fundamental_basis(g)
    basis = io.load_basis(path, g)
    if not certify(g, basis):
        raise UncertifiedInputs(f"{path}: not an independent cycle basis of the graph")
    return basis


def _flow_problem(path: str) -> FlowProblem:
    p = io.load_problem(path)
    if not isinstance(p, FlowProblem):
        raise ValidationError("kind", "expected a flow problem")
    return p


def _nodes(text: str, n: int, flag: str) -> list[int]:
    try:
        labels = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(flag, f"expected comma-separated node numbers, got {text!r}") from None
    for v in labels:
        if not 1 <= v <= n:
            raise ValidationError(flag, f"node {v} out of range 1..{n}")
    return [v - 1 for v in labels]


def _solver_params(args) -> SolverParams:
    return SolverParams(
        rho=args.rho, eps_abs=args.eps_abs, eps_rel=args.eps_rel, max_iterations=args.max_iter
    )


# -- commands -------------------------------------------------------------------


def cmd_basis(args) -> int:
    g = io.load_graph(args.graph)
    basis = horton_basis(g) if args.method == "horton" else fundamental_basis(g)
    _emit(io.basis_to_dict(basis), args.out)
    return EXIT_OK


def cmd_reduce(args) -> int:
    p = _flow_problem(args.problem)
    basis = _basis_for(p.graph, args.basis, args.method)
    xp = particular_solution(elementary_solutions(p.graph), p.injections)
    _emit(io.reduced_to_dict(reduce(p, basis, xp)), args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    p = _flow_problem(args.problem)
    if not check_capacity_feasibility(p):
        raise ValidationError("injections", "cannot be routed within the arc bounds")
    params = _solver_params(args)
    if args.reduced:
        basis = _basis_for(p.graph, args.reduced)
        xp = particular_solution(elementary_solutions(p.graph), p.injections)
        sol = solve_reduced(reduce(p, basis, xp), params)
    else:
        sol = solve_full(p, params)
    if args.trace and sol.report.iterations:
        io.emit_solver_trace(sol.report, args.trace)
    _emit(io.solution_to_dict(sol), args.out)
    if not sol.ok:
        raise NotConverged(f"solver stopped with status {sol.report.status.value}")
    return EXIT_OK


def cmd_maxflow(args) -> int:
    doc = io.read_json(args.problem)
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "flow":
        p = io.problem_from_dict(doc)
        g = p.graph
        cap = np.maximum(p.upper, 0.0)
        rev = np.maximum(-p.lower, 0.0)
    else:
        g = io.load_graph(args.problem)
        p = None
        cap = rev = np.array([1.0] * g.m if args.unit else g.weights)
    if args.sources is None or args.sinks is None:
        if p is None:
            raise ValidationError("--sources", "required unless the file is a flow problem")
        f = np.asarray(p.injections, dtype=float)
        sources = [int(v) for v in np.flatnonzero(f > 0)]
        sinks = [int(v) for v in np.flatnonzero(f < 0)]
    else:
        sources = _nodes(args.sources, g.n, "--sources")
        sinks = _nodes(args.sinks, g.n, "--sinks")
    res = max_flow(g, sources, sinks, cap, rev)
    doc = {
        "format": io.FORMAT,
        "kind": "maxflow",
        "value": res.value,
        "cut_value": res.cut_value,
        "certified": bool(res.certified),
        "source_side": sorted(res.source_side),
        "flows": [float(x) for x in res.flows],
    }
    if p is not None:
        doc["injections_feasible"] = bool(check_capacity_feasibility(p))
    _emit(doc, args.out)
    return EXIT_OK


def cmd_opf(args) -> int:
    p = io.load_problem(args.problem)
    if not isinstance(p, OpfProblem):
        raise ValidationError("kind", "expected an opf problem")
    params = _solver_params(args)
    if args.full:
        sol = solve_opf_full(p, params)
    else:
        basis = _basis_for(p.graph, args.basis)
        sol = solve_opf(reduce_opf(p, basis, elementary_solutions(p.graph)), params)
    residuals = validate_opf_solution(p, sol)
    _emit(io.solution_to_dict(sol, residuals), args.out)
    if not sol.ok:
        raise NotConverged(f"solver stopped with status {sol.report.status.value}")
    return EXIT_OK


def _references(path: str, phases: int):
    doc = io.read_json(path)
    if isinstance(doc, dict) and doc.get("kind") == "solution":
        flows = [doc.get("x")]
    elif isinstance(doc, dict) and doc.get("kind") == "reference":
        flows = doc.get("flows")
    else:
        raise ValidationError("kind", "reference must be a solution or reference document")
    if not isinstance(flows, list) or len(flows) != phases:
        raise ValidationError("flows", f"expected one reference flow vector per phase ({phases})")
    return [np.asarray(x, dtype=float) for x in flows]


def cmd_simulate(args) -> int:
    p = _flow_problem(args.problem)
    g = p.graph
    basis = _basis_for(g, args.basis)
    schedule = io.load_schedule(args.schedule, g.n) if args.schedule else None
    entries = schedule or []
    for e in entries:
        if not check_capacity_feasibility(p.with_injections(e.injections)):
            raise ValidationError("schedule", f"injections from round {e.round} cannot be routed")
    if not check_capacity_feasibility(p):
        raise ValidationError("injections", "cannot be routed within the arc bounds")
    elems = elementary_solutions(g)
    layer = build_cyber_layer(basis, particular_solution(elems, p.injections), g)
    phases = len(entries) + (0 if entries and entries[0].round == 0 else 1) if entries else 1
    refs = _references(args.reference, phases) if args.reference else None
    params = AdmmParams(rho=args.rho, eps=args.eps, max_rounds=args.max_rounds, workers=args.workers)
    failure = None
    try:
        result = run(p, layer, params, schedule=schedule, references=refs, elements=elems)
    except MaxRounds as exc:
        result, failure = exc.result, exc
    if args.trace:
        io.emit_trace(result.trace, args.trace)
    summary = {
        "format": io.FORMAT,
        "kind": "simulation",
        "agents": layer.size,
        "rounds": result.rounds,
        "converged": result.converged,
        "max_error": result.trace.lifted_error[-1] if result.rounds else 0.0,
        "x": [float(v) for v in result.x],
        "z": [float(v) for v in result.z],
    }
    _emit(summary, args.out)
    if failure is not None:
        raise NotConverged(str(failure))
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = io.read_json(args.file)
    if isinstance(doc, list):
        entries = io.schedule_from_doc(doc)
        print(f"ok: schedule with {len(entries)} entries")
        return EXIT_OK
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "basis":
        if not args.graph:
            raise ValidationError("--graph", "a basis is validated against a graph")
        g = io.load_graph(args.graph)
        basis = io.basis_from_dict(doc, g)
        cert = certify(g, basis)
        if not cert:
            raise UncertifiedInputs(
                f"orthogonal={cert.orthogonality}, rank GF(2)={cert.rank_gf2}, "
                f"rank Q={cert.rank_rational}, expected {cert.mu}"
            )
        print(f"ok: basis with {basis.mu} certified cycles")
    elif kind == "schedule":
        entries = io.schedule_from_doc(doc)
        print(f"ok: schedule with {len(entries)} entries")
    elif kind == "graph":
        g = io.graph_from_dict(doc) if doc.get("format") == io.FORMAT else None
        if g is None:
            raise ValidationError("format", f"expected {io.FORMAT}, got {doc.get('format')!r}")
        print(f"ok: graph with {g.n} nodes, {g.m} arcs")
    else:
        p = io.problem_from_dict(doc)
        label = "flow" if isinstance(p, FlowProblem) else "opf"
        print(f"ok: {label} problem with {p.graph.n} nodes, {p.graph.m} arcs")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _add_solver_flags(sp) -> None:
    d = SolverParams()
    sp.add_argument("--rho", type=float, default=d.rho, help="penalty parameter (default %(default)s)")
    sp.add_argument("--eps-abs", type=float, default=d.eps_abs, help="absolute tolerance (default %(default)s)")
    sp.add_argument("--eps-rel", type=float, default=d.eps_rel, help="relative tolerance (default %(default)s)")
    sp.add_argument("--max-iter", type=int, default=d.max_iterations, help="iteration limit (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cycleflow",
        description="Cycle-basis reduction and solution of network flow problems.",
        epilog="Exit codes: 0 success, 1 invalid input, 2 solver did not converge.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("basis", help="compute a cycle basis of a graph")
    sp.add_argument("graph", help="graph, flow or opf JSON file")
    sp.add_argument("--method", choices=("tree", "horton"), default="horton",
                    help="BFS-tree fundamental basis or minimum-weight basis (default %(default)s)")
    sp.add_argument("--out", help="write the basis JSON here instead of stdout")
    sp.set_defaults(func=cmd_basis)

    sp = sub.add_parser("reduce", help="write the cycle-flow form of a flow problem")
    sp.add_argument("problem", help="flow problem JSON file")
    sp.add_argument("--basis", help="basis JSON file (computed with --method when omitted)")
    sp.add_argument("--method", choices=("tree", "horton"), default="horton",
                    help="basis constructor when --basis is omitted (default %(default)s)")
    sp.add_argument("--out", help="write the reduced problem here instead of stdout")
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("solve", help="solve a minimum-cost flow problem")
    sp.add_argument("problem", help="flow problem JSON file")
    sp.add_argument("--reduced", metavar="BASIS", help="solve in cycle space using this basis JSON file")
    sp.add_argument("--trace", help="write per-iteration residuals to this CSV file")
    sp.add_argument("--out", help="write the solution JSON here instead of stdout")
    _add_solver_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("maxflow", help="maximum flow and minimum cut")
    sp.add_argument("problem", help="graph or flow problem JSON file")
    sp.add_argument("--sources", help="comma-separated source nodes, numbered from 1 "
                    "(default: nodes with positive injection)")
    sp.add_argument("--sinks", help="comma-separated sink nodes, numbered from 1 "
                    "(default: nodes with negative injection)")
    sp.add_argument("--unit", action="store_true",
                    help="for graph files, give every arc capacity 1 instead of its weight")
    sp.add_argument("--out", help="write the result JSON here instead of stdout")
    sp.set_defaults(func=cmd_maxflow)

    sp = sub.add_parser("opf", help="solve a multi-period DC optimal power flow")
    sp.add_argument("problem", help="opf problem JSON file")
    sp.add_argument("--basis", help="basis JSON file (minimum-weight basis when omitted)")
    sp.add_argument("--full", action="store_true", help="solve the arc-space formulation instead")
    sp.add_argument("--out", help="write the trajectory JSON here instead of stdout")
    _add_solver_flags(sp)
    sp.set_defaults(func=cmd_opf)

    d = AdmmParams()
    sp = sub.add_parser("simulate", help="run the distributed cycle-agent algorithm")
    sp.add_argument("problem", help="flow problem JSON file")
    sp.add_argument("--basis", help="basis JSON file (minimum-weight basis when omitted)")
    sp.add_argument("--schedule", help='JSON list of {"round": r, "injections": [...]} switches')
    sp.add_argument("--trace", help="write the per-round, per-agent trace to this CSV file")
    sp.add_argument("--reference", help="solution or reference JSON with the optimal flows per phase "
                    "(computed centrally when omitted)")
    sp.add_argument("--rho", type=float, default=d.rho, help="consensus penalty (default %(default)s)")
    sp.add_argument("--eps", type=float, default=d.eps, help="stopping tolerance (default %(default)s)")
    sp.add_argument("--max-rounds", type=int, default=d.max_rounds, help="round limit (default %(default)s)")
    sp.add_argument("--workers", type=int, default=1, help="threads for the local solves (default 1)")
    sp.add_argument("--out", help="write the run summary JSON here instead of stdout")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="check a JSON document against its schema")
    sp.add_argument("file", help="graph, flow, opf, basis or schedule JSON file")
    sp.add_argument("--graph", help="graph the basis belongs to (basis files only)")
    sp.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"error: not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except _INVALID as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CycleflowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
