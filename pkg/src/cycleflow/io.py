"""JSON documents, bundled fixtures and CSV traces.

Every document is a JSON object with ``"format": 1`` and a ``"kind"`` naming
its schema (``graph``, ``flow``, ``opf``, ``basis``, ``schedule``,
``solution``, ``reduced``).  Node and arc indices are zero-based in files;
error messages count from one.  Infinite bounds are written as ``null``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .cycles import CycleBasis
from .distributed import RoundTrace, ScheduleEntry
from .errors import GraphError, IoError, ParseError, UnbalancedInjection, ValidationError
from .graph import OrientedGraph
from .opf import OpfProblem, OpfResiduals, OpfSolution
from .reduction import FlowProblem, FlowSolution, ReducedFlowProblem, check_balanced
from .solver import SolveReport

__all__ = [
    "FORMAT",
    "IEEE30_SHA256",
    "graph_checksum",
    "read_json",
    "write_json",
    "graph_from_dict",
    "graph_to_dict",
    "problem_from_dict",
    "problem_to_dict",
    "basis_from_dict",
    "basis_to_dict",
    "schedule_from_doc",
    "schedule_to_dict",
    "solution_to_dict",
    "reduced_to_dict",
    "load_graph",
    "load_problem",
    "load_basis",
    "load_schedule",
    "load_fixture",
    "fixture_path",
    "ieee30_graph",
    "emit_trace",
    "emit_solver_trace",
]

FORMAT = 1
IEEE30_SHA256 = "95dc1970bca2eb88e1e6284ce0090f0c876294d6f7d121ea2fdd2318f9bda6f3"

PathLike = Union[str, Path]


def graph_checksum(g: OrientedGraph) -> str:
    """SHA-256 of the node count and the ordered arc list."""
    text = f"{g.n};" + ";".join(f"{t},{h}" for t, h in g.arcs)
    return hashlib.sha256(text.encode()).hexdigest()


# -- low-level helpers ------------------------------------------------------


def read_json(path: PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def write_json(doc, path: Optional[PathLike] = None) -> str:
    """Serialise ``doc``; write it to ``path`` when given.  Returns the text."""
    text = json.dumps(doc, indent=1, allow_nan=False) + "\n"
    if path is not None:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IoError(f"{path}: {exc.strerror}") from None
    return text


def _check_header(doc, kinds) -> str:
    if not isinstance(doc, dict):
        raise ValidationError("document", "expected a JSON object")
    if doc.get("format") != FORMAT:
        raise ValidationError("format", f"expected {FORMAT}, got {doc.get('format')!r}")
    kind = doc.get("kind", kinds[0])
    if kind not in kinds:
        raise ValidationError("kind", f"expected one of {', '.join(kinds)}, got {kind!r}")
    return kind


def _get(doc, key, where=""):
    if key not in doc:
        raise ValidationError(where + key, "missing")
    return doc[key]


def _number(value, field, allow_none=None) -> float:
    if value is None and allow_none is not None:
        return allow_none
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(field, f"expected a number, got {value!r}")
    return float(value)


def _int(value, field) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(field, f"expected an integer, got {value!r}")
    return value


def _vector(value, size, field, allow_scalar=True) -> np.ndarray:
    if allow_scalar and not isinstance(value, list):
        return np.full(size, _number(value, field))
    if not isinstance(value, list) or len(value) != size:
        raise ValidationError(field, f"expected a list of {size} numbers")
    return np.array([_number(v, f"{field}[{i}]") for i, v in enumerate(value)])


def _injections(value, n) -> np.ndarray:
    if not isinstance(value, list) or len(value) != n:
        raise ValidationError("injections", f"expected a list of {n} numbers")
    for i, v in enumerate(value):
        _number(v, f"injections[{i}]")
    f = np.array(value) if all(isinstance(v, int) for v in value) else np.array(value, dtype=float)
    try:
        check_balanced(f)
    except UnbalancedInjection:
        raise ValidationError("injections", "unbalanced") from None
    return f


def _bound(x: float):
    return None if math.isinf(x) else float(x)


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _plain(a) -> list:
    a = np.asarray(a)
    return [int(v) for v in a] if a.dtype.kind in "iu" else [float(v) for v in a]


# -- graphs ---------------------------------------------------------------------


def graph_from_dict(doc) -> OrientedGraph:
    n = _int(_get(doc, "nodes"), "nodes")
    if n < 1:
        raise ValidationError("nodes", "need at least one node")
    arcs_doc = _get(doc, "arcs")
    if not isinstance(arcs_doc, list):
        raise ValidationError("arcs", "expected a list")
    arcs, weights = [], []
    for k, arc in enumerate(arcs_doc):
        where = f"arcs[{k}]"
        if not isinstance(arc, dict):
            raise ValidationError(where, "expected an object")
        t = _int(_get(arc, "tail", where + "."), where + ".tail")
        h = _int(_get(arc, "head", where + "."), where + ".head")
        for name, v in (("tail", t), ("head", h)):
            if not 0 <= v < n:
                raise ValidationError(f"{where}.{name}", f"node {v + 1} out of range 1..{n}")
        arcs.append((t, h))
        weights.append(_number(arc.get("weight", 1.0), where + ".weight"))
    try:
        return OrientedGraph(n, tuple(arcs), tuple(weights))
    except GraphError as exc:
        raise ValidationError("arcs", str(exc)) from None


def graph_to_dict(g: OrientedGraph, name: Optional[str] = None) -> dict:
    doc = {"format": FORMAT, "kind": "graph"}
    if name:
        doc["name"] = name
    doc["nodes"] = g.n
    arcs = []
    for (t, h), w in zip(g.arcs, g.weights):
        arc = {"tail": t, "head": h}
        if w != 1.0:
            arc["weight"] = w
        arcs.append(arc)
    doc["arcs"] = arcs
    return doc


# -- problems -------------------------------------------------------------------


def _arc_field(arcs_doc, key, default, k_field):
    out = []
    for k, arc in enumerate(arcs_doc):
        value = arc.get(key, default) if default is not _MISSING else _get(arc, key, f"arcs[{k}].")
        out.append(_number(value, f"arcs[{k}].{key}", allow_none=k_field))
    return np.array(out)


_MISSING = object()


def _arc_costs(arcs_doc):
    a, b = [], []
    for k, arc in enumerate(arcs_doc):
        cost = arc.get("cost", {})
        if not isinstance(cost, dict):
            raise ValidationError(f"arcs[{k}].cost", "expected an object")
        a.append(_number(cost.get("quadratic", 0.0), f"arcs[{k}].cost.quadratic"))
        b.append(_number(cost.get("linear", 0.0), f"arcs[{k}].cost.linear"))
    return np.array(a), np.array(b)


def _flow_from_dict(doc) -> FlowProblem:
    g = graph_from_dict(doc)
    arcs_doc = doc["arcs"]
    lower = _arc_field(arcs_doc, "lower", None, -np.inf)
    upper = _arc_field(arcs_doc, "upper", None, np.inf)
    a, b = _arc_costs(arcs_doc)
    f = _injections(_get(doc, "injections"), g.n)
    return FlowProblem(g, lower, upper, a, b, f)


def _opf_from_dict(doc) -> OpfProblem:
    g = graph_from_dict(doc)
    n = g.n
    arcs_doc = doc["arcs"]
    sus = _arc_field(arcs_doc, "susceptance", _MISSING, None)
    lower = _arc_field(arcs_doc, "lower", None, -np.inf)
    upper = _arc_field(arcs_doc, "upper", None, np.inf)
    a, b = _arc_costs(arcs_doc)
    loads = _get(doc, "loads")
    if not isinstance(loads, list) or not loads:
        raise ValidationError("loads", "expected a list of per-period node vectors")
    T = _int(doc.get("horizon", len(loads)), "horizon")
    if len(loads) != T:
        raise ValidationError("loads", f"horizon is {T} but {len(loads)} periods are given")
    loads = np.array([_vector(row, n, f"loads[{t}]", allow_scalar=False) for t, row in enumerate(loads)])
    gen = _get(doc, "generators")
    sto = _get(doc, "storage")
    for name, block in (("generators", gen), ("storage", sto)):
        if not isinstance(block, dict):
            raise ValidationError(name, "expected an object")

    def node_vec(block, key, where, default=_MISSING):
        value = _get(block, key, where + ".") if default is _MISSING else block.get(key, default)
        if value is None:
            value = np.inf if key.endswith("upper") else -np.inf
            return np.full(n, value)
        return _vector(value, n, f"{where}.{key}")

    terminal = sto.get("terminal")
    return OpfProblem(
        g,
        loads,
        node_vec(gen, "lower", "generators"),
        node_vec(gen, "upper", "generators"),
        node_vec(gen, "quadratic", "generators", 0.0),
        node_vec(gen, "linear", "generators", 0.0),
        node_vec(sto, "lower", "storage", 0.0),
        node_vec(sto, "upper", "storage", 0.0),
        node_vec(sto, "initial", "storage", 0.0),
        node_vec(sto, "dissipation", "storage", 1.0),
        node_vec(sto, "charge_lower", "storage", 0.0),
        node_vec(sto, "charge_upper", "storage", 0.0),
        sus,
        lower,
        upper,
        a,
        b,
        horizon=T,
        terminal_storage=None if terminal is None else _vector(terminal, n, "storage.terminal"),
    )


def problem_from_dict(doc) -> Union[FlowProblem, OpfProblem]:
    kind = _check_header(doc, ("flow", "opf"))
    return _flow_from_dict(doc) if kind == "flow" else _opf_from_dict(doc)


def problem_to_dict(problem: Union[FlowProblem, OpfProblem]) -> dict:
    g = problem.graph
    if isinstance(problem, FlowProblem):
        arcs = []
        for k, (t, h) in enumerate(g.arcs):
            arcs.append({
                "tail": t, "head": h,
                "lower": _bound(problem.lower[k]), "upper": _bound(problem.upper[k]),
                "cost": {"quadratic": float(problem.quadratic[k]), "linear": float(problem.linear[k])},
            })
        return {"format": FORMAT, "kind": "flow", "nodes": g.n, "arcs": arcs,
                "injections": _plain(problem.injections)}
    p = problem
    arcs = []
    for k, (t, h) in enumerate(g.arcs):
        arcs.append({
            "tail": t, "head": h, "susceptance": float(p.susceptance[k]),
            "lower": _bound(p.flow_lower[k]), "upper": _bound(p.flow_upper[k]),
            "cost": {"quadratic": float(p.flow_quadratic[k]), "linear": float(p.flow_linear[k])},
        })

    def vec(a):
        return [_bound(v) for v in a]

    storage = {
        "lower": vec(p.storage_lower), "upper": vec(p.storage_upper),
        "initial": _floats(p.storage_initial), "dissipation": _floats(p.dissipation),
        "charge_lower": vec(p.charge_lower), "charge_upper": vec(p.charge_upper),
    }
    if p.terminal_storage is not None:
        storage["terminal"] = _floats(p.terminal_storage)
    return {
        "format": FORMAT, "kind": "opf", "nodes": g.n, "arcs": arcs,
        "horizon": p.T, "loads": [_floats(row) for row in p.loads],
        "generators": {"lower": vec(p.gen_lower), "upper": vec(p.gen_upper),
                       "quadratic": _floats(p.gen_quadratic), "linear": _floats(p.gen_linear)},
        "storage": storage,
    }


# -- bases, schedules, solutions ------------------------------------------------


def basis_to_dict(basis: CycleBasis) -> dict:
    return {
        "format": FORMAT, "kind": "basis", "nodes": basis.n, "arcs": basis.m,
        "source": basis.source, "mu": basis.mu,
        "matrix": [[int(v) for v in row] for row in basis.matrix],
        "cycles": [[a for a, _ in c.walk] for c in basis.cycles],
    }


def basis_from_dict(doc, graph: OrientedGraph) -> CycleBasis:
    """Rebuild a basis for ``graph``; its exactness is checked by the caller."""
    _check_header(doc, ("basis",))
    if doc.get("nodes", graph.n) != graph.n or doc.get("arcs", graph.m) != graph.m:
        raise ValidationError("nodes", "basis was written for a different graph")
    rows = _get(doc, "matrix")
    if not isinstance(rows, list):
        raise ValidationError("matrix", "expected a list of rows")
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != graph.m:
            raise ValidationError(f"matrix[{i}]", f"expected {graph.m} entries")
        if any(v not in (-1, 0, 1) or isinstance(v, bool) for v in row):
            raise ValidationError(f"matrix[{i}]", "entries must be -1, 0 or +1")
    B = np.array(rows, dtype=np.int64).reshape(len(rows), graph.m)
    basis = CycleBasis.from_matrix(graph, B, source=doc.get("source", "file"))
    if "cycles" in doc:
        listed = [sorted(c) for c in doc["cycles"]]
        if listed != [list(c.arcs) for c in basis.cycles]:
            raise ValidationError("cycles", "arc lists disagree with the matrix")
    return basis


def schedule_from_doc(doc, n: Optional[int] = None) -> list[ScheduleEntry]:
    """Accept a bare ``[{"round", "injections"}]`` list or a versioned object."""
    if isinstance(doc, dict):
        _check_header(doc, ("schedule",))
        doc = _get(doc, "entries")
    if not isinstance(doc, list) or not doc:
        raise ValidationError("schedule", "expected a nonempty list of entries")
    out = []
    for i, e in enumerate(doc):
        if not isinstance(e, dict):
            raise ValidationError(f"entries[{i}]", "expected an object")
        r = _int(_get(e, "round", f"entries[{i}]."), f"entries[{i}].round")
        if r < 0:
            raise ValidationError(f"entries[{i}].round", "must be nonnegative")
        inj = _get(e, "injections", f"entries[{i}].")
        size = len(inj) if n is None and isinstance(inj, list) else n
        try:
            f = _injections(inj, size)
        except ValidationError as exc:
            raise ValidationError(f"entries[{i}].injections", exc.reason) from None
        out.append(ScheduleEntry(r, f))
    rounds = [e.round for e in out]
    if len(set(rounds)) != len(rounds):
        raise ValidationError("schedule", "duplicate switch rounds")
    return sorted(out, key=lambda e: e.round)


def schedule_to_dict(entries) -> dict:
    return {
        "format": FORMAT, "kind": "schedule",
        "entries": [{"round": int(e.round), "injections": _plain(e.injections)} for e in entries],
    }


def _report_dict(rep: SolveReport) -> dict:
    return {"status": rep.status.value, "iterations": rep.iterations, "polished": rep.polished}


def solution_to_dict(sol: Union[FlowSolution, OpfSolution], residuals: Optional[OpfResiduals] = None) -> dict:
    doc = {"format": FORMAT, "kind": "solution", "objective": float(sol.objective)}
    doc.update(_report_dict(sol.report))
    if isinstance(sol, OpfSolution):
        for name in ("x", "delta", "u", "s", "theta"):
            doc[name] = [_floats(row) for row in getattr(sol, name)]
    else:
        doc["x"] = _floats(sol.x)
    if sol.z is not None:
        doc["z"] = _floats(np.asarray(sol.z).ravel())
    if residuals is not None:
        doc["residuals"] = {k: float(v) for k, v in residuals.families.items()}
    return doc


def reduced_to_dict(rp: ReducedFlowProblem) -> dict:
    spec = rp.to_qp()
    return {
        "format": FORMAT, "kind": "reduced", "mu": rp.mu,
        "xp": _plain(rp.xp),
        "P": [_floats(r) for r in spec.P], "q": _floats(spec.q),
        "A": [_floats(r) for r in spec.A],
        "l": [_bound(v) for v in spec.l], "u": [_bound(v) for v in spec.u],
        "constant": spec.constant,
    }


# -- file entry points ----------------------------------------------------------


def load_graph(path: PathLike) -> OrientedGraph:
    """Read a graph document, or the graph inside a flow/opf document."""
    doc = read_json(path)
    _check_header(doc, ("graph", "flow", "opf"))
    return graph_from_dict(doc)


def load_problem(path: PathLike) -> Union[FlowProblem, OpfProblem]:
    return problem_from_dict(read_json(path))


def load_basis(path: PathLike, graph: OrientedGraph) -> CycleBasis:
    return basis_from_dict(read_json(path), graph)


def load_schedule(path: PathLike, n: Optional[int] = None) -> list[ScheduleEntry]:
    return schedule_from_doc(read_json(path), n)


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture, e.g. ``"ieee30"`` or ``"paper_example"``."""
    path = resources.files("cycleflow") / "data" / f"{name}.json"
    if not path.is_file():
        raise ParseError(f"no bundled fixture named {name!r}")
    return Path(str(path))


def load_fixture(name: str):
    """Load a bundled fixture as the object its ``kind`` describes."""
    doc = read_json(fixture_path(name))
    if isinstance(doc, list) or doc.get("kind") == "schedule":
        return schedule_from_doc(doc)
    if doc.get("kind") == "graph":
        return graph_from_dict(doc)
    return problem_from_dict(doc)


def ieee30_graph() -> OrientedGraph:
    """The bundled 30-node, 41-arc test graph, checked against its checksum."""
    g = load_fixture("ieee30")
    if graph_checksum(g) != IEEE30_SHA256:
        raise ValidationError("arcs", "ieee30 fixture does not match its frozen checksum")
    return g


# -- traces -----------------------------------------------------------------------


def _cell(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def emit_trace(trace: RoundTrace, path: PathLike) -> None:
    """Write one row per (round, agent) with per-arc errors ``e1..em``.

    ``switch`` is 1 on the first round after an injection change.  Arcs
    outside an agent's cycle are left blank.
    """
    if len(trace) == 0:
        raise IoError("trace is empty; nothing to write")
    header = ["round", "agent", "phase", "switch", "disagreement", "objective"]
    header += [f"e{k + 1}" for k in range(trace.m)]
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for rnd, agent, phase, switch, dis, obj, errs in trace.rows():
                w.writerow([rnd, agent, phase, int(switch), repr(dis), repr(float(obj))]
                           + [_cell(e) for e in errs])
    except OSError as exc:
        raise IoError(f"{path}: {exc.strerror}") from None


def emit_solver_trace(report: SolveReport, path: PathLike) -> None:
    """Write ``iteration, primal_res, dual_res, objective`` per recorded iteration."""
    rows = report.trace_rows()
    if not rows:
        raise IoError("solver recorded no iterations; nothing to write")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "primal_res", "dual_res", "objective"])
            for it, p, d, o in rows:
                w.writerow([it, repr(float(p)), repr(float(d)), repr(float(o))])
    except OSError as exc:
        raise IoError(f"{path}: {exc.strerror}") from None
