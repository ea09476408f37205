import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from cycleflow import (
    FlowProblem,
    OrientedGraph,
    ShapeMismatch,
    UncertifiedInputs,
    build_incidence,
    elementary_solutions,
    fundamental_basis,
    horton_basis,
    particular_solution,
)
from cycleflow.distributed import (
    AdmmParams,
    LocalObjective,
    MessageBus,
    ScheduleEntry,
    build_cyber_layer,
    local_subproblem,
    run,
    split_costs,
)
from cycleflow.errors import LocalInfeasible, MaxRounds
from cycleflow.graph import is_biconnected
from conftest import SCENARIO_1, SCENARIO_2
from strategies import connected_graphs, flow_problems


def _layer(p, build=horton_basis):
    xp = particular_solution(elementary_solutions(p.graph), p.injections)
    return build_cyber_layer(build(p.graph), xp, p.graph)


def _cyber_components(layer):
    """Arc sets covered by each connected component of the cyber layer."""
    seen, comps = set(), set()
    for s in range(layer.size):
        if s in seen:
            continue
        stack, arcs = [s], set()
        seen.add(s)
        while stack:
            i = stack.pop()
            arcs.update(layer.agent_arcs[i])
            for j in layer.neighbors[i]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        comps.add(frozenset(arcs))
    return comps


def _block_arc_sets(g):
    G = nx.MultiGraph()
    G.add_nodes_from(range(g.n))
    for k, (t, h) in enumerate(g.arcs):
        G.add_edge(t, h, key=k)
    # biconnected components of the simple graph, then add parallel copies
    simple = nx.Graph(G)
    out = set()
    for comp in nx.biconnected_component_edges(simple):
        pairs = {frozenset(e) for e in comp}
        arcs = frozenset(k for k, (t, h) in enumerate(g.arcs) if frozenset((t, h)) in pairs)
        if len(arcs) > 1:
            out.add(arcs)
    return out


def _box_problem(g, f, a=None, cap=20.0):
    m = g.m
    a = np.ones(m) if a is None else np.asarray(a, dtype=float)
    return FlowProblem(g, -cap * np.ones(m), cap * np.ones(m), a, np.zeros(m), np.asarray(f))


def _scalar_objective(a, b, lo=-10.0, hi=10.0):
    one = np.array([[1.0]])
    return LocalObjective(0, (0,), (0,), one, np.ones(1), np.array([a]), np.array([b]),
                          np.zeros(1), np.array([lo]), np.array([hi]))


class TestCyberLayer:
    def test_two_triangles(self, two_triangles):
        layer = _layer(_box_problem(two_triangles, [1, 0, 0, -1]))
        assert layer.size == 2
        assert layer.neighbors == ((1,), (0,))
        assert layer.registry[1] == (0, 1)
        assert layer.edges == ((0, 1),)
        assert layer.shared(0, 1) == (0, 1)
        assert layer.variables == ((0, 1), (1, 0))
        assert layer.bridges == ()

    def test_tree_has_no_agents(self):
        g = OrientedGraph(4, ((0, 1), (1, 2), (1, 3)))
        layer = _layer(_box_problem(g, [1, 0, 0, -1]))
        assert layer.size == 0 and layer.bridges == (0, 1, 2) and layer.registry == {}
        assert layer.is_connected()

    def test_bridge_arcs_are_excluded(self):
        # triangle plus a pendant arc
        g = OrientedGraph(4, ((0, 1), (1, 2), (0, 2), (2, 3)))
        layer = _layer(_box_problem(g, [1, 0, 0, -1]))
        assert layer.bridges == (3,) and set(layer.registry) == {0, 1, 2}

    def test_ieee30(self, ieee30):
        g = ieee30
        layer = build_cyber_layer(horton_basis(g), np.zeros(g.m, dtype=int), g)
        assert layer.size == 12
        assert set(layer.bridges) == {8, 30, 34}
        for i, nb in enumerate(layer.neighbors):
            for j in nb:
                assert set(layer.agent_arcs[i]) & set(layer.agent_arcs[j])
                assert i in layer.neighbors[j]
        # buses 27, 29, 30 form their own block, so the layer has two components
        assert not layer.is_connected()
        assert _cyber_components(layer) == _block_arc_sets(g)

    @pytest.mark.parametrize("build", [fundamental_basis, horton_basis])
    @given(g=connected_graphs(max_nodes=9, max_arcs=16, min_nodes=3))
    def test_components_follow_blocks(self, build, g):
        layer = build_cyber_layer(build(g), np.zeros(g.m, dtype=int), g)
        assert _cyber_components(layer) == _block_arc_sets(g)
        if is_biconnected(g):
            assert layer.is_connected()

    def test_uncertified_basis(self, two_triangles):
        basis = horton_basis(two_triangles)
        bad = type(basis).from_matrix(two_triangles, np.vstack([basis.matrix[0]] * 2))
        with pytest.raises(UncertifiedInputs):
            build_cyber_layer(bad, np.zeros(5), two_triangles)

    def test_wrong_xp_shape(self, two_triangles):
        with pytest.raises(ShapeMismatch):
            build_cyber_layer(horton_basis(two_triangles), np.zeros(4), two_triangles)


class TestSplitCosts:
    def test_shared_arc_weight(self, two_triangles):
        p = _box_problem(two_triangles, [1, 0, 0, -1])
        objs = split_costs(_layer(p), p)
        w0 = dict(zip(objs[0].arcs, objs[0].weight))
        assert w0 == {0: 1.0, 1: 0.5, 2: 1.0}

    @given(flow_problems(max_nodes=8, max_arcs=14), st.integers(0, 2**32 - 1))
    def test_reconstruction(self, p, seed):
        layer = _layer(p)
        if layer.size == 0:
            return
        z = np.random.default_rng(seed).normal(size=layer.size) * 5
        objs = split_costs(layer, p)
        total = sum(o.value(z[list(o.variables)]) for o in objs)
        x = layer.basis.matrix.T @ z + layer.xp
        keep = sorted(layer.registry)
        direct = float(np.sum(p.quadratic[keep] * x[keep] ** 2 + p.linear[keep] * x[keep]))
        assert abs(total - direct) <= 1e-12 * max(1.0, abs(direct))

    @given(flow_problems(max_nodes=8, max_arcs=14), st.integers(0, 2**32 - 1))
    def test_qp_terms_match_value(self, p, seed):
        layer = _layer(p)
        rng = np.random.default_rng(seed)
        for o in split_costs(layer, p):
            y = rng.normal(size=len(o.variables))
            P, q, c = o.qp_terms()
            assert 0.5 * y @ P @ y + q @ y + c == pytest.approx(o.value(y), rel=1e-10, abs=1e-10)


class TestLocalSubproblem:
    def test_closed_form(self):
        a, b, rho, t = 2.0, -1.0, 0.5, 3.0
        y, _ = local_subproblem(_scalar_objective(a, b), [t], [2.0], rho)
        assert y[0] == pytest.approx((rho * 2.0 * t - b) / (2 * a + rho * 2.0), rel=1e-9)

    def test_box_face(self):
        obj = _scalar_objective(1.0, 0.0, lo=-1.0, hi=0.5)
        y, dual = local_subproblem(obj, [4.0], [1.0], 1.0)
        assert y[0] == pytest.approx(0.5, abs=1e-9)
        # stationarity: 2a y + rho (y - t) + dual = 0 with dual >= 0 on the upper face
        assert 2 * y[0] + (y[0] - 4.0) + dual[0] == pytest.approx(0.0, abs=1e-7)
        assert dual[0] > 0

    def test_large_penalty_tracks_target(self):
        y, _ = local_subproblem(_scalar_objective(1.0, 3.0), [2.5], [2.0], 1e6)
        assert y[0] == pytest.approx(2.5, abs=1e-3)

    def test_empty_box(self):
        one = np.array([[1.0], [1.0]])
        obj = LocalObjective(0, (0,), (0, 1), one, np.ones(2), np.ones(2), np.zeros(2),
                             np.zeros(2), np.array([0.0, 2.0]), np.array([1.0, 3.0]))
        with pytest.raises(LocalInfeasible):
            local_subproblem(obj, [0.0], [1.0], 1.0)


class TestMessageBus:
    def test_locality(self, example_problem):
        layer = _layer(example_problem)
        bus = MessageBus(layer)
        outsider = next(j for j in range(layer.size) if j != 0 and j not in layer.neighbors[0])
        with pytest.raises(PermissionError):
            bus.post(0, outsider, np.zeros(1))

    def test_inbox_sorted_by_sender(self, two_triangles):
        g = OrientedGraph(4, ((0, 1), (1, 2), (2, 0), (1, 3), (3, 2), (0, 3)))
        layer = _layer(_box_problem(g, [1, 0, 0, -1]))
        bus = MessageBus(layer)
        others = [j for j in layer.neighbors[0]]
        for j in reversed(others):
            bus.post(j, 0, j)
        box = bus.deliver()[0]
        assert list(box) == sorted(others)
        assert bus.delivered == len(others)
        assert bus.deliver()[0] == {}


class TestRun:
    def test_single_cycle_converges_immediately(self, triangle):
        p = _box_problem(triangle, [1, 0, -1], a=[1.0, 2.0, 3.0])
        res = run(p, _layer(p))
        assert res.rounds <= 2
        assert_allclose(res.x, res.references[0], atol=1e-8)

    def test_tree_returns_particular_solution(self):
        g = OrientedGraph(3, ((0, 1), (1, 2)))
        p = _box_problem(g, [2, 0, -2])
        res = run(p, _layer(p))
        assert res.rounds == 0
        assert_array_equal(res.x, [2, 2])

    def test_two_triangles_match_centralized(self, two_triangles):
        p = _box_problem(two_triangles, [3, 0, 0, -3], a=[1.0, 0.5, 2.0, 1.5, 1.0])
        res = run(p, _layer(p))
        assert res.converged == [res.rounds]
        assert_allclose(res.x, res.references[0], atol=1e-4)
        assert res.trace.primal[-1] <= 1e-9 and res.trace.dual[-1] <= 1e-9

    @pytest.mark.parametrize("rounds", [1, 7, 40])
    def test_conservation_at_every_stop(self, example_problem, rounds):
        p = example_problem
        with pytest.raises(MaxRounds) as err:
            run(p, _layer(p), AdmmParams(max_rounds=rounds))
        result = err.value.result
        assert len(result.trace) == rounds
        assert_allclose(build_incidence(p.graph) @ result.x, p.injections, atol=1e-9)
        assert np.all(np.isfinite(result.trace.objective))

    def test_example_schedule_switch(self, example_problem):
        p = example_problem
        sched = [ScheduleEntry(0, SCENARIO_1), ScheduleEntry(50, SCENARIO_2)]
        res = run(p, _layer(p), schedule=sched)
        assert res.trace.switch.count(True) == 1
        assert res.trace.rounds[res.trace.switch.index(True)] == 51
        assert res.converged[1] is not None
        assert_allclose(res.x, res.references[1], atol=1e-4)
        inc = build_incidence(p.graph)
        assert_allclose(inc @ res.x, SCENARIO_2, atol=1e-9)

    def test_schedule_shape_checked(self, two_triangles):
        p = _box_problem(two_triangles, [1, 0, 0, -1])
        with pytest.raises(ShapeMismatch):
            run(p, _layer(p), schedule=[(0, [1, 0, -1])])

    def test_workers_are_deterministic(self, example_problem):
        p = example_problem
        params = AdmmParams(max_rounds=60)
        traces = []
        for w in (1, 3):
            with pytest.raises(MaxRounds) as err:
                run(p, _layer(p), params, workers=w)
            traces.append(err.value.result.trace)
        a, b = traces
        assert a.primal == b.primal and a.objective == b.objective
        for ea, eb in zip(a.arc_error, b.arc_error):
            assert_array_equal(ea, eb)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            AdmmParams(rho=0.0)
        with pytest.raises(ValueError):
            AdmmParams(workers=0)
