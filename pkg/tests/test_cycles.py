import numpy as np
import pytest
from hypothesis import given
from numpy.testing import assert_array_equal

from cycleflow import (
    CycleBasis,
    InvalidTree,
    NotConnected,
    OrientedGraph,
    ShapeMismatch,
    build_incidence,
    certify,
    fundamental_basis,
    horton_basis,
    verify_basis,
)
from cycleflow.cycles import gf2_rank, orient_cycle, rational_rank
from cycleflow.graph import SpanningTree, tree_from_arcs
from oracles import exact_rank, gf2_rank as oracle_gf2_rank, min_cycle_basis_weight
from strategies import connected_graphs

CONSTRUCTORS = [fundamental_basis, horton_basis]


def _check_simple_cycle(g, row):
    arcs = np.flatnonzero(row)
    degree = np.zeros(g.n, dtype=int)
    for a in arcs:
        t, h = g.arcs[a]
        degree[t] += 1
        degree[h] += 1
    assert set(degree[degree > 0]) == {2}


class TestFundamentalBasis:
    def test_triangle_with_given_tree(self, triangle):
        basis = fundamental_basis(triangle, tree_from_arcs(triangle, [0, 1]))
        assert_array_equal(basis.matrix, [[-1, -1, 1]])
        assert basis.cycles[0].defining_arc == 2
        assert np.all(build_incidence(triangle) @ basis.matrix.T == 0)

    def test_defining_arc_positive(self, ieee30):
        basis = fundamental_basis(ieee30)
        for c in basis.cycles:
            assert c.walk[0] == (c.defining_arc, 1)

    def test_tree_gives_empty_basis(self):
        g = OrientedGraph(4, ((0, 1), (1, 2), (1, 3)))
        basis = fundamental_basis(g)
        assert basis.mu == 0 and basis.matrix.shape == (0, 3)

    def test_ieee30(self, ieee30):
        assert fundamental_basis(ieee30).mu == 12

    def test_disconnected(self):
        with pytest.raises(NotConnected):
            fundamental_basis(OrientedGraph(4, ((0, 1), (1, 2), (2, 0))))

    def test_foreign_tree(self, triangle):
        bad = SpanningTree(0, (-1, 0, 0), (-1, 1, 2), (0, 1, 1))
        with pytest.raises(InvalidTree):
            fundamental_basis(triangle, bad)

    def test_parallel_arcs_form_two_arc_cycle(self):
        g = OrientedGraph(2, ((0, 1), (0, 1)))
        assert_array_equal(fundamental_basis(g).matrix, [[-1, 1]])


class TestHortonBasis:
    def test_triangle(self, triangle):
        basis = horton_basis(triangle)
        assert basis.mu == 1 and basis.weight(triangle.weights) == 3

    def test_two_triangles_avoid_outer_cycle(self, two_triangles):
        basis = horton_basis(two_triangles)
        assert [len(c.arcs) for c in basis.cycles] == [3, 3]
        assert {frozenset(c.arcs) for c in basis.cycles} == {frozenset({0, 1, 2}), frozenset({1, 3, 4})}

    def test_lowest_arc_positive(self, ieee30):
        for c in horton_basis(ieee30).cycles:
            assert c.walk[0] == (min(c.arcs), 1)

    def test_ieee30(self, ieee30):
        h, t = horton_basis(ieee30), fundamental_basis(ieee30)
        assert h.mu == t.mu == 12
        assert h.weight(ieee30.weights) <= t.weight(ieee30.weights)
        assert certify(ieee30, h) and certify(ieee30, t)

    def test_zero_weights(self, two_triangles):
        w = (0.0, 0.0, 1.0, 1.0, 1.0)
        basis = horton_basis(two_triangles, w)
        assert certify(two_triangles, basis)
        assert basis.weight(w) == min_cycle_basis_weight(two_triangles.n, two_triangles.arcs, w)

    @given(connected_graphs(max_nodes=7, max_arcs=11, parallel=0.1))
    def test_minimum_weight_matches_enumeration(self, g):
        basis = horton_basis(g)
        assert basis.weight(g.weights) == min_cycle_basis_weight(g.n, g.arcs, g.weights)

    @given(connected_graphs(max_nodes=10, max_arcs=20))
    def test_no_heavier_than_tree_basis(self, g):
        assert horton_basis(g).weight(g.weights) <= fundamental_basis(g).weight(g.weights)

    @given(connected_graphs(max_nodes=10, max_arcs=20))
    def test_same_cycle_space_as_tree_basis(self, g):
        h, t = horton_basis(g).matrix % 2, fundamental_basis(g).matrix % 2
        assert oracle_gf2_rank(np.vstack([h, t])) == oracle_gf2_rank(h) == g.mu


class TestBasisInvariants:
    @pytest.mark.parametrize("build", CONSTRUCTORS)
    @given(g=connected_graphs(max_nodes=10, max_arcs=20))
    def test_orthogonal_and_full_rank(self, build, g):
        basis = build(g)
        B = basis.matrix
        assert B.shape == (g.m - g.n + 1, g.m)
        assert np.all(build_incidence(g) @ B.T == 0)
        assert exact_rank(B) == g.mu
        assert set(np.unique(B)) <= {-1, 0, 1}
        simple = len(set(g.arcs)) == g.m
        for row in B:
            assert np.count_nonzero(row) >= (3 if simple else 2)
            _check_simple_cycle(g, row)

    @pytest.mark.parametrize("build", CONSTRUCTORS)
    @given(g=connected_graphs(max_nodes=8, max_arcs=14))
    def test_walk_is_a_closed_traversal(self, build, g):
        for c in build(g).cycles:
            t0, h0 = g.arcs[c.walk[0][0]]
            node = h0
            for a, s in c.walk[1:]:
                t, h = g.arcs[a]
                assert node == (t if s == 1 else h)
                node = h if s == 1 else t
            assert node == t0


class TestVerifyBasis:
    def test_constructors_certify(self, ieee30):
        for build in CONSTRUCTORS:
            cert = verify_basis(build(ieee30), build_incidence(ieee30))
            assert cert.orthogonality and cert.rank_ok and bool(cert)

    def test_duplicated_row(self, two_triangles):
        B = horton_basis(two_triangles).matrix
        cert = verify_basis(np.vstack([B[0], B[0]]), build_incidence(two_triangles))
        assert cert.orthogonality and not cert.rank_ok

    def test_flipped_shared_arc(self, two_triangles):
        B = horton_basis(two_triangles).matrix.copy()
        B[0, 1] = -B[0, 1]  # arc e2 is shared by both triangles
        cert = verify_basis(B, build_incidence(two_triangles))
        assert not cert.orthogonality

    def test_shape_mismatch(self, triangle, two_triangles):
        with pytest.raises(ShapeMismatch):
            verify_basis(horton_basis(two_triangles), build_incidence(triangle))

    @given(connected_graphs(max_nodes=9, max_arcs=16))
    def test_rank_helpers_match_oracles(self, g):
        B = horton_basis(g).matrix
        doubled = np.vstack([B, 2 * B]) if B.size else B
        assert rational_rank(doubled) == exact_rank(doubled)
        assert gf2_rank(B) == oracle_gf2_rank(B)


class TestFromMatrix:
    @given(connected_graphs(max_nodes=9, max_arcs=16))
    def test_round_trip(self, g):
        basis = horton_basis(g)
        again = CycleBasis.from_matrix(g, basis.matrix)
        assert_array_equal(again.matrix, basis.matrix)
        assert [c.walk for c in again.cycles] == [c.walk for c in basis.cycles]

    def test_non_cycle_row_kept(self, two_triangles):
        B = np.array([[1, 1, 0, 0, 0]])
        basis = CycleBasis.from_matrix(two_triangles, B)
        assert_array_equal(basis.matrix, B)
        assert not certify(two_triangles, basis)

    def test_orient_cycle_rejects_path(self, two_triangles):
        with pytest.raises(ValueError):
            orient_cycle(two_triangles, [0, 1], 0)
