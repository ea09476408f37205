import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from cycleflow import build_incidence, check_capacity_feasibility
from cycleflow.generators import (
    SEED_ENV,
    default_seed,
    make_rng,
    random_balanced_injections,
    random_connected_graph,
    random_flow_problem,
)
from cycleflow.graph import is_connected


class TestSeed:
    def test_unset_means_zero(self, monkeypatch):
        monkeypatch.delenv(SEED_ENV, raising=False)
        assert default_seed() == 0

    def test_env_seed_replays(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "42")
        assert default_seed() == 42
        assert_array_equal(make_rng().integers(0, 1000, 5), np.random.default_rng(42).integers(0, 1000, 5))

    def test_explicit_seed_wins(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "42")
        assert make_rng(3).integers(0, 10**9) == np.random.default_rng(3).integers(0, 10**9)

    def test_bad_value(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "abc")
        with pytest.raises(ValueError, match=SEED_ENV):
            default_seed()


class TestInstances:
    @given(st.integers(1, 12), st.integers(0, 30), st.integers(0, 2**32 - 1))
    def test_connected_graph(self, n, extra, seed):
        m = n - 1 + extra
        g = random_connected_graph(np.random.default_rng(seed), n, m)
        assert g.n == n and is_connected(g)
        assert g.m == min(m, n * (n - 1) // 2)
        assert len({frozenset(a) for a in g.arcs}) == g.m

    def test_too_few_arcs(self):
        with pytest.raises(ValueError):
            random_connected_graph(np.random.default_rng(0), 5, 3)

    @given(st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_balanced_injections(self, n, seed):
        f = random_balanced_injections(np.random.default_rng(seed), n)
        assert f.dtype == np.int64 and f.sum() == 0

    @given(st.integers(2, 9), st.integers(0, 2**32 - 1))
    def test_flow_problem_is_feasible(self, n, seed):
        rng = np.random.default_rng(seed)
        g = random_connected_graph(rng, n, n + 2)
        p = random_flow_problem(rng, g)
        assert int(np.sum(p.injections)) == 0
        assert check_capacity_feasibility(p)
        assert build_incidence(g).shape == (n, g.m)
