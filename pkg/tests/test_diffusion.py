import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse.csgraph import shortest_path

from mazfo.diffusion import SENTINEL, DifferenceTables
from mazfo.errors import NonFiniteValue, StaleBeyondBuffer
from mazfo.topology import NetworkTopology, path_graph, ring_graph, star_graph

from test_topology import connected_graphs


def _drive(tables, rounds, rng, dims=None):
    n = tables.n
    hist, zs = [], []
    for t in range(rounds):
        z = rng.normal(size=tables.d)
        tables.remember(t, z)
        hist.append(tables.record_local(t, rng.normal(size=n), rng.normal(size=n), 0.5))
        zs.append(z)
        tables.gossip_merge(t)
        yield t, np.array(hist), np.array(zs)
        tables.end_round()


@given(connected_graphs(max_n=9), st.integers(0, 2**31))
def test_delay_law(adj, seed):
    dist = shortest_path(adj.astype(float), unweighted=True).astype(int)
    n = adj.shape[0]
    tables = DifferenceTables(adj, np.ones(n, dtype=int), int(dist.max()) + 1)
    for t, hist, _ in _drive(tables, 3 * n, np.random.default_rng(seed)):
        expect = t - dist
        reached = expect >= 0
        assert np.all(tables.tau[reached] == expect[reached])
        assert np.all(tables.tau[~reached] == SENTINEL)
        rows, cols = np.nonzero(reached)
        np.testing.assert_array_equal(tables.D[rows, cols], hist[expect[rows, cols], cols])


def test_assembly_matches_explicit_sum():
    topo = ring_graph(5)
    dims = np.array([1, 2, 1, 3, 2])
    off = np.concatenate([[0], np.cumsum(dims)])
    tables = DifferenceTables(topo.adjacency, dims, topo.diameter + 1)
    for t, hist, zs in _drive(tables, 12, np.random.default_rng(0)):
        got = tables.assemble_grad_f0(t)
        want = np.zeros(off[-1])
        for i in range(5):
            for j in range(5):
                s = t - topo.distances[i, j]
                if s >= 0:
                    want[off[i]:off[i + 1]] += hist[s, j] * zs[s, off[i]:off[i + 1]]
        np.testing.assert_allclose(got, want / 5, rtol=1e-14, atol=1e-15)


def test_sentinel_contributes_zero_at_start():
    topo = path_graph(3)
    tables = DifferenceTables(topo.adjacency, [1, 1, 1], 3)
    z = np.array([1.0, 2.0, 3.0])
    tables.remember(0, z)
    own = tables.record_local(0, np.array([1.0, 2.0, 3.0]), np.zeros(3), 0.5)
    tables.gossip_merge(0)
    np.testing.assert_allclose(tables.assemble_grad_f0(0), own * z / 3)


def test_merge_idempotent_within_round():
    topo = star_graph(5)
    tables = DifferenceTables(topo.adjacency, np.ones(5, dtype=int), 3)
    rng = np.random.default_rng(1)
    for t in range(4):
        tables.remember(t, rng.normal(size=5))
        tables.record_local(t, rng.normal(size=5), rng.normal(size=5), 0.1)
        tables.gossip_merge(t)
        D, tau = tables.D.copy(), tables.tau.copy()
        tables.gossip_merge(t)
        np.testing.assert_array_equal(tables.D, D)
        np.testing.assert_array_equal(tables.tau, tau)
        tables.end_round()


def test_ties_go_to_lowest_index():
    # agent 1 hears about agent 3 from both 0 and 2 with equal stamps
    topo = NetworkTopology.from_edges(4, [(0, 1), (1, 2), (0, 3), (2, 3)])
    tables = DifferenceTables(topo.adjacency, np.ones(4, dtype=int), 3)
    tables.snap_tau[0, 3] = tables.snap_tau[2, 3] = 5
    tables.snap_D[0, 3], tables.snap_D[2, 3] = 10.0, 20.0
    tables.gossip_merge(6)
    assert tables.tau[1, 3] == 5 and tables.D[1, 3] == 10.0


def test_buffer_too_small_raises():
    topo = path_graph(4)
    tables = DifferenceTables(topo.adjacency, np.ones(4, dtype=int), 2)
    with pytest.raises(StaleBeyondBuffer):
        for t, _, _ in _drive(tables, 6, np.random.default_rng(0)):
            tables.assemble_grad_f0(t)


def test_nonfinite_record_raises():
    tables = DifferenceTables(path_graph(2).adjacency, [1, 1], 2)
    with pytest.raises(NonFiniteValue):
        tables.record_local(0, np.array([np.nan, 0.0]), np.zeros(2), 0.1)


def test_dropped_links_only_add_staleness():
    topo = ring_graph(7)
    tables = DifferenceTables(topo.adjacency, np.ones(7, dtype=int), 50, drop_prob=0.3, rng=0)
    for t, _, _ in _drive(tables, 40, np.random.default_rng(2)):
        valid = tables.tau >= 0
        assert np.all(tables.tau[valid] <= (t - topo.distances)[valid])
        assert np.all(np.diag(tables.tau) == t)


def test_trace_lines():
    topo = path_graph(2)
    tables = DifferenceTables(topo.adjacency, [1, 1], 2, trace=True)
    list(_drive(tables, 2, np.random.default_rng(0)))
    assert len(tables.trace) == 2 * 4
    t, i, j, tau, _ = tables.trace[-1].split()
    assert (t, i, j, tau) == ("1", "1", "1", "1")
