import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from housing_abm.graph import (
    DisconnectedGraph, Topology, UnknownArea, bfs_distances, build_graph, read_edge_csv,
)


def path_graph():
    return build_graph(Topology.adjacency([(0, 1), (1, 2)]), 3, ("A", "B", "C"))


def floyd_warshall(n, edges):
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for a, b in edges:
        d[a, b] = d[b, a] = 1
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return d


def test_singleton():
    g = build_graph(Topology.singleton(), 1)
    assert g.dist.tolist() == [[0]]
    assert g.ecc.tolist() == [0]
    assert g.outreach(0, 0) == 1.0


def test_path_graph_distances():
    g = path_graph()
    assert g.dist[0, 2] == 2
    assert g.ecc[0] == 2
    assert g.ecc[1] == 1


def test_path_graph_outreach():
    g = path_graph()
    assert g.outreach(0, 0) == 1.0
    assert g.outreach(0, 2) == 0.0
    assert g.outreach(0, 1) == pytest.approx(0.5, abs=1e-15)


def test_complete_38():
    g = build_graph(Topology.complete(), 38)
    off = ~np.eye(38, dtype=bool)
    assert (g.dist[off] == 1).all()
    assert (g.ecc == 1).all()
    # distance carries no information on the complete graph
    assert (g.outreach_matrix()[off] == 0).all()


def test_disconnected_rejected():
    with pytest.raises(DisconnectedGraph):
        build_graph(Topology.adjacency([(0, 1)]), 3)


def test_unknown_area_rejected():
    with pytest.raises(UnknownArea):
        build_graph(Topology.adjacency([(0, 5)]), 3)


def test_singleton_needs_one_area():
    with pytest.raises(ValueError):
        build_graph(Topology.singleton(), 2)


def test_edge_csv(tmp_path):
    p = tmp_path / "edges.csv"
    p.write_text("area_a,area_b\nX,Y\nY,Z\n")
    names, edges = read_edge_csv(p)
    assert names == ["X", "Y", "Z"]
    assert edges == [(0, 1), (1, 2)]
    with pytest.raises(UnknownArea):
        read_edge_csv(p, ["X", "Y"])


@st.composite
def connected_graphs(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    # random spanning tree plus extras keeps the graph connected
    edges = {(draw(st.integers(0, i - 1)), i) for i in range(1, n)}
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=10))
    edges |= {(min(a, b), max(a, b)) for a, b in extra if a != b}
    return n, sorted(edges)


@settings(max_examples=200, deadline=None)
@given(connected_graphs())
def test_bfs_matches_floyd_warshall(case):
    n, edges = case
    g = build_graph(Topology.adjacency(edges), n)
    assert np.array_equal(g.dist, floyd_warshall(n, edges).astype(int))


@settings(max_examples=200, deadline=None)
@given(connected_graphs())
def test_metric_and_outreach_properties(case):
    n, edges = case
    g = build_graph(Topology.adjacency(edges), n)
    d = g.dist
    assert (np.diag(d) == 0).all()
    assert np.array_equal(d, d.T)
    assert (d[:, :, None] <= d[:, None, :] + d.T[None, :, :]).all()
    o = g.outreach_matrix()
    assert (np.diag(o) == 1).all()
    assert ((o >= 0) & (o <= 1)).all()
    if n > 1:
        assert (g.ecc >= 1).all()
        assert np.allclose(o.min(axis=1), 0.0)
    for i in range(n):
        order = np.argsort(d[i], kind="stable")
        assert (np.diff(o[i, order]) <= 1e-15).all()


def test_bfs_unreachable_marked():
    d = bfs_distances(3, [[1], [0], []])
    assert d[0, 2] == -1
