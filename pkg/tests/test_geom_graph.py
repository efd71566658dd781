import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hboolean.geom_graph import (
    UnionFind, build_graph, build_graph_bruteforce, connected_components, dump_edges, spans_window,
)
from hboolean.kernel import MarkDistribution, boolean_power, max_kernel, miller_abrahams, normalize
from hboolean.point_process import Box, MarkedPointSet, sample_marked
from hboolean.rng import stream

from oracles import bfs_components, brute_edges

FAMILIES = [
    (normalize(boolean_power(1.0, (0.0, 0.5))), MarkDistribution.uniform(0.0, 0.5)),
    (normalize(max_kernel((0.0, 2.0))), MarkDistribution.power_law(1.0, 2.0)),
    (normalize(miller_abrahams(3.0)), MarkDistribution.uniform(0.0, 1.0)),
    (boolean_power(1.0, (0.5, 0.5)), MarkDistribution.dirac(0.5)),
]


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("fam", range(len(FAMILIES)))
def test_cell_list_matches_oracle(d, fam):
    k, dist = FAMILIES[fam]
    pts = sample_marked(3.0, Box.cube(2.5, d), dist, stream(7, "g", d, fam))
    g = build_graph(pts, k)
    want = brute_edges(pts.positions.tolist(), pts.marks.tolist(), k.family.value, k.scale, k.gamma, k.zeta)
    assert g.edge_set() == want
    assert g.edge_set() == build_graph_bruteforce(pts, k).edge_set()


def test_ties_are_edges():
    k = boolean_power(1.0, (0.5, 0.5))
    pts = MarkedPointSet([[0.0, 0.0], [1.0, 0.0], [2.5, 0.0]], [0.5] * 3, Box.cube(3, 2))
    assert build_graph(pts, k).edge_set() == {(0, 1)}


def test_adjacency_sorted():
    pts = sample_marked(4.0, Box.cube(3, 2), MarkDistribution.dirac(0.5), stream(1, "adj"))
    g = build_graph(pts, boolean_power(1.0, (0.5, 0.5)))
    for v in range(g.n):
        nb = g.neighbors(v)
        assert np.all(np.diff(nb) > 0) and v not in nb


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(0.0, 0.3))
def test_raising_marks_adds_edges(seed, shift):
    k = normalize(boolean_power(1.0, (0.0, 0.8)))
    pts = sample_marked(3.0, Box.cube(2, 2), MarkDistribution.uniform(0.0, 0.5), stream(seed, "mono"))
    up = MarkedPointSet(pts.positions, np.minimum(pts.marks + shift, 0.8), pts.window)
    assert build_graph(pts, k).edge_set() <= build_graph(up, k).edge_set()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.tuples(st.floats(-50, 50), st.floats(-50, 50)))
def test_translation_invariance(seed, t):
    k = normalize(miller_abrahams(3.0))
    pts = sample_marked(2.0, Box.cube(2, 2), MarkDistribution.uniform(0, 1), stream(seed, "tr"))
    moved = MarkedPointSet(pts.positions + np.asarray(t), pts.marks, pts.window)
    a = build_graph(pts, k).edge_set()
    b = build_graph(moved, k).edge_set()
    # moving far from the origin changes float rounding; only near-ties may flip
    diff = a ^ b
    for i, j in diff:
        dist = np.linalg.norm(pts.positions[i] - pts.positions[j])
        assert abs(dist - k(pts.marks[i], pts.marks[j])) < 1e-9


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), pairs=st.lists(st.tuples(st.integers(0, 39), st.integers(0, 39)), max_size=60))
def test_union_find_matches_bfs(n, pairs):
    edges = [(a % n, b % n) for a, b in pairs]
    uf = UnionFind(n)
    for a, b in edges:
        uf.union(a, b)
    got = uf.labels().tolist()
    want = bfs_components(n, edges)
    assert got == want


def test_components_and_spanning():
    k = boolean_power(1.0, (0.5, 0.5))
    w = Box((0.0, 0.0), (5.0, 1.0))
    line = MarkedPointSet([[0.5 + i, 0.5] for i in range(5)], [0.5] * 5, w)
    g = build_graph(line, k)
    assert len(set(connected_components(g).tolist())) == 1
    assert spans_window(g, w, axis=0)
    broken = MarkedPointSet([[0.5, 0.5], [1.5, 0.5], [3.0, 0.5], [4.5, 0.5]], [0.5] * 4, w)
    assert not spans_window(build_graph(broken, k), w, axis=0)


def test_edge_dump(tmp_path):
    k = boolean_power(1.0, (0.5, 0.5))
    pts = MarkedPointSet([[0.0, 0.0], [0.5, 0.0], [3.0, 0.0]], [0.5] * 3, Box.cube(3, 2))
    dump_edges(build_graph(pts, k), tmp_path / "e.txt")
    assert (tmp_path / "e.txt").read_text().split() == ["0", "1"]
