import numpy as np
import pytest

from hboolean.crossings import (
    CrossingSpec, Region, crossing_scaling_statistic, is_crossing, max_disjoint_crossings,
)
from hboolean.geom_graph import GeometricGraph, build_graph
from hboolean.kernel import MarkDistribution, boolean_power, normalize
from hboolean.point_process import Box, MarkedPointSet, sample_marked
from hboolean.rng import stream

from oracles import exhaustive_crossings, min_vertex_cut_bruteforce


def small_instance(seed, d=2):
    rng = stream(seed, "xing")
    L = 0.5
    n = int(rng.integers(3, 13))
    lo = np.array([-L - 0.5] + [-L - 0.05] * (d - 1))
    hi = -lo
    pos = lo + rng.random((n, d)) * (hi - lo)
    marks = rng.uniform(0.3, 0.6, n)
    k = normalize(boolean_power(1.0, (0.0, 0.6)))
    pts = MarkedPointSet(pos, marks, Box(tuple(lo), tuple(hi)))
    return build_graph(pts, k), CrossingSpec.continuum(L, d)


@pytest.mark.parametrize("seed", range(60))
def test_flow_matches_exhaustive_packing(seed):
    g, spec = small_instance(seed, d=2 + seed % 2)
    tags = spec.classify(g.positions).tolist()
    res = max_disjoint_crossings(g, spec, check=True)
    edges = g.edges.tolist()
    assert res.count == exhaustive_crossings(g.n, edges, tags)
    assert res.min_cut_size == res.count == min_vertex_cut_bruteforce(g.n, edges, tags)


def test_region_tags():
    spec = CrossingSpec.continuum(2.0, 2)
    tags = spec.classify([[-2.5, 0], [-2.0, 2.0], [2.0001, -1], [0, 2.5], [3, 3]])
    assert tags.tolist() == [Region.SOURCE, Region.INTERIOR, Region.SINK, Region.OUTSIDE, Region.OUTSIDE]
    lat = CrossingSpec.lattice(2.0, 2)
    assert lat.classify([[-3.9, 0], [-4.1, 0], [4.0, 2.0]]).tolist() == [2, 1, 2]
    sl = CrossingSpec.slice(2.0, 3, 1.0)
    assert sl.classify([[0, 0, -1.0], [0, 0, 1.0], [-5, 0, 0.5]]).tolist() == [2, 0, 1]


def test_direct_source_sink_edge_is_a_crossing():
    g = GeometricGraph(2, np.array([[-1.2, 0.0], [1.2, 0.0]]), np.array([[0, 1]]))
    res = max_disjoint_crossings(g, CrossingSpec.continuum(1.0, 2))
    assert res.count == 1 and res.witnesses == [[0, 1]]


def test_shared_source_vertex_counts_once():
    # one source vertex feeding two disjoint interior routes
    pos = np.array([[-1.5, 0], [0, 0.5], [0, -0.5], [1.5, 0.5], [1.5, -0.5]])
    g = GeometricGraph(5, pos, np.array([[0, 1], [0, 2], [1, 3], [2, 4]]))
    assert max_disjoint_crossings(g, CrossingSpec.continuum(1.0, 2)).count == 1


def test_paths_may_not_pass_through_source_slab():
    pos = np.array([[-1.5, 0], [-1.6, 0.1], [0, 0], [1.5, 0]])
    g = GeometricGraph(4, pos, np.array([[0, 1], [1, 2], [2, 3]]))
    res = max_disjoint_crossings(g, CrossingSpec.continuum(1.0, 2))
    assert res.count == 1 and res.witnesses == [[1, 2, 3]]


def test_witness_tie_break_is_lowest_index():
    pos = np.array([[-1.5, 0], [0, 0.3], [0, -0.3], [1.5, 0]])
    g = GeometricGraph(4, pos, np.array([[0, 1], [0, 2], [1, 3], [2, 3]]))
    res = max_disjoint_crossings(g, CrossingSpec.continuum(1.0, 2))
    assert res.witnesses == [[0, 1, 3]]


def test_slice_equals_lattice_in_two_dimensions():
    k = boolean_power(1.0, (0.5, 0.5))
    pts = sample_marked(3.0, Box((-7.0, -4.0), (7.0, 4.0)), MarkDistribution.dirac(0.5), stream(3, "sl"))
    g = build_graph(pts, k)
    a = max_disjoint_crossings(g, CrossingSpec.lattice(3.0, 2)).count
    b = max_disjoint_crossings(g, CrossingSpec.slice(3.0, 2, None)).count
    assert a == b > 0


def test_large_instance_witnesses_valid():
    k = boolean_power(1.0, (0.5, 0.5))
    pts = sample_marked(4.0, Box.cube(9.0, 2), MarkDistribution.dirac(0.5), stream(9, "big"))
    g = build_graph(pts, k)
    spec = CrossingSpec.continuum(8.0, 2)
    res = max_disjoint_crossings(g, spec, check=True)
    tags = spec.classify(g.positions)
    assert all(is_crossing(p, lambda v: set(g.neighbors(v).tolist()), tags) for p in res.witnesses)
    assert len(res.cut_vertices) == res.count


def test_scaling_statistic():
    assert crossing_scaling_statistic(8, CrossingSpec.continuum(4, 2), 2.0)
    assert not crossing_scaling_statistic(31, CrossingSpec.continuum(4, 3), 2.0)
    assert crossing_scaling_statistic(8, CrossingSpec.slice(4, 3, 1), 2.0)
