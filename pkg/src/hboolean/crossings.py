"""Vertex-disjoint left-right crossings.

A left-right crossing of a region is a graph path whose first vertex lies in the
source slab (beyond the left face), whose last vertex lies in the sink slab
(beyond the right face), and whose remaining vertices lie inside the region.
The largest number of pairwise vertex-disjoint crossings is a max-flow value on
the vertex-split network; every vertex, source and sink ones included, carries
capacity one.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .errors import ConfigurationError, InvariantViolation


class Region(enum.IntEnum):
    OUTSIDE = 0
    SOURCE = 1
    INTERIOR = 2
    SINK = 3


class CrossingKind(str, enum.Enum):
    CONTINUUM = "continuum"  # box [-L, L]^d
    LATTICE = "lattice"  # [-L-2, L+2] x [-L, L]^(d-1)
    SLICE = "slice"  # [-L-2, L+2] x [-L, L] x [-k, k)^(d-2)


@dataclass(frozen=True)
class CrossingSpec:
    kind: CrossingKind
    L: float
    d: int
    k: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CrossingKind(self.kind))
        if self.L <= 0:
            raise ConfigurationError("crossing half-width L must be positive")
        if self.kind is CrossingKind.SLICE:
            if self.d < 2:
                raise ConfigurationError("slice crossings need d >= 2")
            if self.d > 2 and (self.k is None or self.k <= 0):
                raise ConfigurationError("slice crossings in d >= 3 need a positive slice width k")

    @classmethod
    def continuum(cls, L, d):
        return cls(CrossingKind.CONTINUUM, L, d)

    @classmethod
    def lattice(cls, L, d):
        return cls(CrossingKind.LATTICE, L, d)

    @classmethod
    def slice(cls, L, d, k):
        return cls(CrossingKind.SLICE, L, d, k)

    @property
    def x_extent(self) -> float:
        return self.L if self.kind is CrossingKind.CONTINUUM else self.L + 2

    @property
    def scaling_exponent(self) -> int:
        return 1 if self.kind is CrossingKind.SLICE else self.d - 1

    def box(self):
        """Interior region as ``(lo, hi)`` tuples (slice faces are half-open)."""
        L = self.L
        lo = [-self.x_extent] + [-L] * (self.d - 1)
        hi = [self.x_extent] + [L] * (self.d - 1)
        if self.kind is CrossingKind.SLICE:
            for a in range(2, self.d):
                lo[a], hi[a] = -self.k, self.k
        return tuple(lo), tuple(hi)

    def classify(self, coords) -> np.ndarray:
        x = np.asarray(coords, dtype=float).reshape(-1, self.d)
        L = self.L
        side = np.ones(len(x), dtype=bool)
        for a in range(1, self.d):
            c = x[:, a]
            if self.kind is CrossingKind.SLICE and a >= 2:
                side &= (c >= -self.k) & (c < self.k)
            else:
                side &= (c >= -L) & (c <= L)
        x1 = x[:, 0]
        ext = self.x_extent
        tags = np.full(len(x), Region.OUTSIDE, dtype=np.int8)
        tags[side & (x1 < -ext)] = Region.SOURCE
        tags[side & (x1 >= -ext) & (x1 <= ext)] = Region.INTERIOR
        tags[side & (x1 > ext)] = Region.SINK
        return tags


@dataclass
class CrossingResult:
    count: int
    witnesses: list = field(default_factory=list)
    min_cut_size: int = 0
    cut_vertices: list = field(default_factory=list)


def is_crossing(path, adjacency, tags) -> bool:
    """Check the crossing definition literally for a vertex sequence."""
    if len(path) < 2 or len(set(path)) != len(path):
        return False
    if tags[path[0]] != Region.SOURCE or tags[path[-1]] != Region.SINK:
        return False
    if any(tags[v] != Region.INTERIOR for v in path[1:-1]):
        return False
    return all(b in adjacency(a) for a, b in zip(path, path[1:]))


def max_disjoint_crossings(graph, spec: CrossingSpec, witnesses: bool = True,
                           check: bool = False) -> CrossingResult:
    """Maximum number of vertex-disjoint left-right crossings of ``graph``.

    ``graph`` needs ``n``, ``positions`` and ``edges``.  Witness paths come from
    decomposing the flow, always following the lowest-index vertex first.  The
    cut size is read off the residual network independently of the flow value.
    """
    tags = spec.classify(graph.positions) if graph.n else np.zeros(0, np.int8)
    out = max_disjoint_crossings_tagged(graph.n, graph.edges, tags, witnesses)
    if check:
        adj = graph.neighbors
        for p in out.witnesses:
            if not is_crossing(p, lambda v: set(adj(v).tolist()), tags):
                raise InvariantViolation("witness is not a crossing", {"path": p})
        used = [v for p in out.witnesses for v in p]
        if len(used) != len(set(used)):
            raise InvariantViolation("witnesses share a vertex")
        if out.count != out.min_cut_size:
            raise InvariantViolation("max-flow and min-cut disagree",
                                     {"count": out.count, "cut": out.min_cut_size})
    return out


def max_disjoint_crossings_tagged(n: int, edges, tags, witnesses: bool = True) -> CrossingResult:
    """Same count for an abstract graph whose vertices carry :class:`Region` tags."""
    tags = np.asarray(tags, dtype=np.int8)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    elig = np.nonzero(tags != Region.OUTSIDE)[0]
    m = len(elig)
    if m == 0:
        return CrossingResult(0)
    local = np.full(n, -1, dtype=np.int64)
    local[elig] = np.arange(m)
    t = tags[elig]
    S, T = 2 * m, 2 * m + 1
    big = m + 1

    rows = [2 * np.arange(m)]
    cols = [2 * np.arange(m) + 1]
    caps = [np.ones(m, dtype=np.int32)]
    src = np.nonzero(t == Region.SOURCE)[0]
    snk = np.nonzero(t == Region.SINK)[0]
    rows += [np.full(len(src), S), 2 * snk + 1]
    cols += [2 * src, np.full(len(snk), T)]
    caps += [np.full(len(src), big, np.int32), np.full(len(snk), big, np.int32)]
    e = edges
    if len(e):
        a, b = local[e[:, 0]], local[e[:, 1]]
        ok = (a >= 0) & (b >= 0)
        a, b = a[ok], b[ok]
        for u, v in ((a, b), (b, a)):
            tu, tv = t[u], t[v]
            keep = np.isin(tu, (Region.SOURCE, Region.INTERIOR)) & np.isin(tv, (Region.INTERIOR, Region.SINK))
            rows.append(2 * u[keep] + 1)
            cols.append(2 * v[keep])
            caps.append(np.full(int(keep.sum()), big, np.int32))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    cap = csr_matrix((np.concatenate(caps), (r, c)), shape=(2 * m + 2, 2 * m + 2))
    cap.sum_duplicates()
    if len(src) == 0 or len(snk) == 0:
        return CrossingResult(0)
    res = maximum_flow(cap, S, T, method="dinic")
    count = int(res.flow_value)
    flow = res.flow.tocsr()

    cut = _min_vertex_cut(cap, flow, S, m)
    out = CrossingResult(count, [], len(cut), sorted(int(elig[v]) for v in cut))
    if witnesses and count:
        out.witnesses = [[int(elig[v]) for v in p] for p in _decompose(flow, S, T, count)]
    return out


def _min_vertex_cut(cap, flow, S: int, m: int) -> list:
    resid = (cap - flow).tocsr()
    resid.data[resid.data < 0] = 0
    resid.eliminate_zeros()
    reach = np.zeros(2 * m + 2, dtype=bool)
    reach[breadth_first_order(resid, S, directed=True, return_predecessors=False)] = True
    v = np.arange(m)
    return np.nonzero(reach[2 * v] & ~reach[2 * v + 1])[0].tolist()


def _decompose(flow, S: int, T: int, count: int) -> list:
    f = flow.tocoo()
    pos = f.data > 0
    r, c, x = f.row[pos], f.col[pos], f.data[pos]
    order = np.lexsort((c, r))
    succ: dict = {}
    for u, v, amt in zip(r[order].tolist(), c[order].tolist(), x[order].tolist()):
        succ.setdefault(u, []).append([v, amt])
    paths = []
    for _ in range(count):
        path, u = [], S
        while u != T:
            nxt = next(arc for arc in succ[u] if arc[1] > 0)
            nxt[1] -= 1
            u = nxt[0]
            if u != T and u % 2 == 0:
                path.append(u // 2)
        paths.append(path)
    return paths


def crossing_scaling_statistic(count: int, spec: CrossingSpec, c: float) -> bool:
    """Whether ``count`` reaches ``c * L**(d-1)`` (``c * L`` for slices)."""
    return count >= c * spec.L ** spec.scaling_exponent
