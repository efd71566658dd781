"""Random connection graphs on marked point sets.

Vertices i != j are adjacent when ``|x_i - x_j| <= h(E_i, E_j)`` for the working
kernel; equality counts as an edge.  Candidate pairs come from a cell list
whose cell side equals the largest possible connection length, so only the
``3**d`` neighbouring cells of each point need scanning.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernel import KernelSpec, sup_h
from .point_process import MarkedPointSet


class UnionFind:
    """Disjoint sets over ``0..n-1`` with union by size and path halving."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def labels(self) -> np.ndarray:
        """Component labels numbered in order of first appearance."""
        first: dict = {}
        out = np.empty(len(self.parent), dtype=np.int64)
        for i in range(len(self.parent)):
            out[i] = first.setdefault(self.find(i), len(first))
        return out


def candidate_pairs(coords: np.ndarray, cutoff: float):
    """All pairs ``i < j`` whose cells are neighbours in a grid of side ``cutoff``.

    Returns ``(i, j, dist)``.  Every pair at distance ``<= cutoff`` is included.
    """
    coords = np.asarray(coords, dtype=float)
    n, d = coords.shape if coords.ndim == 2 else (len(coords), 1)
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    if n < 2 or not cutoff > 0:
        return empty
    lo = coords.min(axis=0)
    cells = np.floor((coords - lo) / cutoff).astype(np.int64) + 1
    dims = cells.max(axis=0) + 2
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * dims[k + 1]
    cid = cells @ strides
    order = np.argsort(cid, kind="stable")
    sorted_ids = cid[order]
    out_i, out_j = [], []
    for off in itertools.product((-1, 0, 1), repeat=d):
        nid = cid + np.asarray(off, dtype=np.int64) @ strides
        start = np.searchsorted(sorted_ids, nid, side="left")
        stop = np.searchsorted(sorted_ids, nid, side="right")
        cnt = stop - start
        tot = int(cnt.sum())
        if tot == 0:
            continue
        src = np.repeat(np.arange(n), cnt)
        base = np.repeat(start - np.concatenate(([0], np.cumsum(cnt)[:-1])), cnt)
        dst = order[np.arange(tot) + base]
        keep = src < dst
        out_i.append(src[keep])
        out_j.append(dst[keep])
    if not out_i:
        return empty
    i = np.concatenate(out_i)
    j = np.concatenate(out_j)
    diff = coords[i] - coords[j]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return i, j, dist


def all_pairs(coords: np.ndarray):
    """Every pair ``i < j`` with its distance; the quadratic reference route."""
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    i, j = np.triu_indices(n, k=1)
    diff = coords[i] - coords[j]
    return i.astype(np.int64), j.astype(np.int64), np.sqrt(np.einsum("ij,ij->i", diff, diff))


def joined(dist, threshold) -> np.ndarray:
    """Edge rule shared by every graph in the package (ties are edges)."""
    return np.asarray(dist) <= np.asarray(threshold)


@dataclass
class GeometricGraph:
    n: int
    positions: np.ndarray
    edges: np.ndarray  # (m, 2), rows i < j, lexicographically sorted
    marks: np.ndarray | None = None

    def __post_init__(self):
        self.edges = _canonical_edges(self.edges)
        self._indptr, self._indices = _csr(self.n, self.edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, v: int) -> np.ndarray:
        return self._indices[self._indptr[v]:self._indptr[v + 1]]

    @property
    def csr(self):
        return self._indptr, self._indices

    def degree(self) -> np.ndarray:
        return np.diff(self._indptr)

    def edge_set(self) -> set:
        return set(map(tuple, self.edges.tolist()))


def _canonical_edges(edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) == 0:
        return e
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    return e


def _csr(n: int, edges: np.ndarray):
    if len(edges) == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst


def kernel_cutoff(kernel: KernelSpec) -> float:
    return sup_h(kernel) / kernel.scale


def build_graph(points: MarkedPointSet, kernel: KernelSpec) -> GeometricGraph:
    """Random connection graph of ``points`` under the working kernel."""
    i, j, dist = candidate_pairs(points.positions, kernel_cutoff(kernel))
    return _finish(points, kernel, i, j, dist)


def build_graph_bruteforce(points: MarkedPointSet, kernel: KernelSpec) -> GeometricGraph:
    i, j, dist = all_pairs(points.positions)
    return _finish(points, kernel, i, j, dist)


def _finish(points, kernel, i, j, dist) -> GeometricGraph:
    if len(i):
        thr = kernel(points.marks[i], points.marks[j])
        keep = joined(dist, thr)
        edges = np.column_stack([i[keep], j[keep]])
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    return GeometricGraph(len(points), points.positions, edges, points.marks)


def connected_components(graph: GeometricGraph) -> np.ndarray:
    uf = UnionFind(graph.n)
    for a, b in graph.edges.tolist():
        uf.union(a, b)
    return uf.labels()


def spans_window(graph: GeometricGraph, window, axis: int = 0, reach: float = 1.0) -> bool:
    """True if one component comes within ``reach`` of both faces normal to ``axis``."""
    if graph.n == 0:
        return False
    x = graph.positions[:, axis]
    near_lo = x - window.lo[axis] <= reach
    near_hi = window.hi[axis] - x <= reach
    if not near_lo.any() or not near_hi.any():
        return False
    lab = connected_components(graph)
    return bool(np.intersect1d(lab[near_lo], lab[near_hi]).size)


def dump_edges(graph: GeometricGraph, path) -> None:
    """One line per edge: ``i j``."""
    np.savetxt(Path(path), graph.edges, fmt="%d")
