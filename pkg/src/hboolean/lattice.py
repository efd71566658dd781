"""Lattice coarse-graining of a layered marked Poisson process.

Sites are the points of ``eps * Z^d`` and are stored as integer vectors ``k``
with ``z = k / q`` where ``q = 1 / eps``.  A field assigns to each site the
extreme mark (minimum for decreasing kernels, maximum for increasing ones) of
the points falling in the cell ``z + [0, eps)^d``; an empty cell holds the
sentinel ``+inf`` (decreasing) or ``-inf`` (increasing).  Fields are sparse:
sites that are not listed hold the sentinel in every layer.  Sentinels never
reach the kernel; graph builders select finite sites first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .crossings import CrossingSpec, max_disjoint_crossings
from .errors import ConfigurationError
from .geom_graph import GeometricGraph, build_graph, candidate_pairs, joined
from .kernel import Direction, KernelSpec, MarkDistribution, h_star, in_interval, sup_h, u_star
from .point_process import Box, LayeredPointSet


def _fraction(x) -> Fraction:
    return Fraction(repr(float(x))) if not isinstance(x, (int, Fraction)) else Fraction(x)


def alpha_denominator(d: int, ell_star) -> int:
    """Least integer ``q`` with ``10 sqrt(d) / q <= min(ell_star, 1)``, exactly."""
    ell = min(_fraction(ell_star), Fraction(1))
    if ell <= 0:
        raise ConfigurationError("ell_star must be positive")
    r = Fraction(100 * d) / (ell * ell)
    q = max(1, math.isqrt(r.numerator // r.denominator))
    while q * q < r:
        q += 1
    while q > 1 and (q - 1) * (q - 1) >= r:
        q -= 1
    return q


@dataclass(frozen=True)
class RenormParams:
    d: int
    alpha: float
    q: int  # lattice step is 1 / q
    K: int
    lam: float
    lam_star: float
    ell_star: float
    u_star: tuple
    direction: Direction
    strict: bool = True

    @property
    def eps(self) -> float:
        return 1.0 / self.q

    @property
    def sentinel(self) -> float:
        return math.inf if self.direction is Direction.DECREASING else -math.inf

    def rho_base(self) -> float:
        return self.lam_star * self.eps ** self.d

    def rho_layer(self) -> float:
        return (self.lam - self.lam_star) * self.eps ** self.d / self.K

    def as_dict(self) -> dict:
        return {"d": self.d, "alpha": self.alpha, "eps": self.eps, "q": self.q, "K": self.K,
                "lambda": self.lam, "lambda_star": self.lam_star, "ell_star": self.ell_star,
                "u_star": list(self.u_star), "direction": self.direction.value, "strict": self.strict}


def derive_params(kernel: KernelSpec, dist: MarkDistribution | None, lam: float, lam_star: float,
                  ell_star: float, d: int, K: int = 16, eps: float | None = None) -> RenormParams:
    """Scale parameters for the coarse-graining.

    ``alpha = sqrt(d) / q_a`` with ``q_a`` the least integer making
    ``10 alpha <= min(ell_star, 1)``; the lattice step is
    ``alpha / (100 sqrt(d)) = 1 / (100 q_a)``, small enough that every point
    sits within ``alpha / 100`` of its site.

    ``eps`` overrides the step for desk-scale renormalization runs.  It must be
    ``1 / q`` for an integer ``q`` and at most ``1 - 4 alpha`` so that
    neighbouring good sites stay adjacent; such parameters are marked
    non-strict and refused by the continuum coupling routines.
    """
    if not math.isclose(sup_h(kernel) / kernel.scale, 1.0, rel_tol=1e-12):
        raise ConfigurationError("derive_params needs a normalized kernel (sup of h equal to 1)")
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    if not 0 <= lam_star < lam:
        raise ConfigurationError("need 0 <= lam_star < lam")
    qa = alpha_denominator(d, ell_star)
    alpha = math.sqrt(d) / qa
    strict = eps is None
    if strict:
        q = 100 * qa
    else:
        q = round(1.0 / eps)
        if q < 1 or not math.isclose(q * eps, 1.0, rel_tol=1e-9):
            raise ConfigurationError(f"eps={eps} is not the reciprocal of an integer")
        if 1.0 / q > 1 - 4 * alpha:
            raise ConfigurationError(f"eps={eps} exceeds 1 - 4 alpha = {1 - 4 * alpha:.4f}")
        strict = q == 100 * qa
    us = u_star(kernel, alpha / 2, dist)
    return RenormParams(d, alpha, q, K, float(lam), float(lam_star), float(ell_star), us,
                        kernel.direction, strict)


# ---------------------------------------------------------------------------
# sampling the extreme-mark law


def _extreme(direction: Direction):
    return np.minimum if direction is Direction.DECREASING else np.maximum


def _segment_extreme(draws: np.ndarray, counts: np.ndarray, direction: Direction) -> np.ndarray:
    """Extreme of consecutive groups of ``draws`` of sizes ``counts`` (all >= 1)."""
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return _extreme(direction).reduceat(draws, starts) if len(counts) else np.zeros(0)


def sample_L_law(rho: float, dist: MarkDistribution, direction: Direction, rng: np.random.Generator,
                 size: int | None = None):
    """Extreme of ``N ~ Poisson(rho)`` i.i.d. marks; the sentinel when ``N = 0``."""
    n = 1 if size is None else int(size)
    N = rng.poisson(rho, n)
    sentinel = math.inf if direction is Direction.DECREASING else -math.inf
    out = np.full(n, sentinel)
    hit = N > 0
    if hit.any():
        out[hit] = _segment_extreme(dist.sample(rng, int(N[hit].sum())), N[hit], direction)
    return float(out[0]) if size is None else out


def _zero_truncated_poisson(rho: float, n: int, rng: np.random.Generator) -> np.ndarray:
    # first arrival of a rate-1 process on [0, rho] given at least one arrival,
    # then the remaining arrivals on what is left of the interval
    p1 = -math.expm1(-rho)
    t = -np.log1p(-rng.random(n) * p1)
    return 1 + rng.poisson(np.maximum(rho - t, 0.0))


def _distinct_indices(total: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random ``k``-subset of ``range(total)``, sorted."""
    if k > total // 4:
        return np.sort(rng.choice(total, size=k, replace=False))
    got = np.unique(rng.integers(0, total, size=k))
    while len(got) < k:
        got = np.unique(np.concatenate([got, rng.integers(0, total, size=k - len(got))]))
    return got


def _sample_site_layer(rho: float, n_sites: int, dist: MarkDistribution, direction: Direction,
                       rng: np.random.Generator):
    """Independent per-site extremes over ``n_sites`` sites, returned sparsely."""
    if rho <= 0 or n_sites == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    k = int(rng.binomial(n_sites, -math.expm1(-rho)))
    idx = _distinct_indices(n_sites, k, rng)
    counts = _zero_truncated_poisson(rho, k, rng)
    vals = _segment_extreme(dist.sample(rng, int(counts.sum())), counts, direction)
    return idx, vals


# ---------------------------------------------------------------------------
# fields


class SiteKeyer:
    """Bijection between integer sites in a bounding box and int64 keys."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = np.asarray(hi, dtype=np.int64)
        self.dims = self.hi - self.lo + 1
        if np.any(self.dims <= 0):
            raise ConfigurationError("empty site window")
        if float(np.prod(self.dims.astype(float))) >= 2.0 ** 62:
            raise ConfigurationError("site window too large to index")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def inside(self, sites) -> np.ndarray:
        s = np.asarray(sites, dtype=np.int64).reshape(-1, len(self.lo))
        return np.all((s >= self.lo) & (s <= self.hi), axis=1)

    def encode(self, sites) -> np.ndarray:
        s = np.asarray(sites, dtype=np.int64).reshape(-1, len(self.lo)) - self.lo
        return np.ravel_multi_index(tuple(s.T), tuple(self.dims))

    def decode(self, keys) -> np.ndarray:
        return np.column_stack(np.unravel_index(np.asarray(keys, dtype=np.int64), tuple(self.dims))) + self.lo


def site_window(box: Box, q: int):
    """Integer bounds of the sites ``k / q`` lying in ``box``."""
    lo = [math.ceil(round(v * q, 9)) for v in box.lo]
    hi = [math.floor(round(v * q, 9)) for v in box.hi]
    return np.asarray(lo, np.int64), np.asarray(hi, np.int64)


@dataclass
class LatticeField:
    """Sparse site field: base values ``A``, layer values ``T`` and ``Aau``.

    ``Aau`` is the pointwise extreme of ``A`` and all layers.
    """

    q: int
    lo: np.ndarray  # inclusive integer window
    hi: np.ndarray
    direction: Direction
    sites: np.ndarray  # (n, d) sorted by key
    A: np.ndarray
    T: np.ndarray  # (n, K)
    Aau: np.ndarray = field(default=None)

    def __post_init__(self):
        self.keyer = SiteKeyer(self.lo, self.hi)
        self.sites = np.asarray(self.sites, dtype=np.int64).reshape(-1, len(self.lo))
        self.A = np.asarray(self.A, dtype=float)
        self.T = np.asarray(self.T, dtype=float).reshape(len(self.sites), -1)
        keys = self.keyer.encode(self.sites)
        order = np.argsort(keys, kind="stable")
        self.keys = keys[order]
        if len(self.keys) > 1 and np.any(np.diff(self.keys) == 0):
            raise ConfigurationError("duplicate sites in field")
        self.sites, self.A, self.T = self.sites[order], self.A[order], self.T[order]
        if self.Aau is None:
            self.Aau = augment(self.A, self.T, self.direction)
        else:
            self.Aau = np.asarray(self.Aau, dtype=float)[order]

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def K(self) -> int:
        return self.T.shape[1]

    @property
    def sentinel(self) -> float:
        return math.inf if self.direction is Direction.DECREASING else -math.inf

    @property
    def coords(self) -> np.ndarray:
        return self.sites / self.q

    def index_of(self, sites) -> np.ndarray:
        """Row of each site in the field, ``-1`` if it is not stored."""
        s = np.asarray(sites, dtype=np.int64).reshape(-1, self.d)
        out = np.full(len(s), -1, dtype=np.int64)
        ok = self.keyer.inside(s)
        if ok.any() and len(self.keys):
            k = self.keyer.encode(s[ok])
            pos = np.searchsorted(self.keys, k)
            pos = np.minimum(pos, len(self.keys) - 1)
            hit = self.keys[pos] == k
            out[np.nonzero(ok)[0][hit]] = pos[hit]
        return out

    def values(self, which: str, sites) -> np.ndarray:
        idx = self.index_of(sites)
        col = self.column(which)
        out = np.full(len(idx), self.sentinel)
        out[idx >= 0] = col[idx[idx >= 0]]
        return out

    def column(self, which: str) -> np.ndarray:
        if which == "A":
            return self.A
        if which == "Aau":
            return self.Aau
        if which.startswith("T"):
            return self.T[:, int(which[1:]) - 1]
        raise KeyError(which)

    def replace(self, A=None, T=None) -> "LatticeField":
        return LatticeField(self.q, self.lo, self.hi, self.direction, self.sites,
                            self.A if A is None else A, self.T if T is None else T)


def augment(A: np.ndarray, T: np.ndarray, direction: Direction) -> np.ndarray:
    ext = _extreme(direction)
    out = np.asarray(A, dtype=float).copy()
    for j in range(np.shape(T)[1]):
        out = ext(out, T[:, j])
    return out


def _assemble(q, lo, hi, direction, K, parts) -> LatticeField:
    """Merge sparse per-layer ``(keys, values)`` lists into one field."""
    keyer = SiteKeyer(lo, hi)
    sentinel = math.inf if direction is Direction.DECREASING else -math.inf
    allkeys = np.unique(np.concatenate([p[0] for p in parts])) if parts else np.zeros(0, np.int64)
    n = len(allkeys)
    A = np.full(n, sentinel)
    T = np.full((n, K), sentinel)
    for layer, (keys, vals) in enumerate(parts):
        pos = np.searchsorted(allkeys, keys)
        if layer == 0:
            A[pos] = vals
        else:
            T[pos, layer - 1] = vals
    return LatticeField(q, lo, hi, direction, keyer.decode(allkeys), A, T)


def build_fields(params: RenormParams, dist: MarkDistribution, window, rng: np.random.Generator) -> LatticeField:
    """Independent site fields ``A ~ L(lam* eps^d)`` and ``T^(j) ~ L((lam - lam*) eps^d / K)``.

    ``window`` is a :class:`Box` (real coordinates) or integer bounds ``(lo, hi)``.
    """
    lo, hi = site_window(window, params.q) if isinstance(window, Box) else map(np.asarray, window)
    keyer = SiteKeyer(lo, hi)
    n = keyer.size
    parts = []
    for layer in range(params.K + 1):
        rho = params.rho_base() if layer == 0 else params.rho_layer()
        idx, vals = _sample_site_layer(rho, n, dist, params.direction, rng)
        parts.append((idx.astype(np.int64), vals))
    return _assemble(params.q, lo, hi, params.direction, params.K, parts)


def fields_from_points(layers: LayeredPointSet, params: RenormParams, window=None) -> LatticeField:
    """Fields read off a layered point set: ``B_z`` from the base layer, ``B^(j)`` per layer."""
    if window is None:
        window = layers.base.window
    lo, hi = site_window(window, params.q) if isinstance(window, Box) else map(np.asarray, window)
    keyer = SiteKeyer(lo, hi)
    ext = _extreme(params.direction)
    parts = []
    for pts in [layers.base] + list(layers.layers):
        k = np.floor(pts.positions * params.q).astype(np.int64)
        ok = keyer.inside(k)
        keys = keyer.encode(k[ok])
        marks = pts.marks[ok]
        if len(keys):
            order = np.lexsort((marks, keys))
            keys, marks = keys[order], marks[order]
            uk, start = np.unique(keys, return_index=True)
            parts.append((uk, ext.reduceat(marks, start)))
        else:
            parts.append((np.zeros(0, np.int64), np.zeros(0)))
    return _assemble(params.q, lo, hi, params.direction, layers.K, parts)


def dense_field(params: RenormParams, lo, hi, A, T=None) -> LatticeField:
    """Field listing every site of the window in key order (for constructed examples)."""
    keyer = SiteKeyer(lo, hi)
    sites = keyer.decode(np.arange(keyer.size))
    A = np.broadcast_to(np.asarray(A, dtype=float), (len(sites),)).copy()
    if T is None:
        T = np.full((len(sites), params.K), params.sentinel)
    T = np.broadcast_to(np.asarray(T, dtype=float), (len(sites), params.K)).copy() \
        if np.ndim(T) < 2 else np.asarray(T, dtype=float)
    return LatticeField(params.q, np.asarray(lo), np.asarray(hi), params.direction, sites, A, T)


def dump_field(fld: LatticeField, path) -> None:
    """One line per stored site: ``z1 ... zd A T1 ... TK Aau``."""
    with open(Path(path), "w") as fh:
        for z, a, t, aa in zip(fld.coords.tolist(), fld.A.tolist(), fld.T.tolist(), fld.Aau.tolist()):
            fh.write(" ".join(repr(v) for v in z + [a] + t + [aa]) + "\n")


# ---------------------------------------------------------------------------
# lattice graphs

_OFFSETS = {"minus": 3, "mid": 2, "plus": 1}


@dataclass
class LatticeGraph(GeometricGraph):
    sites: np.ndarray = None  # (n, d) integer sites of the vertices
    rows: np.ndarray = None  # row in the field of each vertex
    q: int = 1


def build_lattice_graph(fld: LatticeField, which: str, kernel: KernelSpec, params: RenormParams,
                        rows=None) -> LatticeGraph:
    """``minus`` / ``mid`` use ``A`` with margins ``3 alpha`` / ``2 alpha``;
    ``plus`` uses ``Aau`` with margin ``alpha``.

    ``rows`` restricts the build to a subset of field rows.
    """
    c = _OFFSETS[which]
    vals = fld.Aau if which == "plus" else fld.A
    cand = np.arange(len(vals)) if rows is None else np.asarray(rows, dtype=np.int64)
    cand = cand[np.isfinite(vals[cand])]
    pos = fld.sites[cand] / fld.q
    i, j, dist = candidate_pairs(pos, 1.0 - c * params.alpha)
    if len(i):
        thr = kernel(vals[cand[i]], vals[cand[j]]) - c * params.alpha
        keep = joined(dist, thr)
        edges = np.column_stack([i[keep], j[keep]])
    else:
        edges = np.zeros((0, 2), np.int64)
    return LatticeGraph(len(cand), pos, edges, vals[cand], sites=fld.sites[cand], rows=cand, q=fld.q)


def lattice_edge_rule(kernel, params, which, dist, a, b) -> np.ndarray:
    """Literal edge predicate, for checks and brute-force comparisons."""
    return joined(dist, kernel(a, b) - _OFFSETS[which] * params.alpha)


def in_u_star(values, params: RenormParams) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.isfinite(v) & in_interval(np.where(np.isfinite(v), v, 0.0), params.u_star)


def box_sites(center, m_units: int, d: int) -> np.ndarray:
    """Integer sites of ``center + [-m, m]^d`` with ``m`` in lattice units."""
    r = np.arange(-m_units, m_units + 1)
    grid = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return grid + np.asarray(center, dtype=np.int64)


def is_seed(fld: LatticeField, center, m: float, params: RenormParams) -> bool:
    """Every site of ``B(z, m)`` carries a base value in the good set."""
    mu = int(round(m * params.q))
    return bool(in_u_star(fld.values("A", box_sites(center, mu, fld.d)), params).all())


# ---------------------------------------------------------------------------
# continuum <-> lattice coupling


@dataclass
class CouplingResult:
    continuum: int
    lattice: int
    ok: bool
    embedded_edges: bool


def coupling_window(L: float, d: int) -> Box:
    """Region sampled for a coupled check at scale ``L``: the lattice crossing
    region at ``L + 1`` grown by one unit on every side."""
    return Box((-L - 4.0,) + (-L - 2.0,) * (d - 1), (L + 4.0,) + (L + 2.0,) * (d - 1))


def coupled_crossing_check(layers: LayeredPointSet, kernel: KernelSpec, params: RenormParams,
                           L: float) -> CouplingResult:
    """Continuum crossings at ``L + 1`` against lattice crossings of ``G+`` at ``L``.

    Each lattice crossing maps, site by site, to a path of points of the
    underlying process, so the continuum count can never be the smaller one.
    """
    if not params.strict:
        raise ConfigurationError("the continuum coupling needs the strict lattice step")
    d = layers.base.d
    union = layers.union()
    g = build_graph(union, kernel)
    r_cont = max_disjoint_crossings(g, CrossingSpec.continuum(L + 1, d), witnesses=False).count
    fld = fields_from_points(layers, params, layers.base.window)
    gp = build_lattice_graph(fld, "plus", kernel, params)
    r_lat = max_disjoint_crossings(gp, CrossingSpec.lattice(L, d), witnesses=False).count
    return CouplingResult(r_cont, r_lat, r_cont >= r_lat, lattice_edges_embed(union, fld, gp, kernel, params))


def representative_points(union, fld: LatticeField):
    """For each stored site, the index of the point realizing ``Aau`` in its cell."""
    k = np.floor(union.positions * fld.q).astype(np.int64)
    row = fld.index_of(k)
    rep = np.full(len(fld.sites), -1, dtype=np.int64)
    hit = row >= 0
    match = hit.copy()
    match[hit] = union.marks[hit] == fld.Aau[row[hit]]
    rep[row[match]] = np.nonzero(match)[0]
    return rep


def lattice_edges_embed(union, fld: LatticeField, gp: LatticeGraph, kernel, params) -> bool:
    """Every ``G+`` edge joins two points of the process that are adjacent in ``G``."""
    rep = representative_points(union, fld)
    if not len(gp.edges):
        return True
    a = rep[gp.rows[gp.edges[:, 0]]]
    b = rep[gp.rows[gp.edges[:, 1]]]
    if np.any(a < 0) or np.any(b < 0):
        return False
    dist = np.linalg.norm(union.positions[a] - union.positions[b], axis=1)
    return bool(np.all(joined(dist, kernel(union.marks[a], union.marks[b]))))


def coarse_graining_violations(base, kernel: KernelSpec, params: RenormParams) -> list:
    """Edges of the reduced-range graph ``|x - y| <= h - ell*`` on the base layer that
    neither stay in one cell nor become ``G-`` edges of the base field."""
    if not params.strict:
        raise ConfigurationError("the continuum coupling needs the strict lattice step")
    layers = LayeredPointSet(base, [], params.lam, params.lam_star)
    fld = fields_from_points(layers, params, base.window)
    i, j, dist = candidate_pairs(base.positions, 1.0)
    keep = joined(dist, kernel(base.marks[i], base.marks[j]) - params.ell_star)
    i, j = i[keep], j[keep]
    ki = np.floor(base.positions[i] * params.q).astype(np.int64)
    kj = np.floor(base.positions[j] * params.q).astype(np.int64)
    same = np.all(ki == kj, axis=1)
    bad = []
    ai, aj = fld.values("A", ki), fld.values("A", kj)
    ok_vals = np.isfinite(ai) & np.isfinite(aj)
    zd = np.linalg.norm((ki - kj) / params.q, axis=1)
    for t in np.nonzero(~same)[0]:
        if not ok_vals[t] or not lattice_edge_rule(kernel, params, "minus", zd[t], ai[t], aj[t]):
            bad.append((int(i[t]), int(j[t])))
    return bad


def h_star_working(kernel: KernelSpec, a):
    return h_star(kernel, a) / kernel.scale
