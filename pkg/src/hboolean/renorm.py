"""Renormalization blocks on the lattice fields.

All sites are integer vectors in units of the lattice step ``1 / q``; a length
``m`` becomes ``m * q`` units and ``N = n + m + eps`` becomes ``(n + m) q + 1``.
Region membership is therefore exact integer arithmetic.  Site sets are
``(k, d)`` int64 arrays kept sorted in lexicographic order and free of
repeats; set algebra goes through packed integer keys (``d <= 3``).

Three lattice graphs are used: ``G-`` (``minus``), ``G`` (``mid``) and ``G+``
(``plus``), built by :func:`hboolean.lattice.build_lattice_graph` on the
sites of a region (induced subgraphs).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import binomtest

from .errors import ConfigurationError, InvariantViolation
from .geom_graph import joined
from .kernel import Direction, KernelSpec, MarkDistribution
from .lattice import (LatticeField, RenormParams, box_sites, build_fields, build_lattice_graph,
                      h_star_working, in_u_star, sample_L_law)

_OFF = 1 << 19
_BASE = 1 << 20


# ---------------------------------------------------------------------------
# site sets


def _as_sites(sites, d: int) -> np.ndarray:
    return np.asarray(sites, dtype=np.int64).reshape(-1, d)


def keys(sites, d: int) -> np.ndarray:
    """Packed keys; their numeric order is the lexicographic order of the sites."""
    if d > 3:
        raise ConfigurationError("renormalization regions support d <= 3")
    s = _as_sites(sites, d) + _OFF
    if len(s) and (s.min() < 0 or s.max() >= _BASE):
        raise ConfigurationError("site coordinates out of range")
    out = s[:, 0].copy()
    for k in range(1, d):
        out = out * _BASE + s[:, k]
    return out


def from_keys(k, d: int) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64).copy()
    cols = []
    for _ in range(d):
        cols.append(k % _BASE)
        k //= _BASE
    return np.column_stack(cols[::-1]) - _OFF


def canon(sites, d: int) -> np.ndarray:
    """Sorted, repeat-free copy."""
    return from_keys(np.unique(keys(sites, d)), d)


def union(d: int, *parts) -> np.ndarray:
    parts = [_as_sites(p, d) for p in parts]
    return canon(np.concatenate(parts) if parts else np.zeros((0, d), np.int64), d)


def minus(a, b, d: int) -> np.ndarray:
    a = canon(a, d)
    return a[~np.isin(keys(a, d), keys(b, d))]


def intersect(a, b, d: int) -> np.ndarray:
    a = canon(a, d)
    return a[np.isin(keys(a, d), keys(b, d))]


def member(a, b, d: int) -> np.ndarray:
    """Mask over ``a`` of the sites lying in ``b``."""
    return np.isin(keys(a, d), keys(b, d))


def shift(sites, b) -> np.ndarray:
    return np.asarray(sites, dtype=np.int64) + np.asarray(b, dtype=np.int64)


# ---------------------------------------------------------------------------
# scales and maps


@dataclass(frozen=True)
class Scales:
    q: int
    m: int
    n: int
    d: int

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ConfigurationError("need positive integers m <= n")
        if self.d < 2:
            raise ConfigurationError("renormalization needs d >= 2")

    def require_proper(self) -> "Scales":
        """The cluster constructions need ``2m < n``."""
        if not 2 * self.m < self.n:
            raise ConfigurationError(f"need 2m < n, got m={self.m}, n={self.n}")
        return self

    @classmethod
    def of(cls, params: RenormParams, m: int, n: int) -> "Scales":
        return cls(params.q, int(m), int(n), params.d)

    @property
    def mu(self) -> int:
        return self.m * self.q

    @property
    def nu(self) -> int:
        return self.n * self.q

    @property
    def N(self) -> int:
        return (self.n + self.m) * self.q + 1


def _sgn(v) -> np.ndarray:
    return np.where(np.asarray(v) >= 0, 1, -1)


def f_map(x) -> np.ndarray:
    x = np.array(x, dtype=np.int64, ndmin=2)
    x[:, 1:] *= -1
    return x


def g_map(x, a) -> np.ndarray:
    """``(x1, -sgn(a2) x2, ..., -sgn(ad) xd)`` with ``sgn(0) = +1``."""
    x = np.array(x, dtype=np.int64, ndmin=2)
    x[:, 1:] *= -_sgn(np.asarray(a)[1:])
    return x


def g2_map(x, a) -> np.ndarray:
    """``(-sgn(a1) x1, x2, -sgn(a3) x3, ...)``: steps that head along ``e2``."""
    x = np.array(x, dtype=np.int64, ndmin=2)
    a = np.asarray(a)
    x[:, 0] *= -_sgn(a[0])
    if x.shape[1] > 2:
        x[:, 2:] *= -_sgn(a[2:])
    return x


def theta(x, power: int = 1) -> np.ndarray:
    """Quarter turn in the first two coordinates: ``e1 -> e2``, ``e2 -> -e1``."""
    x = np.array(x, dtype=np.int64, ndmin=2)
    for _ in range(power % 4):
        x[:, [0, 1]] = np.column_stack([-x[:, 1], x[:, 0]])
    return x


def L_map(j: int, x) -> np.ndarray:
    """``L_1 .. L_4`` = identity, theta, theta^2, theta^3."""
    if j not in (1, 2, 3, 4):
        raise ConfigurationError("L_j needs j in 1..4")
    return theta(x, j - 1)


def fold(x) -> np.ndarray:
    """``(|x1|, x2, ..., xd)``."""
    x = np.array(x, dtype=np.int64, ndmin=2)
    x[:, 0] = np.abs(x[:, 0])
    return x


def psi_map(x, sigma, J: int) -> np.ndarray:
    """``y1 = sigma_1 x_J``, ``y_J = sigma_J x_1``, ``y_k = sigma_k x_k`` otherwise (``J`` is 1-based)."""
    x = np.array(x, dtype=np.int64, ndmin=2)
    s = np.asarray(sigma, dtype=np.int64)
    y = x * s
    j = J - 1
    if j != 0:
        y[:, 0] = s[0] * x[:, j]
        y[:, j] = s[j] * x[:, 0]
    return y


# ---------------------------------------------------------------------------
# regions


def ball(center, r: int, d: int) -> np.ndarray:
    """``B(z, r)`` with ``r`` in lattice units."""
    return box_sites(center, r, d)


def T_n(sc: Scales) -> np.ndarray:
    """``{n-1 < |x|_inf <= n, 0 <= x_i <= x_1}``."""
    rows = []
    for x1 in range(sc.nu - sc.q + 1, sc.nu + 1):
        rest = np.stack(np.meshgrid(*([np.arange(x1 + 1)] * (sc.d - 1)), indexing="ij"), -1).reshape(-1, sc.d - 1)
        rows.append(np.column_stack([np.full(len(rest), x1), rest]))
    return canon(np.concatenate(rows), sc.d)


def T_mn(sc: Scales) -> np.ndarray:
    """``[n + eps, n + eps + 2m] x [0, n]^(d-1)``."""
    axes = [np.arange(sc.nu + 1, sc.nu + 2 + 2 * sc.mu)] + [np.arange(sc.nu + 1)] * (sc.d - 1)
    return canon(np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, sc.d), sc.d)


def A_n(sc: Scales) -> np.ndarray:
    """Annulus ``n - 1 < |x|_inf <= n``."""
    b = ball(np.zeros(sc.d, np.int64), sc.nu, sc.d)
    r = np.abs(b).max(axis=1)
    return canon(b[r > sc.nu - sc.q], sc.d)


def T_sigma_J(sc: Scales, sigma, J: int) -> np.ndarray:
    """``{n-1 < |x|_inf <= n, 0 <= sigma_i x_i <= sigma_J x_J}`` (``J`` 1-based)."""
    a = A_n(sc)
    s = np.asarray(sigma, dtype=np.int64)
    v = a * s
    ok = np.all((v >= 0) & (v <= v[:, [J - 1]]), axis=1)
    return a[ok]


def T_star(sc: Scales):
    """``(T*(n), T*(m,n)) = (f(T(n)), f(T(m,n)))``."""
    return canon(f_map(T_n(sc)), sc.d), canon(f_map(T_mn(sc)), sc.d)


def hat_T(sc: Scales, b4, j: int):
    """``(hat T_j(n), hat T_j(m,n))`` for ``j = 1, 2, 3`` (not translated by ``b4``)."""
    one = (g_map(T_n(sc), b4), g_map(T_mn(sc), b4))
    if j == 1:
        out = one
    elif j == 2:
        out = tuple(fold(theta(r, 1)) for r in one)
    elif j == 3:
        out = tuple(fold(theta(r, 3)) for r in one)
    else:
        raise ConfigurationError("hat T_j needs j in 1..3")
    return tuple(canon(r, sc.d) for r in out)


def B0_prime(sc: Scales) -> np.ndarray:
    """``B(n)`` together with the four rotated copies ``L_j(T(m,n))``."""
    tmn = T_mn(sc)
    return union(sc.d, ball(np.zeros(sc.d, np.int64), sc.nu, sc.d), *[L_map(j, tmn) for j in range(1, 5)])


def region_sites(kind: str, sc: Scales, **kw) -> np.ndarray:
    """Dispatch by name: ``box``, ``T_n``, ``T_mn``, ``A_n``, ``T_sigma_J``,
    ``Tstar_n``, ``Tstar_mn``, ``hat_T_n``, ``hat_T_mn``, ``B0_prime``."""
    if kind == "box":
        return ball(kw.get("center", np.zeros(sc.d, np.int64)), kw["r"], sc.d)
    if kind == "T_n":
        return T_n(sc)
    if kind == "T_mn":
        return T_mn(sc)
    if kind == "A_n":
        return A_n(sc)
    if kind == "T_sigma_J":
        return T_sigma_J(sc, kw["sigma"], kw["J"])
    if kind in ("Tstar_n", "Tstar_mn"):
        return T_star(sc)[kind == "Tstar_mn"]
    if kind in ("hat_T_n", "hat_T_mn"):
        return hat_T(sc, kw["b4"], kw["j"])[kind == "hat_T_mn"]
    if kind == "B0_prime":
        return B0_prime(sc)
    raise ConfigurationError(f"unknown region kind {kind!r}")


# ---------------------------------------------------------------------------
# boundaries and seeds


def _offsets(radius: float, q: int, d: int) -> np.ndarray:
    """Integer vectors ``o`` with ``|o| / q <= radius``."""
    r = int(math.floor(radius * q)) + 1
    o = box_sites(np.zeros(d, np.int64), r, d)
    return o[joined(np.linalg.norm(o / q, axis=1), radius)]


def boundary(R, params: RenormParams) -> np.ndarray:
    """``dR``: sites outside ``R`` within Euclidean distance ``1 - 2 alpha`` of ``R``."""
    d = params.d
    R = canon(R, d)
    if not len(R):
        return R
    off = _offsets(1 - 2 * params.alpha, params.q, d)
    grown = (R[:, None, :] + off[None, :, :]).reshape(-1, d)
    return minus(grown, R, d)


def _pairs_within(P, Q, radius: float, params: RenormParams):
    """Pairs ``(i, j, dist)`` with ``|P_i - Q_j| <= radius`` (real units)."""
    d = params.d
    if not len(P) or not len(Q):
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    off = _offsets(radius, params.q, d)
    qk = keys(Q, d)
    order = np.argsort(qk)
    qk_sorted = qk[order]
    cand = (P[:, None, :] + off[None, :, :]).reshape(-1, d)
    ck = keys(cand, d)
    pos = np.minimum(np.searchsorted(qk_sorted, ck), len(qk_sorted) - 1)
    hit = qk_sorted[pos] == ck
    i = np.repeat(np.arange(len(P)), len(off))[hit]
    j = order[pos[hit]]
    dist = np.linalg.norm((P[i] - Q[j]) / params.q, axis=1)
    return i, j, dist


def _dense(sites, d: int):
    lo = sites.min(axis=0)
    shape = tuple(sites.max(axis=0) - lo + 1)
    return lo, shape


def _window_sum(a: np.ndarray, r: int) -> np.ndarray:
    """Sum of ``a`` over ``[i - r, i + r]^d`` around each cell, zero outside."""
    out = a.astype(np.int64)
    for ax in range(a.ndim):
        n = out.shape[ax]
        cs = np.cumsum(out, axis=ax)
        zero = np.zeros_like(np.take(cs, [0], axis=ax))
        cs = np.concatenate([zero, cs], axis=ax)
        hi = np.clip(np.arange(n) + r + 1, 0, n)
        lo = np.clip(np.arange(n) - r, 0, n)
        out = np.take(cs, hi, axis=ax) - np.take(cs, lo, axis=ax)
    return out


def seed_centers(fld: LatticeField, params: RenormParams, allowed, mu: int) -> np.ndarray:
    """Centres ``z`` (lexicographic order) with ``B(z, m)`` a seed inside ``allowed``."""
    d = params.d
    allowed = canon(allowed, d)
    if not len(allowed):
        return allowed
    good = allowed[in_u_star(fld.values("A", allowed), params)]
    if not len(good):
        return good
    lo, shape = _dense(good, d)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple((good - lo).T)] = True
    full = _window_sum(mask, mu) == (2 * mu + 1) ** d
    return canon(np.argwhere(full) + lo, d)


def seed_cover(centers, mu: int, d: int) -> np.ndarray:
    """Union of the boxes ``B(z, m)`` over the given centres."""
    centers = _as_sites(centers, d)
    if not len(centers):
        return centers
    off = box_sites(np.zeros(d, np.int64), mu, d)
    return canon((centers[:, None, :] + off[None, :, :]).reshape(-1, d), d)


def seed_is_connected(fld: LatticeField, kernel: KernelSpec, params: RenormParams, center, mu: int,
                      which: str = "minus") -> bool:
    """Connectivity of a seed box in ``G-``."""
    return is_connected(ball(center, mu, params.d), fld, kernel, params, which)


# ---------------------------------------------------------------------------
# graph queries


def induced_graph(fld: LatticeField, kernel: KernelSpec, params: RenormParams, which: str, sites):
    rows = fld.index_of(_as_sites(sites, params.d))
    rows = np.unique(rows[rows >= 0])
    return build_lattice_graph(fld, which, kernel, params, rows=rows)


def _labels(g) -> np.ndarray:
    if g.n == 0:
        return np.zeros(0, np.int64)
    e = g.edges
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.n, g.n)) if len(e) else \
        coo_matrix((g.n, g.n))
    return connected_components(adj, directed=False)[1]


def cluster_of(sources, region, fld: LatticeField, kernel: KernelSpec, params: RenormParams,
               which: str = "mid") -> np.ndarray:
    """Vertices of ``region`` linked to ``sources`` by a path inside ``region``."""
    g = induced_graph(fld, kernel, params, which, region)
    if g.n == 0:
        return np.zeros((0, params.d), np.int64)
    lab = _labels(g)
    src = member(g.sites, sources, params.d)
    return canon(g.sites[np.isin(lab, lab[src])], params.d)


def is_connected(sites, fld: LatticeField, kernel: KernelSpec, params: RenormParams,
                 which: str = "plus") -> bool:
    """All ``sites`` are vertices of the graph and their induced subgraph is connected."""
    sites = canon(sites, params.d)
    g = induced_graph(fld, kernel, params, which, sites)
    if g.n != len(sites):
        return False
    return g.n <= 1 or len(np.unique(_labels(g))) == 1


def in_vertex_set(sites, fld: LatticeField, which: str = "plus") -> np.ndarray:
    col = "Aau" if which == "plus" else "A"
    return np.isfinite(fld.values(col, sites))


def k_set(fld: LatticeField, kernel: KernelSpec, params: RenormParams, mu: int, Tn, Tmn) -> np.ndarray:
    """Vertices of ``Tn`` adjacent in ``G`` to some seed ``B(z, m)`` contained in ``Tmn``."""
    d = params.d
    centers = seed_centers(fld, params, Tmn, mu)
    if not len(centers):
        return np.zeros((0, d), np.int64)
    Y = seed_cover(centers, mu, d)
    Tn = canon(Tn, d)
    g = induced_graph(fld, kernel, params, "mid", union(d, Tn, Y))
    if not len(g.edges):
        return np.zeros((0, d), np.int64)
    in_t = member(g.sites, Tn, d)
    in_y = member(g.sites, Y, d)
    a, b = g.edges[:, 0], g.edges[:, 1]
    hit = np.concatenate([a[in_t[a] & in_y[b]], b[in_t[b] & in_y[a]]])
    return canon(g.sites[hit], d)


def connectivity_event(fld: LatticeField, kernel: KernelSpec, params: RenormParams, sc: Scales) -> bool:
    """``B(m) <-> K(m, n)`` inside ``B(n)`` for ``G``."""
    d = sc.require_proper().d
    o = np.zeros(d, np.int64)
    K = k_set(fld, kernel, params, sc.mu, T_n(sc), T_mn(sc))
    if not len(K):
        return False
    reached = cluster_of(ball(o, sc.mu, d), ball(o, sc.nu, d), fld, kernel, params, "mid")
    return bool(member(K, reached, d).any())


# ---------------------------------------------------------------------------
# cluster extension


def ef_extension(C, B, Bp, i: int, fld: LatticeField, kernel: KernelSpec, params: RenormParams,
                 check: bool = False):
    """The pair ``(E, F)`` grown from ``C`` with layer ``i``.

    ``E``: sites ``z1`` of ``B`` in ``dC`` with ``T^(i)`` good, within ``1 - 2 alpha``
    of some ``z0`` in ``C`` whose ``T^(i)`` is good as well.
    ``F``: sites of ``B'`` outside ``C`` and ``dC`` reached by a ``G`` path whose first
    vertex ``z2`` satisfies ``|z1 - z2| <= h*(A_z2) - 2 alpha`` for some ``z1`` in ``E``.
    """
    d = params.d
    if not 1 <= i <= fld.K:
        raise ConfigurationError(f"layer index {i} outside 1..{fld.K}")
    C = canon(C, d)
    dC = boundary(C, params)
    layer = f"T{i}"
    cand = intersect(B, dC, d)
    z1 = cand[in_u_star(fld.values(layer, cand), params)]
    z0 = C[in_u_star(fld.values(layer, C), params)]
    reach = 1 - 2 * params.alpha
    ii, _, _ = _pairs_within(z1, z0, reach, params)
    E = canon(z1[np.unique(ii)], d)

    W = minus(Bp, union(d, C, dC), d)
    g = induced_graph(fld, kernel, params, "mid", W)
    F = np.zeros((0, d), np.int64)
    if g.n and len(E):
        a, _, dist = _pairs_within(g.sites, E, reach, params)
        hs = h_star_working(kernel, g.marks[a]) - 2 * params.alpha
        start = np.zeros(g.n, dtype=bool)
        start[a[joined(dist, hs)]] = True
        if start.any():
            lab = _labels(g)
            F = canon(g.sites[np.isin(lab, lab[start])], d)
    if check:
        _check_extension(C, E, F, fld, kernel, params)
    return E, F


def _check_extension(C, E, F, fld, kernel, params) -> None:
    d = params.d
    if not (len(C) and in_vertex_set(C, fld).all() and is_connected(C, fld, kernel, params)):
        return
    Cn = union(d, C, E, F)
    if not in_vertex_set(Cn, fld).all():
        raise InvariantViolation("extension leaves the G+ vertex set", {"size": len(Cn)})
    if not is_connected(Cn, fld, kernel, params):
        raise InvariantViolation("extension is not connected in G+", {"size": len(Cn)})


# ---------------------------------------------------------------------------
# occupation of the origin


@dataclass
class OriginResult:
    S0: bool
    S1: bool
    C1: np.ndarray
    c: list  # c^(1..4) or None
    hits: list = field(default_factory=list)


def occupied_origin(fld: LatticeField, kernel: KernelSpec, params: RenormParams, sc: Scales,
                    check: bool = True) -> OriginResult:
    """Seed at the origin (``S0``) whose ``G`` cluster in ``B0'`` meets all four ``K^(j)`` (``S1``)."""
    d = sc.require_proper().d
    o = np.zeros(d, np.int64)
    empty = np.zeros((0, d), np.int64)
    seed = ball(o, sc.mu, d)
    if not in_u_star(fld.values("A", seed), params).all():
        return OriginResult(False, False, empty, [None] * 4)
    if check and not is_connected(seed, fld, kernel, params, "minus"):
        raise InvariantViolation("seed at the origin is not connected in G-")
    C1 = cluster_of(seed, B0_prime(sc), fld, kernel, params, "mid")
    tn, tmn = T_n(sc), T_mn(sc)
    hits = []
    for j in range(1, 5):
        Kj = k_set(fld, kernel, params, sc.mu, L_map(j, tn), L_map(j, tmn))
        hits.append(bool(len(Kj) and member(Kj, C1, d).any()))
    S1 = all(hits)
    c = [None] * 4
    if S1:
        for j in range(1, 5):
            centers = seed_centers(fld, params, intersect(C1, L_map(j, tmn), d), sc.mu)
            if not len(centers):
                raise InvariantViolation("S1 holds but no seed lies in the cluster", {"j": j})
            c[j - 1] = centers[0]
        c1 = c[0]
        if check and not (c1[0] == sc.N and np.all((c1[1:] >= sc.mu) & (c1[1:] <= sc.nu - sc.mu))):
            raise InvariantViolation("location of c^(1) out of bounds", {"c1": c1.tolist()})
    return OriginResult(True, S1, C1, c, hits)


# ---------------------------------------------------------------------------
# generic extension step


@dataclass
class ClusterState:
    sc: Scales
    C: np.ndarray
    anchors: list = field(default_factory=list)  # b^(1), b^(2), ...
    flags: list = field(default_factory=list)  # S0, S1, ...
    layers_used: set = field(default_factory=set)
    history: list = field(default_factory=list)
    checks: list = field(default_factory=list)  # (name, ok)
    failed_at: int | None = None

    def record(self, name: str, ok: bool, strict: bool = True) -> None:
        self.checks.append((name, bool(ok)))
        if strict and not ok:
            raise InvariantViolation(name)


def _box_contains(sites, center, r: int) -> bool:
    return bool(np.all(np.abs(np.asarray(sites) - np.asarray(center)) <= r))


def extend_cluster_step(state: ClusterState, i: int, b, orient, fld: LatticeField, kernel: KernelSpec,
                        params: RenormParams, layer: int | None = None, check: bool = True):
    """One attempt to push the cluster into ``b + orient(T(m, n))``.

    ``orient`` maps site arrays by an isometry fixing the origin (for instance
    ``lambda x: g_map(x, b)``).  Returns the next anchor or ``None``.
    """
    sc, d = state.sc, state.sc.d
    layer = i if layer is None else layer
    if layer in state.layers_used:
        raise ConfigurationError(f"layer index {layer} already used in this exploration")
    if not 1 <= layer <= fld.K:
        raise ConfigurationError(f"layer index {layer} outside 1..{fld.K}")
    b = np.asarray(b, dtype=np.int64)
    Tn_i = canon(shift(orient(T_n(sc)), b), d)
    Tmn_i = canon(shift(orient(T_mn(sc)), b), d)
    C = state.C
    closure = union(d, C, boundary(C, params))
    if len(intersect(closure, union(d, Tn_i, Tmn_i), d)):
        raise InvariantViolation("property p_i fails: the cluster already reaches the target", {"i": i})
    K_i = k_set(fld, kernel, params, sc.mu, Tn_i, Tmn_i)
    Bp = union(d, ball(b, sc.nu, d), Tmn_i)
    E, F = ef_extension(C, ball(b, sc.nu, d), Bp, layer, fld, kernel, params, check=check)
    state.layers_used.add(layer)
    C_next = union(d, C, E, F)
    S = bool(len(K_i) and member(K_i, C_next, d).any())
    nxt = None
    if S:
        centers = seed_centers(fld, params, intersect(C_next, Tmn_i, d), sc.mu)
        if not len(centers):
            raise InvariantViolation("success without a seed in the target", {"i": i})
        nxt = centers[0]
    state.C = C_next
    state.flags.append(S)
    state.history.append({"i": i, "layer": layer, "E": len(E), "F": len(F), "success": S,
                          "b_next": None if nxt is None else nxt.tolist()})
    if not S and state.failed_at is None:
        state.failed_at = i
    return nxt


def fork_step(state: ClusterState, b4, fld: LatticeField, kernel: KernelSpec, params: RenormParams,
              layer: int = 4, check: bool = True):
    """Step ``i = 4``: reach seeds beside the three remaining faces of ``b4 + B(n)``."""
    sc, d = state.sc, state.sc.d
    if layer in state.layers_used:
        raise ConfigurationError(f"layer index {layer} already used in this exploration")
    b4 = np.asarray(b4, dtype=np.int64)
    regions = [tuple(canon(shift(r, b4), d) for r in hat_T(sc, b4, j)) for j in (1, 2, 3)]
    closure = union(d, state.C, boundary(state.C, params))
    for j, (tn, tmn) in enumerate(regions, start=1):
        if len(intersect(closure, union(d, tn, tmn), d)):
            raise InvariantViolation("cluster meets a hat region before step 4", {"j": j})
    Bp = union(d, ball(b4, sc.nu, d), *[r[1] for r in regions])
    E, F = ef_extension(state.C, ball(b4, sc.nu, d), Bp, layer, fld, kernel, params, check=check)
    state.layers_used.add(layer)
    C5 = union(d, state.C, E, F)
    hits = []
    for tn, tmn in regions:
        K = k_set(fld, kernel, params, sc.mu, tn, tmn)
        hits.append(bool(len(K) and member(K, C5, d).any()))
    S5 = all(hits)
    anchors = None
    if S5:
        anchors = []
        for _, tmn in regions:
            centers = seed_centers(fld, params, intersect(C5, tmn, d), sc.mu)
            if not len(centers):
                raise InvariantViolation("S5 holds but a hat region has no seed in the cluster")
            anchors.append(centers[0])
    state.C = C5
    state.flags.append(S5)
    state.history.append({"i": 4, "layer": layer, "E": len(E), "F": len(F), "success": S5, "hits": hits,
                          "b_next": None if anchors is None else [a.tolist() for a in anchors]})
    if not S5 and state.failed_at is None:
        state.failed_at = 4
    return anchors, regions


# ---------------------------------------------------------------------------
# the chain along e1


def _anchor_in_band(b, i: int, sc: Scales) -> bool:
    return bool(b[0] == i * sc.N and np.all(np.abs(b[1:]) <= sc.nu - sc.mu))


def run_chain(fld: LatticeField, kernel: KernelSpec, params: RenormParams, sc: Scales, steps: int = 3,
              check: bool = True) -> ClusterState:
    """Occupation of the origin, then extensions along ``e1`` for ``i = 1..steps``
    (``steps <= 4``; step 4 forks towards ``e1`` and ``+-e2``).

    Location bounds are recorded in ``state.checks`` and raise when ``check``.
    """
    d = sc.require_proper().d
    origin = occupied_origin(fld, kernel, params, sc, check=check)
    state = ClusterState(sc, origin.C1, flags=[origin.S0, origin.S1])
    if not (origin.S0 and origin.S1):
        state.failed_at = 0
        return state
    b = origin.c[0]
    state.anchors.append(b)
    state.record("c1 location", _anchor_in_band(b, 1, sc), check)
    for i in range(1, min(steps, 3) + 1):
        orient = (lambda x, a=b: g_map(x, a))
        target = canon(shift(orient(T_mn(sc)), b), d)
        state.record(f"b{i} + T_{i}(m,n) inside B({i + 1}N e1, N)",
                     _box_contains(target, (i + 1) * sc.N * np.eye(d, dtype=np.int64)[0], sc.N), check)
        b = extend_cluster_step(state, i, b, orient, fld, kernel, params, check=check)
        if b is None:
            return state
        state.anchors.append(b)
        state.record(f"b{i + 1} location", _anchor_in_band(b, i + 1, sc), check)
    if steps >= 4:
        b4 = b
        anchors, regions = fork_step(state, b4, fld, kernel, params, check=check)
        e1, e2 = np.eye(d, dtype=np.int64)[:2]
        centers = [5 * sc.N * e1, 4 * sc.N * e1 + sc.N * e2, 4 * sc.N * e1 - sc.N * e2]
        for j, ((_, tmn), c) in enumerate(zip(regions, centers), start=1):
            state.record(f"b4 + hat T_{j}(m,n) inside its box", _box_contains(tmn, c, sc.N), check)
        if anchors is None:
            return state
        b5, b6, b7 = anchors
        state.anchors.extend(anchors)
        state.record("b5 location", _anchor_in_band(b5, 5, sc), check)
        lo, hi = 4 * sc.N + sc.mu, 4 * sc.N + sc.nu - sc.mu
        for name, bb, off in (("b6", b6, sc.N), ("b7", b7, -sc.N)):
            ok = lo <= bb[0] <= hi and bb[1] == b4[1] + off and np.all(np.abs(bb[2:]) <= sc.nu - sc.mu)
            state.record(f"{name} location", bool(ok), check)
    return state


def chain_window(sc: Scales):
    """Integer bounds covering every region touched by :func:`run_chain` with ``steps = 4``."""
    pad = sc.N + sc.mu + sc.q
    lo = np.full(sc.d, -2 * sc.N - sc.q, dtype=np.int64)
    hi = np.full(sc.d, 2 * sc.N + sc.q, dtype=np.int64)
    lo[0] = -pad
    hi[0] = 5 * sc.N + pad
    return lo, hi


def origin_window(sc: Scales):
    r = sc.N + sc.mu + sc.q
    return np.full(sc.d, -r, dtype=np.int64), np.full(sc.d, r, dtype=np.int64)


def chain_report(state: ClusterState) -> dict:
    return {
        "scales": {"q": state.sc.q, "m": state.sc.m, "n": state.sc.n, "d": state.sc.d, "N_units": state.sc.N},
        "flags": [bool(f) for f in state.flags],
        "anchors": [np.asarray(b).tolist() for b in state.anchors],
        "failed_at": state.failed_at,
        "steps": state.history,
        "checks": [{"name": n, "ok": ok} for n, ok in state.checks],
        "cluster_size": int(len(state.C)),
    }


def dump_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Monte Carlo


def plant_seed(fld: LatticeField, params: RenormParams, dist: MarkDistribution, center, mu: int,
               rng: np.random.Generator, max_rounds: int = 10_000) -> LatticeField:
    """Redraw ``A`` on ``B(z, m)`` from its law conditioned on the good set.

    Conditioning a product measure on a product event only touches those
    sites, so the rest of the field keeps its law.
    """
    d = params.d
    sites = ball(center, mu, d)
    vals = np.full(len(sites), params.sentinel)
    todo = np.ones(len(sites), dtype=bool)
    for _ in range(max_rounds):
        k = int(todo.sum())
        if not k:
            break
        draw = sample_L_law(params.rho_base(), dist, params.direction, rng, size=k)
        vals[np.nonzero(todo)[0]] = draw
        todo = ~in_u_star(vals, params)
    else:
        raise ConfigurationError("the good set is too unlikely to plant a seed")
    rows = fld.index_of(sites)
    A, T = fld.A.copy(), fld.T.copy()
    A[rows[rows >= 0]] = vals[rows >= 0]
    new = sites[rows < 0]
    if len(new):
        T_new = np.full((len(new), fld.K), params.sentinel)
        return LatticeField(fld.q, fld.lo, fld.hi, fld.direction, np.concatenate([fld.sites, new]),
                            np.concatenate([A, vals[rows < 0]]), np.concatenate([T, T_new]))
    return fld.replace(A=A, T=T)


def superpose(f1: LatticeField, f2: LatticeField) -> LatticeField:
    """Pointwise extreme of two fields on the same window: the field of the union of the processes."""
    d = len(f1.lo)
    sites = union(d, f1.sites, f2.sites)
    ext = np.minimum if f1.direction is Direction.DECREASING else np.maximum
    A = ext(f1.values("A", sites), f2.values("A", sites))
    T = np.column_stack([ext(f1.values(f"T{j}", sites), f2.values(f"T{j}", sites)) for j in range(1, f1.K + 1)])
    return LatticeField(f1.q, f1.lo, f1.hi, f1.direction, sites, A, T)


@dataclass
class Estimate:
    successes: int
    trials: int
    p_hat: float
    ci: tuple
    stderr: float


def _estimate(k: int, n: int, confidence: float = 0.95) -> Estimate:
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    p = k / n
    return Estimate(k, n, p, (float(ci.low), float(ci.high)), math.sqrt(max(p * (1 - p), 0.0) / n))


def estimate_occupation_probability(kernel: KernelSpec, dist: MarkDistribution, params: RenormParams,
                                    m: int, n: int, trials: int, rng: np.random.Generator) -> Estimate:
    """Frequency of ``S1`` given ``S0``, with the seed at the origin planted."""
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    sc = Scales.of(params, m, n).require_proper()
    k = 0
    for _ in range(trials):
        fld = build_fields(params, dist, origin_window(sc), rng)
        fld = plant_seed(fld, params, dist, np.zeros(sc.d, np.int64), sc.mu, rng)
        res = occupied_origin(fld, kernel, params, sc)
        if not res.S0:
            raise InvariantViolation("planted seed is not a seed")
        k += res.S1
    return _estimate(k, trials)


def connectivity_frequency(kernel: KernelSpec, dist: MarkDistribution, params: RenormParams,
                           m: int, n: int, trials: int, rng: np.random.Generator) -> Estimate:
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    sc = Scales.of(params, m, n).require_proper()
    k = 0
    for _ in range(trials):
        fld = build_fields(params, dist, origin_window(sc), rng)
        k += connectivity_event(fld, kernel, params, sc)
    return _estimate(k, trials)


def candidate_scales(n_max: int, m_min: int = 3):
    """``(m, n)`` with ``m >= m_min``, ``2m < n`` and ``2m | n``, ordered by ``n`` then ``m``.

    ``m_min = 3`` is the constraint ``m > 2`` that keeps the step-4 regions
    clear of the cluster; smaller values are for experiments only.
    """
    for n in range(3, n_max + 1):
        for m in range(m_min, n):
            if 2 * m < n and n % (2 * m) == 0:
                yield m, n


def search_scales(kernel: KernelSpec, dist: MarkDistribution, params: RenormParams, eps_prime: float,
                  trials: int, rng: np.random.Generator, n_max: int = 24, m_min: int = 3):
    """Smallest ``(m, n)`` whose connectivity frequency reaches ``1 - eps_prime``.

    Returns ``((m, n), Estimate)`` or ``(None, tried)`` with the list of tried cells.
    """
    tried = []
    for m, n in candidate_scales(n_max, m_min):
        est = connectivity_frequency(kernel, dist, params, m, n, trials, rng)
        tried.append(((m, n), est))
        if est.p_hat >= 1 - eps_prime:
            return (m, n), est
    return None, tried


def desk_params(lam_star: float = 32.0, lam: float = 96.0, K: int = 16, eps: float = 0.5, d: int = 2):
    """Gilbert kernel with Dirac(0.5) marks on a coarse lattice, the setting of the demos."""
    from .kernel import MarkDistribution as MD, boolean_power, normalize
    from .lattice import derive_params

    kernel = normalize(boolean_power(1.0, support=(0.5, 0.5)))
    dist = MD.dirac(0.5)
    return kernel, dist, derive_params(kernel, dist, lam, lam_star, 1.0, d, K=K, eps=eps)


def fully_seeded_field(params: RenormParams, lo, hi, value: float) -> LatticeField:
    """Every site carries ``value`` in the base field and in every layer."""
    from .lattice import dense_field

    return dense_field(params, lo, hi, value, np.full(1, value))
