"""Reference implementations written independently of the package code.

They are deliberately naive: plain loops, no numpy vectorization, no shared
helpers, so that agreement with the production routes is meaningful.
"""
from __future__ import annotations

import math
from collections import deque
from fractions import Fraction
from functools import lru_cache


def kernel_value(family, a, b, gamma=1.0, zeta=1.0):
    if family == "boolean_power":
        return (a + b) ** gamma
    if family == "min":
        return a if a < b else b
    if family == "max":
        return a if a > b else b
    if family == "miller_abrahams":
        return zeta - (abs(a) + abs(b) + abs(a - b))
    raise ValueError(family)


def brute_edges(positions, marks, family, scale=1.0, gamma=1.0, zeta=1.0):
    n = len(positions)
    out = set()
    for i in range(n):
        for j in range(i + 1, n):
            d = math.sqrt(sum((p - q) ** 2 for p, q in zip(positions[i], positions[j])))
            if d <= kernel_value(family, marks[i], marks[j], gamma, zeta) / scale:
                out.add((i, j))
    return out


def bfs_components(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    lab = [-1] * n
    c = 0
    for s in range(n):
        if lab[s] >= 0:
            continue
        lab[s] = c
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if lab[v] < 0:
                    lab[v] = c
                    q.append(v)
        c += 1
    return lab


def exhaustive_crossings(n, edges, tags):
    """Largest packing of vertex-disjoint crossings by enumerating all paths.

    ``tags``: 0 outside, 1 source, 2 interior, 3 sink.  Feasible for about a
    dozen eligible vertices.
    """
    adj = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    paths = []

    def extend(path, used):
        u = path[-1]
        for v in sorted(adj[u]):
            if v in used:
                continue
            if tags[v] == 3:
                paths.append(frozenset(path + [v]))
            elif tags[v] == 2:
                extend(path + [v], used | {v})

    for s in range(n):
        if tags[s] == 1:
            extend([s], {s})
    masks = sorted({sum(1 << v for v in p) for p in paths})

    @lru_cache(maxsize=None)
    def best(start, used):
        top = 0
        for k in range(start, len(masks)):
            if masks[k] & used == 0:
                top = max(top, 1 + best(k + 1, used | masks[k]))
        return top

    return best(0, 0)


def min_vertex_cut_bruteforce(n, edges, tags):
    """Smallest set of eligible vertices whose removal kills every crossing."""
    elig = [v for v in range(n) if tags[v] != 0]
    from itertools import combinations

    def has_crossing(removed):
        adj = [set() for _ in range(n)]
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        seen = set()
        q = deque(v for v in range(n) if tags[v] == 1 and v not in removed)
        seen.update(q)
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v in removed or v in seen:
                    continue
                if tags[v] == 3:
                    return True
                if tags[v] == 2:
                    seen.add(v)
                    q.append(v)
        return False

    for k in range(len(elig) + 1):
        for sub in combinations(elig, k):
            if not has_crossing(set(sub)):
                return k
    return len(elig)


# ---------------------------------------------------------------------------
# renormalization regions, written from the set definitions with exact rationals


def _grid(lo, hi, d):
    from itertools import product
    return product(range(lo, hi + 1), repeat=d)


def region_T_n(n, q, d):
    out = set()
    for k in _grid(-n * q - 1, n * q + 1, d):
        x = [Fraction(v, q) for v in k]
        r = max(abs(v) for v in x)
        if n - 1 < r <= n and all(0 <= v <= x[0] for v in x):
            out.add(k)
    return out


def region_T_mn(m, n, q, d):
    eps = Fraction(1, q)
    out = set()
    for k in _grid(-1, (n + 2 * m + 1) * q + 1, d):
        x = [Fraction(v, q) for v in k]
        if n + eps <= x[0] <= n + eps + 2 * m and all(0 <= v <= n for v in x[1:]):
            out.add(k)
    return out


def region_A_n(n, q, d):
    out = set()
    for k in _grid(-n * q - 1, n * q + 1, d):
        r = max(abs(Fraction(v, q)) for v in k)
        if n - 1 < r <= n:
            out.add(k)
    return out


def region_T_sigma_J(n, q, d, sigma, J):
    out = set()
    for k in region_A_n(n, q, d):
        v = [s * c for s, c in zip(sigma, k)]
        if all(0 <= vi <= v[J - 1] for vi in v):
            out.add(k)
    return out


def sgn(v):
    return 1 if v >= 0 else -1


def region_T_star(region):
    return {(k[0],) + tuple(-c for c in k[1:]) for k in region}


def region_hat(region_T, b4, j):
    """hat T_j from T via g(.|b4), then (|.|, ...) o theta^(1 or 3) for j = 2, 3."""
    one = {(k[0],) + tuple(-sgn(a) * c for a, c in zip(b4[1:], k[1:])) for k in region_T}
    if j == 1:
        return one
    out = set()
    for k in one:
        x1, x2 = k[0], k[1]
        y = (-x2, x1) if j == 2 else (x2, -x1)
        out.add((abs(y[0]), y[1]) + k[2:])
    return out


def boundary_set(R, q, radius):
    """Sites outside R within Euclidean distance ``radius`` (real units) of R, by scanning."""
    R = set(R)
    if not R:
        return set()
    d = len(next(iter(R)))
    r = int(radius * q) + 1
    lo = [min(k[a] for k in R) - r for a in range(d)]
    hi = [max(k[a] for k in R) + r for a in range(d)]
    from itertools import product
    out = set()
    for k in product(*[range(lo[a], hi[a] + 1) for a in range(d)]):
        if k in R:
            continue
        for z in R:
            if math.sqrt(sum((a - b) ** 2 for a, b in zip(k, z))) / q <= radius:
                out.add(k)
                break
    return out


def seed_scan(A_good, region, m_units):
    """Centres z with z + [-m, m]^d inside ``region`` and all sites good (brute force)."""
    from itertools import product
    region = set(region)
    out = []
    for z in sorted(region):
        d = len(z)
        box = [tuple(z[a] + o[a] for a in range(d)) for o in product(range(-m_units, m_units + 1), repeat=d)]
        if all(b in region and A_good(b) for b in box):
            out.append(z)
    return out
