"""Tanemura's exploration of left-right crossings in a box of Z^2.

The box is ``Lam = {0..M+1} x {0..M-1}``.  Row ``s`` starts at ``(0, s)``.  For
each start, a cluster grows one site at a time.  The next site is the largest
unvisited boundary site, under an order that favours sites near the most
recently added points and turns counterclockwise.  An oracle decides whether
that site is occupied and linked to its anchor in the cluster.  A cluster
stops once it touches the right column ``x = M + 1`` or its boundary is used
up.  The number of clusters that reach the right column is ``N_M``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .crossings import Region, max_disjoint_crossings_tagged
from .errors import ConfigurationError, InvariantViolation

Site = tuple

E1 = (1, 0)
UNIT = ((1, 0), (0, 1), (-1, 0), (0, -1))


def psi(v: Site) -> Site:
    """Counterclockwise quarter turn: e1 -> e2, e2 -> -e1."""
    return (-v[1], v[0])


def _add(a: Site, b: Site) -> Site:
    return (a[0] + b[0], a[1] + b[1])


def _sub(a: Site, b: Site) -> Site:
    return (a[0] - b[0], a[1] - b[1])


def _adjacent(a: Site, b: Site) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def _check_string(points) -> list:
    pts = [tuple(int(c) for c in p) for p in points]
    if not pts:
        raise ConfigurationError("empty string")
    if len(set(pts)) != len(pts):
        raise ConfigurationError("string has repeated points")
    seen = {pts[0]}
    todo = [pts[0]]
    rest = set(pts)
    while todo:
        u = todo.pop()
        for e in UNIT:
            w = _add(u, e)
            if w in rest and w not in seen:
                seen.add(w)
                todo.append(w)
    if len(seen) != len(pts):
        raise ConfigurationError("string is not connected")
    return pts


def boundary_order(points: Iterable[Site]) -> list:
    """Outer boundary of a connected string of sites, in increasing order.

    With ``x_0 = x_1 - e1``, the sites next to ``x_n`` come first (largest), then
    those next to ``x_{n-1}`` but not ``x_n``, and so on.  Inside the group of
    ``x_k``, with ``v`` pointing to its latest neighbour ``x_a(k)``, the order
    is ``x_k + psi(v) > x_k + psi^2(v) > x_k + psi^3(v) > x_k + v``.
    """
    xs = _check_string(points)
    ext = [_sub(xs[0], E1)] + xs
    members = set(xs)
    taken = set()
    decreasing = []
    for k in range(len(xs), 0, -1):
        xk = ext[k]
        a = max(j for j in range(len(ext)) if _adjacent(xk, ext[j]))
        v = _sub(ext[a], xk)
        w = v
        for _ in range(4):
            w = psi(w)
            y = _add(xk, w)
            if y not in members and y not in taken:
                taken.add(y)
                decreasing.append(y)
    return decreasing[::-1]


# ---------------------------------------------------------------------------
# oracles


@dataclass(frozen=True)
class Query:
    s: int
    j: int  # the candidate becomes x^s_{j+1}; j = 0 for the starting site
    site: Site
    k: int  # index of the anchor x^s_k in row s, 0 for the starting site
    anchor: Site | None


class BernoulliOracle:
    """Independent yes with probability ``p`` for every query."""

    def __init__(self, p: float, rng: np.random.Generator):
        if not 0 <= p <= 1:
            raise ConfigurationError("p must lie in [0, 1]")
        self.p = p
        self.rng = rng

    def __call__(self, q: Query, state) -> bool:
        return bool(self.rng.random() < self.p)


class FieldOracle:
    """Answers from a fixed occupation field; an occupied site is linked to
    every occupied nearest neighbour."""

    def __init__(self, occupied: Iterable[Site]):
        self.occupied = {tuple(p) for p in occupied}

    def __call__(self, q: Query, state) -> bool:
        return q.site in self.occupied


class ConstantOracle:
    def __init__(self, answer: bool):
        self.answer = bool(answer)

    def __call__(self, q: Query, state) -> bool:
        return self.answer


class ScriptedOracle:
    """Replays ``s j x y k answer`` lines, refusing any query that differs."""

    def __init__(self, lines: Iterable):
        self.script = []
        for raw in lines:
            if isinstance(raw, str):
                raw = raw.split("#")[0].split()
                if not raw:
                    continue
            s, j, x, y, k, ans = (int(v) for v in raw)
            self.script.append((s, j, (x, y), k, bool(ans)))
        self.pos = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedOracle":
        return cls(Path(path).read_text().splitlines())

    def __call__(self, q: Query, state) -> bool:
        if self.pos >= len(self.script):
            raise ConfigurationError(f"script exhausted at query {q}")
        s, j, site, k, ans = self.script[self.pos]
        if (s, j, site, k) != (q.s, q.j, q.site, q.k):
            raise ConfigurationError(f"script line {self.pos + 1} expects {(s, j, site, k)}, got {q}")
        self.pos += 1
        return ans

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.script)


def write_script(queries: Iterable, path) -> None:
    with open(Path(path), "w") as fh:
        for q, ans in queries:
            fh.write(f"{q.s} {q.j} {q.site[0]} {q.site[1]} {q.k} {int(ans)}\n")


# ---------------------------------------------------------------------------
# the algorithm


class TanemuraError(RuntimeError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class TanemuraState:
    M: int
    s: int = 0
    j: int = 0
    E: list = field(default_factory=list)  # per row, insertion-ordered occupied string
    F: list = field(default_factory=list)  # per row, rejected sites
    seq: list = field(default_factory=list)  # per row, x^s_1, x^s_2, ...
    J: list = field(default_factory=list)  # per row, stopping index (None while running)
    visited: set = field(default_factory=set)
    links: list = field(default_factory=list)  # (child, anchor) pairs
    log: list = field(default_factory=list)  # (Query, answer)

    def __post_init__(self):
        if not self.E:
            self.E = [[] for _ in range(self.M)]
            self.F = [set() for _ in range(self.M)]
            self.seq = [[] for _ in range(self.M)]
            self.J = [None] * self.M

    def in_box(self, p: Site) -> bool:
        return 0 <= p[0] <= self.M + 1 and 0 <= p[1] <= self.M - 1

    def reaches_right(self, s: int) -> bool:
        return any(p[0] == self.M + 1 for p in self.E[s])

    def zeta(self) -> np.ndarray:
        """Occupation field as an ``(M, M + 2)`` array indexed ``[y, x]``."""
        z = np.zeros((self.M, self.M + 2), dtype=np.int8)
        for row in self.E:
            for x, y in row:
                z[y, x] = 1
        return z

    @property
    def N(self) -> int:
        return sum(self.reaches_right(s) for s in range(self.M))

    def check(self) -> None:
        seen = set()
        for s in range(self.M):
            e, f, seq = self.E[s], self.F[s], self.seq[s]
            if set(e) & f:
                raise InvariantViolation("E and F overlap", {"s": s})
            if set(e) | f != set(seq) or len(e) + len(f) != len(seq):
                raise InvariantViolation("E and F do not partition the visited row", {"s": s})
            if [p for p in seq if p in set(e)] != e:
                raise InvariantViolation("occupied string out of visiting order", {"s": s})
            if seen & set(seq):
                raise InvariantViolation("site visited twice", {"s": s})
            seen |= set(seq)
        if seen != self.visited:
            raise InvariantViolation("visited set out of sync")


Oracle = Callable[[Query, TanemuraState], bool]


def admissible_boundary(string, visited, M: int) -> list:
    """Unvisited boundary sites of ``string`` inside the box, increasing order."""
    return [p for p in boundary_order(string)
            if 0 <= p[0] <= M + 1 and 0 <= p[1] <= M - 1 and p not in visited]


def _ask(oracle: Oracle, q: Query, state: TanemuraState) -> bool:
    try:
        ans = bool(oracle(q, state))
    except Exception as exc:  # keep the partial run for diagnosis
        raise TanemuraError(f"oracle failed on {q}: {exc}", state) from exc
    state.log.append((q, ans))
    return ans


def run_tanemura(M: int, oracle: Oracle, check: bool = False, last: int | None = None) -> TanemuraState:
    """Run the full schedule: all starting sites first, then row by row.

    Row ``s`` is grown up to ``x^s_last``, with ``last = M**2`` by default.  For
    ``M = 1`` that leaves no growth step at all; pass a larger ``last`` (at most
    the box size) to lift the cap.
    """
    if M < 1:
        raise ConfigurationError("M must be at least 1")
    last = M * M if last is None else int(last)
    st = TanemuraState(M)
    for s in range(M):
        x = (0, s)
        st.s, st.j = s, 1
        st.visited.add(x)
        st.seq[s].append(x)
        if _ask(oracle, Query(s, 0, x, 0, None), st):
            st.E[s].append(x)
        else:
            st.F[s].add(x)
    if check:
        st.check()
    for s in range(M):
        st.s = s
        j = 1
        while j <= last - 1:
            st.j = j
            if not st.E[s] or st.reaches_right(s):
                break
            cand = admissible_boundary(st.E[s], st.visited, M)
            if not cand:
                break
            nxt = cand[-1]
            eset = set(st.E[s])
            k = max(i for i, p in enumerate(st.seq[s], start=1) if p in eset and _adjacent(p, nxt))
            anchor = st.seq[s][k - 1]
            ans = _ask(oracle, Query(s, j, nxt, k, anchor), st)
            st.visited.add(nxt)
            st.seq[s].append(nxt)
            if ans:
                st.E[s].append(nxt)
                st.links.append((nxt, anchor))
            else:
                st.F[s].add(nxt)
            j += 1
            if check:
                st.check()
        st.J[s] = j
    st.j = None
    return st


def count_crossings_of_zeta(zeta: np.ndarray, links: Iterable | None = None) -> int:
    """Vertex-disjoint left-right crossings of the occupied sites of ``zeta``.

    ``zeta`` is indexed ``[y, x]`` with ``x`` from 0 to ``M + 1``.  Edges join
    occupied nearest neighbours; when ``links`` is given only those pairs.
    """
    z = np.asarray(zeta)
    M, W = z.shape
    occ = [(x, y) for y in range(M) for x in range(W) if z[y, x]]
    index = {p: i for i, p in enumerate(occ)}
    if links is None:
        pairs = [(p, (p[0] + dx, p[1] + dy)) for p in occ for dx, dy in ((1, 0), (0, 1))]
    else:
        pairs = [(tuple(a), tuple(b)) for a, b in links]
    edges = [(index[a], index[b]) for a, b in pairs if a in index and b in index]
    tags = [Region.SOURCE if x == 0 else Region.SINK if x == W - 1 else Region.INTERIOR for x, _ in occ]
    return max_disjoint_crossings_tagged(len(occ), edges, tags, witnesses=False).count


def dump_zeta(zeta: np.ndarray, path) -> None:
    """Grid of 0/1, one row of the box per line, bottom row first."""
    np.savetxt(Path(path), np.asarray(zeta), fmt="%d")
