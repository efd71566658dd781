"""Connection kernels h(a, b) and mark distributions.

A kernel decides how far apart two marked points may be and still be joined:
points x, y with marks a, b are connected when ``|x - y| <= h(a, b)``.  The
supported families are symmetric and monotone in each mark on their support,
which is what the coarse-graining machinery relies on.

All kernels carry a ``scale``.  The *working* kernel is ``h / scale``; after
:func:`normalize` its supremum over the support is 1 and every length in the
lattice construction is measured in these units.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, KernelDomainError


class Family(str, enum.Enum):
    BOOLEAN_POWER = "boolean_power"
    MIN = "min"
    MAX = "max"
    MILLER_ABRAHAMS = "miller_abrahams"


class Direction(str, enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"


# ---------------------------------------------------------------------------
# mark distributions


class MarkKind(str, enum.Enum):
    DIRAC = "dirac"
    UNIFORM = "uniform"
    POWER_LAW = "power_law"
    FINITE = "finite"


@dataclass(frozen=True)
class MarkDistribution:
    """Law of the i.i.d. marks.

    ``POWER_LAW`` has density proportional to ``E**alpha`` on ``[0, a0]``.
    ``FINITE`` puts mass ``weights[i]`` (normalized) on ``values[i]``.
    """

    kind: MarkKind
    value: float = 0.0
    lo: float = 0.0
    hi: float = 1.0
    alpha: float = 0.0
    a0: float = 1.0
    values: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        kind = MarkKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is MarkKind.UNIFORM and not self.lo < self.hi:
            raise ConfigurationError(f"uniform marks need lo < hi, got [{self.lo}, {self.hi}]")
        if kind is MarkKind.POWER_LAW:
            if self.alpha < 0 or self.a0 <= 0:
                raise ConfigurationError("power-law marks need alpha >= 0 and a0 > 0")
        if kind is MarkKind.FINITE:
            vals = tuple(float(v) for v in self.values)
            w = tuple(float(v) for v in self.weights) or tuple(1.0 for _ in vals)
            if not vals or len(vals) != len(w) or min(w) < 0 or sum(w) <= 0:
                raise ConfigurationError("finite marks need matching values/weights with positive total")
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, v: float) -> "MarkDistribution":
        return cls(MarkKind.DIRAC, value=float(v))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "MarkDistribution":
        return cls(MarkKind.UNIFORM, lo=float(lo), hi=float(hi))

    @classmethod
    def power_law(cls, alpha: float, a0: float = 1.0) -> "MarkDistribution":
        return cls(MarkKind.POWER_LAW, alpha=float(alpha), a0=float(a0))

    @classmethod
    def finite(cls, values: Sequence[float], weights: Sequence[float] | None = None) -> "MarkDistribution":
        return cls(MarkKind.FINITE, values=tuple(values), weights=tuple(weights or ()))

    @property
    def support(self) -> tuple[float, float]:
        k = self.kind
        if k is MarkKind.DIRAC:
            return (self.value, self.value)
        if k is MarkKind.UNIFORM:
            return (self.lo, self.hi)
        if k is MarkKind.POWER_LAW:
            return (0.0, self.a0)
        return (min(self.values), max(self.values))

    def _probs(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = self.kind
        if k is MarkKind.DIRAC:
            return np.full(size, self.value, dtype=float)
        if k is MarkKind.UNIFORM:
            return rng.uniform(self.lo, self.hi, size)
        if k is MarkKind.POWER_LAW:
            # inverse cdf of c * E^alpha on [0, a0]
            return self.a0 * rng.random(size) ** (1.0 / (self.alpha + 1.0))
        idx = rng.choice(len(self.values), size=size, p=self._probs())
        return np.asarray(self.values, dtype=float)[idx]

    def mean(self) -> float:
        k = self.kind
        if k is MarkKind.DIRAC:
            return self.value
        if k is MarkKind.UNIFORM:
            return 0.5 * (self.lo + self.hi)
        if k is MarkKind.POWER_LAW:
            return self.a0 * (self.alpha + 1.0) / (self.alpha + 2.0)
        return float(np.dot(self._probs(), self.values))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k is MarkKind.DIRAC:
            return (x >= self.value).astype(float)
        if k is MarkKind.UNIFORM:
            return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        if k is MarkKind.POWER_LAW:
            return np.clip(x / self.a0, 0.0, 1.0) ** (self.alpha + 1.0)
        vals = np.asarray(self.values)
        p = self._probs()
        return (p[None, :] * (vals[None, :] <= x.reshape(-1, 1))).sum(axis=1).reshape(x.shape)

    def mass(self, lo: float, hi: float) -> float:
        """Probability of the closed interval ``[lo, hi]``."""
        if hi < lo:
            return 0.0
        k = self.kind
        if k is MarkKind.DIRAC:
            return float(lo <= self.value <= hi)
        if k is MarkKind.FINITE:
            v = np.asarray(self.values)
            return float(self._probs()[(v >= lo) & (v <= hi)].sum())
        return float(self.cdf(hi) - self.cdf(lo))


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelSpec:
    family: Family
    support: tuple[float, float]
    gamma: float = 1.0
    zeta: float = 1.0
    scale: float = 1.0
    direction: Direction = field(init=False)

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        lo, hi = (float(self.support[0]), float(self.support[1]))
        object.__setattr__(self, "support", (lo, hi))
        if not lo <= hi:
            raise ConfigurationError(f"empty support [{lo}, {hi}]")
        if self.scale <= 0:
            raise ConfigurationError("kernel scale must be positive")
        if fam is Family.MILLER_ABRAHAMS:
            if lo < 0 < hi:
                raise ConfigurationError(
                    "Miller-Abrahams kernel with marks of both signs is not monotone; "
                    "the positive-association (FKG) argument does not apply. "
                    "Restrict the mark support to [0, inf) or (-inf, 0]."
                )
            # on (-inf, 0] the kernel grows as marks approach 0
            d = Direction.INCREASING if hi <= 0 and lo < 0 else Direction.DECREASING
        else:
            if lo < 0:
                raise ConfigurationError(f"{fam.value} kernel needs nonnegative marks")
            if fam is Family.BOOLEAN_POWER and self.gamma <= 0:
                raise ConfigurationError("boolean power kernel needs gamma > 0")
            d = Direction.INCREASING
        object.__setattr__(self, "direction", d)

    @property
    def best_mark(self) -> float:
        """Mark that maximizes ``h(a, .)`` for every a."""
        lo, hi = self.support
        return hi if self.direction is Direction.INCREASING else lo

    @property
    def increasing(self) -> bool:
        return self.direction is Direction.INCREASING

    def __call__(self, a, b):
        """Working kernel ``h(a, b) / scale``."""
        return eval_kernel(self, a, b) / self.scale


def boolean_power(gamma: float, support=(0.0, 1.0)) -> KernelSpec:
    return KernelSpec(Family.BOOLEAN_POWER, tuple(support), gamma=gamma)


def min_kernel(support=(0.0, 1.0)) -> KernelSpec:
    return KernelSpec(Family.MIN, tuple(support))


def max_kernel(support=(0.0, 1.0)) -> KernelSpec:
    return KernelSpec(Family.MAX, tuple(support))


def miller_abrahams(zeta: float, support=(0.0, 1.0)) -> KernelSpec:
    return KernelSpec(Family.MILLER_ABRAHAMS, tuple(support), zeta=zeta)


def make_kernel(family, support, gamma=1.0, zeta=1.0) -> KernelSpec:
    return KernelSpec(Family(family), tuple(support), gamma=gamma, zeta=zeta)


def _check_domain(spec: KernelSpec, *xs):
    lo, hi = spec.support
    for x in xs:
        arr = np.asarray(x, dtype=float)
        if arr.size and (not np.all(arr >= lo) or not np.all(arr <= hi)):
            bad = arr[(arr < lo) | (arr > hi) | np.isnan(arr)]
            raise KernelDomainError(
                f"mark {bad.flat[0] if bad.size else arr.flat[0]!r} outside support [{lo}, {hi}]"
            )


def _raw(spec: KernelSpec, a, b):
    fam = spec.family
    if fam is Family.BOOLEAN_POWER:
        return np.power(a + b, spec.gamma)
    if fam is Family.MIN:
        return np.minimum(a, b)
    if fam is Family.MAX:
        return np.maximum(a, b)
    return spec.zeta - (np.abs(a) + np.abs(b) + np.abs(a - b))


def eval_kernel(spec: KernelSpec, a, b):
    """Unscaled ``h(a, b)``; scalars give a float, arrays broadcast."""
    _check_domain(spec, a, b)
    out = _raw(spec, np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def h_star(spec: KernelSpec, a):
    """``sup_b h(a, b)`` over the support, unscaled."""
    _check_domain(spec, a)
    out = _raw(spec, np.asarray(a, dtype=float), spec.best_mark)
    return float(out) if np.ndim(out) == 0 else out


def sup_h(spec: KernelSpec) -> float:
    b = spec.best_mark
    return float(_raw(spec, np.float64(b), np.float64(b)))


def normalize(spec: KernelSpec) -> KernelSpec:
    """Copy of ``spec`` whose working kernel has supremum 1."""
    s = sup_h(spec)
    if not s > 0:
        raise ConfigurationError(f"kernel supremum {s} is not positive; nothing can connect")
    return dataclasses.replace(spec, scale=s)


def _worst_gap(spec: KernelSpec, a: float) -> float:
    """``sup_b [h*(b) - h(a, b)]`` of the working kernel.

    For every supported family the gap is monotone in b, so the supremum sits
    at an endpoint of the support.
    """
    lo, hi = spec.support
    best = spec.best_mark
    gaps = [(_raw(spec, best, b) - _raw(spec, a, b)) / spec.scale for b in (lo, hi)]
    return float(max(gaps))


def u_star(spec: KernelSpec, delta: float, dist: MarkDistribution | None = None) -> tuple[float, float]:
    """Largest interval ``U`` at the good end of the support with
    ``h(a, b) >= h*(b) - delta`` for all ``a`` in ``U`` and every mark ``b``.

    The interval is ``[hi - eta, hi]`` for increasing kernels and
    ``[lo, lo + eta]`` for decreasing ones (working-kernel units).  When
    ``dist`` is given the interval must carry positive mass under it.
    """
    if not delta > 0:
        raise ConfigurationError("u_star needs delta > 0")
    lo, hi = spec.support
    fam = spec.family
    s = spec.scale
    if fam in (Family.MIN, Family.MAX):
        edge = hi - delta * s
    elif fam is Family.MILLER_ABRAHAMS:
        # gap is 2 (|a| - |best|) for a on the far side of best
        edge = lo + delta * s / 2 if not spec.increasing else hi - delta * s / 2
    else:
        g = spec.gamma
        edge = lo
        for b in (lo, hi):
            top = (hi + b) ** g - delta * s
            if top > 0:
                edge = max(edge, top ** (1.0 / g) - b)
    if spec.increasing:
        interval = (min(max(edge, lo), hi), hi)
    else:
        interval = (lo, max(min(edge, hi), lo))
    if dist is not None and dist.mass(*interval) <= 0:
        raise ConfigurationError(
            f"u_star interval {interval} has zero mass under {dist.kind.value} marks; increase delta"
        )
    return interval


def in_interval(x, interval) -> np.ndarray:
    lo, hi = interval
    x = np.asarray(x, dtype=float)
    return (x >= lo) & (x <= hi)


def grid_u_star(spec: KernelSpec, delta: float, n: int = 1001) -> tuple[float, float]:
    """Brute-force companion to :func:`u_star` on an ``n`` point grid."""
    lo, hi = spec.support
    grid = np.linspace(lo, hi, n)
    hs = _raw(spec, spec.best_mark, grid) / spec.scale
    ok = [bool(np.all(_raw(spec, a, grid) / spec.scale >= hs - delta - 1e-12)) for a in grid]
    ok = np.asarray(ok)
    if spec.increasing:
        bad = np.nonzero(~ok)[0]
        start = grid[bad[-1] + 1] if bad.size else lo
        return (float(start), hi)
    bad = np.nonzero(~ok)[0]
    end = grid[bad[0] - 1] if bad.size else hi
    return (lo, float(end))


def describe(spec: KernelSpec) -> dict:
    d = {"family": spec.family.value, "support": list(spec.support), "scale": spec.scale,
         "direction": spec.direction.value}
    if spec.family is Family.BOOLEAN_POWER:
        d["gamma"] = spec.gamma
    if spec.family is Family.MILLER_ABRAHAMS:
        d["zeta"] = spec.zeta
    return d


__all__ = [
    "Family", "Direction", "MarkKind", "MarkDistribution", "KernelSpec",
    "boolean_power", "min_kernel", "max_kernel", "miller_abrahams", "make_kernel",
    "eval_kernel", "h_star", "sup_h", "normalize", "u_star", "grid_u_star", "in_interval",
    "describe",
]
