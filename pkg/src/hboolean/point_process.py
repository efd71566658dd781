"""Marked Poisson point processes on boxes, with layer splitting."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .kernel import MarkDistribution


@dataclass(frozen=True)
class Box:
    """Axis-parallel box ``prod [lo_i, hi_i]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ConfigurationError("box bounds must have equal positive length")
        if any(h < l for l, h in zip(lo, hi)):
            raise ConfigurationError(f"empty box {lo} x {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, half: float, d: int) -> "Box":
        return cls((-half,) * d, (half,) * d)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def expand(self, r: float) -> "Box":
        return Box(tuple(v - r for v in self.lo), tuple(v + r for v in self.hi))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)


@dataclass
class MarkedPointSet:
    positions: np.ndarray  # (n, d)
    marks: np.ndarray  # (n,)
    window: Box
    layer: np.ndarray | None = None  # (n,) layer id, 0 = base

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, self.window.d)
        self.marks = np.asarray(self.marks, dtype=float).reshape(-1)
        if len(self.marks) != len(self.positions):
            raise ConfigurationError("positions and marks differ in length")
        if self.layer is not None:
            self.layer = np.asarray(self.layer, dtype=np.int64).reshape(-1)

    def __len__(self):
        return len(self.marks)

    @property
    def d(self) -> int:
        return self.window.d

    def restrict(self, mask: np.ndarray) -> "MarkedPointSet":
        return MarkedPointSet(self.positions[mask], self.marks[mask], self.window,
                              None if self.layer is None else self.layer[mask])


@dataclass
class LayeredPointSet:
    """A base layer at intensity ``lam_star`` plus ``K`` thin layers."""

    base: MarkedPointSet
    layers: list = field(default_factory=list)
    lam: float = 0.0
    lam_star: float = 0.0

    @property
    def K(self) -> int:
        return len(self.layers)

    def union(self) -> MarkedPointSet:
        parts = [self.base] + list(self.layers)
        pos = np.concatenate([p.positions for p in parts]) if parts else np.zeros((0, self.base.d))
        marks = np.concatenate([p.marks for p in parts])
        tag = np.concatenate([np.full(len(p), i, dtype=np.int64) for i, p in enumerate(parts)])
        return MarkedPointSet(pos, marks, self.base.window, tag)


def sample_ppp(lam: float, window: Box, rng: np.random.Generator) -> np.ndarray:
    """Positions of a homogeneous Poisson process of intensity ``lam``."""
    if lam < 0:
        raise ConfigurationError("intensity must be nonnegative")
    # numpy draws the count by inversion for small means and PTRS otherwise
    n = rng.poisson(lam * window.volume)
    lo = np.asarray(window.lo)
    return lo + rng.random((n, window.d)) * (np.asarray(window.hi) - lo)


def attach_marks(positions: np.ndarray, dist: MarkDistribution, rng: np.random.Generator,
                 window: Box) -> MarkedPointSet:
    return MarkedPointSet(positions, dist.sample(rng, len(positions)), window)


def sample_marked(lam: float, window: Box, dist: MarkDistribution, rng: np.random.Generator) -> MarkedPointSet:
    return attach_marks(sample_ppp(lam, window, rng), dist, rng, window)


def split_layers(lam: float, lam_star: float, K: int, window: Box, dist: MarkDistribution,
                 rng: np.random.Generator) -> LayeredPointSet:
    """Independent base layer at ``lam_star`` and ``K`` layers at ``(lam - lam_star) / K``.

    By superposition their union is a marked process of intensity ``lam``.
    """
    if not 0 <= lam_star < lam:
        raise ConfigurationError(f"need 0 <= lam_star < lam, got lam_star={lam_star}, lam={lam}")
    if K < 1:
        raise ConfigurationError("need at least one extra layer")
    base = sample_marked(lam_star, window, dist, rng)
    per = (lam - lam_star) / K
    layers = [sample_marked(per, window, dist, rng) for _ in range(K)]
    return LayeredPointSet(base, layers, lam=lam, lam_star=lam_star)


def dump_points(pts: MarkedPointSet, path) -> None:
    """One line per point: ``x1 ... xd mark``."""
    data = np.column_stack([pts.positions, pts.marks]) if len(pts) else np.zeros((0, pts.d + 1))
    np.savetxt(Path(path), data, fmt="%.17g")


def load_points(path, window: Box) -> MarkedPointSet:
    data = np.loadtxt(Path(path), ndmin=2)
    if data.size == 0:
        return MarkedPointSet(np.zeros((0, window.d)), np.zeros(0), window)
    if data.shape[1] != window.d + 1:
        raise ConfigurationError(f"expected {window.d + 1} columns, found {data.shape[1]}")
    return MarkedPointSet(data[:, :-1], data[:, -1], window)


def points_from_arrays(positions: Sequence, marks: Sequence, window: Box | None = None) -> MarkedPointSet:
    pos = np.asarray(positions, dtype=float)
    pos = pos.reshape(len(pos), -1)
    if window is None:
        d = pos.shape[1]
        window = Box(tuple(pos.min(axis=0)) if len(pos) else (0.0,) * d,
                     tuple(pos.max(axis=0)) if len(pos) else (0.0,) * d)
    return MarkedPointSet(pos, marks, window)
