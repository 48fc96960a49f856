"""Componentwise partial order on R^r.

    x <= y   iff x_i <= y_i for all i          (leq)
    x <  y   iff x <= y and x != y             (strictly_less)
    x << y   iff x_i <  y_i for all i          (strongly_less)

All predicates accept an optional ``tol`` for points produced by numerical
flows; with the default ``tol=0`` comparisons are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from errors import ConfigError, DimensionMismatchError


def as_point(x: Sequence[float] | np.ndarray) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    if p.ndim != 1 or p.size < 1:
        raise ConfigError(f"a point must be a nonempty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ConfigError("point coordinates must be finite")
    return p


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_point(x), as_point(y)
    if a.shape != b.shape:
        raise DimensionMismatchError(a.size, b.size)
    return a, b


def leq(x, y, tol: float = 0.0) -> bool:
    a, b = _pair(x, y)
    return bool(np.all(a <= b + tol))


def points_equal(x, y, tol: float = 0.0) -> bool:
    a, b = _pair(x, y)
    return bool(np.all(np.abs(a - b) <= tol))


def strictly_less(x, y, tol: float = 0.0) -> bool:
    return leq(x, y, tol) and not points_equal(x, y, tol)


def strongly_less(x, y, tol: float = 0.0) -> bool:
    a, b = _pair(x, y)
    return bool(np.all(a + tol < b))


def is_unordered_set(points: Iterable, tol: float = 0.0) -> bool:
    """True iff no two members are related by ``<`` (singletons are unordered)."""
    pts = [as_point(p) for p in points]
    if not pts:
        raise ConfigError("is_unordered_set needs a nonempty set")
    for a, b in combinations(pts, 2):
        if strictly_less(a, b, tol) or strictly_less(b, a, tol):
            return False
    return True


def order_sup(points: Iterable) -> np.ndarray:
    pts = np.array([as_point(p) for p in points])
    if pts.size == 0:
        raise ConfigError("order_sup of an empty set")
    return pts.max(axis=0)


def order_inf(points: Iterable) -> np.ndarray:
    pts = np.array([as_point(p) for p in points])
    if pts.size == 0:
        raise ConfigError("order_inf of an empty set")
    return pts.min(axis=0)


@dataclass(frozen=True)
class OrderInterval:
    """[lo, hi] (closed) or [[lo, hi]] (open) in the componentwise order."""

    lo: np.ndarray
    hi: np.ndarray
    open: bool = False

    def __post_init__(self):
        lo, hi = _pair(self.lo, self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.open and not strongly_less(lo, hi):
            raise ConfigError("open order interval needs lo << hi")
        if not self.open and not leq(lo, hi):
            raise ConfigError("closed order interval needs lo <= hi")

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x, tol: float = 0.0) -> bool:
        if self.open:
            return strongly_less(self.lo, x, tol) and strongly_less(x, self.hi, tol)
        return leq(self.lo, x, tol) and leq(x, self.hi, tol)
