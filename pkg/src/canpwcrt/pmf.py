"""Sparse discrete probability mass functions over integer bit-times.

A :class:`Pmf` is an ordered list of ``(value, mass)`` pairs plus a
``residual``: probability that was cut off from the represented support
and is always read as lying beyond the largest value.  Partial PMFs
(pieces produced by :func:`split`) carry a total below one.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

MASS_TOLERANCE = 1e-9
# Entries lighter than this are moved into the residual after a convolution.
MASS_FLOOR = 1e-300


class Boundary(Enum):
    """Which side of a split owns the boundary point ``t``."""

    TO_STABLE = "stable"
    TO_PENDING = "pending"


@dataclass(frozen=True, eq=False)
class Pmf:
    values: np.ndarray
    masses: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        masses = np.asarray(self.masses, dtype=np.float64)
        if values.ndim != 1 or values.shape != masses.shape:
            raise ValueError("values and masses must be 1-D arrays of equal length")
        if values.size and values[0] < 0:
            raise ValueError("PMF values must be non-negative bit-times")
        if values.size > 1 and not np.all(np.diff(values) > 0):
            raise ValueError("PMF values must be strictly increasing")
        if masses.size and not np.all(masses > 0):
            raise ValueError("PMF masses must be positive")
        if not 0.0 <= self.residual <= 1.0 + MASS_TOLERANCE:
            raise ValueError(f"residual {self.residual} outside [0, 1]")
        values.flags.writeable = False
        masses.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "residual", float(self.residual))

    @classmethod
    def from_dict(cls, mapping: Mapping[int, float], residual: float = 0.0) -> Pmf:
        items = sorted((int(v), float(m)) for v, m in mapping.items() if m != 0)
        return cls(
            np.array([v for v, _ in items], dtype=np.int64),
            np.array([m for _, m in items], dtype=np.float64),
            residual,
        )

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], residual: float = 0.0) -> Pmf:
        acc: dict[int, float] = {}
        for v, m in pairs:
            acc[int(v)] = acc.get(int(v), 0.0) + float(m)
        return cls.from_dict(acc, residual)

    @classmethod
    def empty(cls) -> Pmf:
        return _raw(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64), 0.0)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def total(self) -> float:
        """Represented mass, excluding the residual."""
        return float(self.masses.sum())

    @property
    def min_value(self) -> int:
        if not self.size:
            raise ValueError("empty PMF has no support")
        return int(self.values[0])

    @property
    def max_value(self) -> int:
        if not self.size:
            raise ValueError("empty PMF has no support")
        return int(self.values[-1])

    def is_empty(self) -> bool:
        return self.size == 0 and self.residual == 0.0

    def to_dict(self) -> dict[int, float]:
        return {int(v): float(m) for v, m in zip(self.values, self.masses)}

    def mass_at(self, value: int) -> float:
        idx = np.searchsorted(self.values, value)
        if idx < self.size and self.values[idx] == value:
            return float(self.masses[idx])
        return 0.0

    def allclose(self, other: Pmf, atol: float = 1e-12) -> bool:
        """Same support and masses within ``atol``; residuals compared too."""
        return (
            np.array_equal(self.values, other.values)
            and bool(np.all(np.abs(self.masses - other.masses) <= atol))
            and abs(self.residual - other.residual) <= atol
        )

    def fold_residual(self) -> Pmf:
        """Move the residual onto the largest value."""
        if not self.size or self.residual == 0.0:
            return self
        masses = self.masses.copy()
        masses[-1] += self.residual
        return _raw(self.values, masses, 0.0)

    def __repr__(self) -> str:
        body = ", ".join(f"{v}: {m:.6g}" for v, m in zip(self.values[:8], self.masses[:8]))
        if self.size > 8:
            body += f", ... ({self.size} points)"
        return f"Pmf({{{body}}}, residual={self.residual:.3g})"


def _raw(values: np.ndarray, masses: np.ndarray, residual: float) -> Pmf:
    # Skips validation; callers guarantee the invariants.
    pmf = object.__new__(Pmf)
    values.flags.writeable = False
    masses.flags.writeable = False
    object.__setattr__(pmf, "values", values)
    object.__setattr__(pmf, "masses", masses)
    object.__setattr__(pmf, "residual", float(residual))
    return pmf


def _merge_sorted(values: np.ndarray, masses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum masses of equal values; input in any order, output ascending."""
    if values.size == 0:
        return values, masses
    order = np.argsort(values, kind="stable")
    values = values[order]
    masses = masses[order]
    starts = np.flatnonzero(np.r_[True, values[1:] != values[:-1]])
    return values[starts], np.add.reduceat(masses, starts)


def point_mass(value: int, mass: float = 1.0) -> Pmf:
    if not 0.0 < mass <= 1.0 + MASS_TOLERANCE:
        raise ValueError(f"point mass {mass} outside (0, 1]")
    if value < 0:
        raise ValueError(f"negative bit-time {value}")
    return _raw(np.array([value], dtype=np.int64), np.array([mass], dtype=np.float64), 0.0)


def coalesce(a: Pmf, b: Pmf) -> Pmf:
    """Pointwise sum of two partial distributions."""
    combined = a.total + a.residual + b.total + b.residual
    if combined > 1.0 + MASS_TOLERANCE:
        raise ValueError(f"coalesced mass {combined!r} exceeds 1")
    if not b.size:
        return _raw(a.values, a.masses, a.residual + b.residual)
    if not a.size:
        return _raw(b.values, b.masses, a.residual + b.residual)
    values, masses = _merge_sorted(
        np.concatenate([a.values, b.values]), np.concatenate([a.masses, b.masses])
    )
    return _raw(values, masses, a.residual + b.residual)


def convolve(a: Pmf, b: Pmf) -> Pmf:
    """Distribution of the sum of two independent variables.

    Residual mass on either side stays residual in the result, so
    ``total + residual`` multiplies exactly like the operands' totals.
    """
    ta, tb = a.total, b.total
    residual = ta * b.residual + a.residual * tb + a.residual * b.residual
    if not a.size or not b.size:
        return _raw(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64), residual)
    values = (a.values[:, None] + b.values[None, :]).ravel()
    masses = (a.masses[:, None] * b.masses[None, :]).ravel()
    values, masses = _merge_sorted(values, masses)
    light = masses < MASS_FLOOR
    if light.any():
        residual += float(masses[light].sum())
        keep = ~light
        values, masses = values[keep], masses[keep]
    return _raw(values, masses, residual)


def split(p: Pmf, t: int, boundary: Boundary = Boundary.TO_STABLE) -> tuple[Pmf, Pmf]:
    """Cut ``p`` at ``t`` into (stable, pending); the residual goes to pending."""
    side = "right" if boundary is Boundary.TO_STABLE else "left"
    cut = int(np.searchsorted(p.values, t, side=side))
    stable = _raw(p.values[:cut], p.masses[:cut], 0.0)
    pending = _raw(p.values[cut:], p.masses[cut:], p.residual)
    return stable, pending


def shift(p: Pmf, delta: int) -> Pmf:
    if p.size and p.values[0] + delta < 0:
        raise ValueError(f"shift by {delta} would move {p.values[0]} below zero")
    return _raw(p.values + delta, p.masses, p.residual)


def tail_mass(p: Pmf, t: float) -> float:
    """P(X > t), counting the residual as exceedance."""
    cut = int(np.searchsorted(p.values, t, side="right"))
    return float(p.masses[cut:].sum()) + p.residual


def tail_masses(p: Pmf, ts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`tail_mass` over many thresholds."""
    suffix = np.concatenate([np.cumsum(p.masses[::-1])[::-1], [0.0]])
    cut = np.searchsorted(p.values, np.asarray(ts), side="right")
    return suffix[cut] + p.residual
