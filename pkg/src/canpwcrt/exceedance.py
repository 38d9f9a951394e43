"""Exceedance curves F(t) = max_j P(R_j > t) and their comparison metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pmf import Pmf, tail_masses

CSV_HEADER = ["t_bits", "t_ms", "probability", "method", "frame_id"]


@dataclass(frozen=True, eq=False)
class ExceedanceCurve:
    """Right-continuous step function sampled at its breakpoints.

    ``F(t) = probability[k]`` for ``t_bits[k] <= t < t_bits[k+1]``; the
    first breakpoint is 0 and ``F`` is 1 for negative ``t``.
    """

    t_bits: np.ndarray
    probability: np.ndarray
    method: str
    frame_id: str = ""
    bus_speed: int | None = None

    def __post_init__(self):
        t = np.asarray(self.t_bits, dtype=np.int64)
        p = np.asarray(self.probability, dtype=float)
        if t.shape != p.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("curve needs matching non-empty 1-D arrays")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("curve breakpoints must be strictly increasing")
        object.__setattr__(self, "t_bits", t)
        object.__setattr__(self, "probability", p)

    def __call__(self, t) -> np.ndarray | float:
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.t_bits, t_arr, side="right") - 1
        out = np.where(idx >= 0, self.probability[np.maximum(idx, 0)], 1.0)
        return float(out) if out.ndim == 0 else out

    def at_ms(self, ms):
        return self(self._ms_to_bits(ms))

    def _ms_to_bits(self, ms):
        if self.bus_speed is None:
            raise ValueError("curve has no bus speed; cannot convert milliseconds")
        return np.asarray(ms, dtype=float) * self.bus_speed / 1000.0

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.probability) <= 1e-15))

    @classmethod
    def from_pmfs(cls, pmfs: Sequence[Pmf], method: str, frame_id: str = "", bus_speed: int | None = None):
        points = [np.zeros(1, dtype=np.int64)] + [p.values for p in pmfs]
        grid = np.unique(np.concatenate(points))
        if pmfs:
            prob = np.max(np.vstack([tail_masses(p, grid) for p in pmfs]), axis=0)
        else:
            prob = np.zeros(grid.size)
        return cls(grid, np.clip(prob, 0.0, 1.0), method, frame_id, bus_speed)

    @classmethod
    def from_samples(cls, histograms: Iterable[tuple[np.ndarray, np.ndarray]], samples: int,
                     method: str = "montecarlo", frame_id: str = "", bus_speed: int | None = None):
        """Empirical curve from per-instance (values, counts) histograms."""
        histograms = list(histograms)
        grid = np.unique(np.concatenate([np.zeros(1, dtype=np.int64)] + [v for v, _ in histograms]))
        prob = np.zeros(grid.size)
        for values, counts in histograms:
            suffix = np.concatenate([np.cumsum(counts[::-1])[::-1], [0]])
            exceed = suffix[np.searchsorted(values, grid, side="right")] / samples
            prob = np.maximum(prob, exceed)
        return cls(grid, prob, method, frame_id, bus_speed)

    def to_csv(self, path: str | Path) -> None:
        write_curves_csv([self], path)


def write_curves_csv(curves: Sequence[ExceedanceCurve], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for c in curves:
            ms = c.t_bits * 1000.0 / c.bus_speed if c.bus_speed else [""] * c.t_bits.size
            for t, t_ms, p in zip(c.t_bits, ms, c.probability):
                writer.writerow([int(t), repr(float(t_ms)) if c.bus_speed else "", repr(float(p)), c.method, c.frame_id])


def read_curves_csv(path: str | Path, bus_speed: int | None = None) -> list[ExceedanceCurve]:
    """Load every (method, frame_id) curve stored in a CSV file."""
    rows: dict[tuple[str, str], list[tuple[int, float, str]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            key = (row["method"], row["frame_id"])
            rows.setdefault(key, []).append((int(row["t_bits"]), float(row["probability"]), row["t_ms"]))
    curves = []
    for (method, frame_id), pts in rows.items():
        pts.sort()
        speed = bus_speed
        if speed is None:
            # Recover bus speed from any non-zero (t_bits, t_ms) pair.
            for t, _, t_ms in pts:
                if t > 0 and t_ms:
                    speed = int(round(t * 1000.0 / float(t_ms)))
                    break
        curves.append(ExceedanceCurve(np.array([p[0] for p in pts]), np.array([p[1] for p in pts]),
                                      method, frame_id, speed))
    return curves


def _grid(a: ExceedanceCurve, points: int, t_range: tuple[float, float], unit: str) -> tuple[np.ndarray, np.ndarray]:
    if points < 2:
        raise ValueError("need at least two evaluation points")
    grid = np.linspace(t_range[0], t_range[1], points)
    return grid, (a.at_ms(grid) if unit == "ms" else a(grid))


def _check_units(a: ExceedanceCurve, b: ExceedanceCurve, unit: str) -> None:
    if unit == "ms" and (a.bus_speed is None or b.bus_speed is None or a.bus_speed != b.bus_speed):
        raise ValueError(f"incompatible units: bus speeds {a.bus_speed} and {b.bus_speed}")


def mse(a: ExceedanceCurve, b: ExceedanceCurve, points: int = 1000,
        t_range: tuple[float, float] = (0.0, 60.0), unit: str = "ms") -> float:
    """Mean squared difference on ``points`` evenly spaced values of ``t``."""
    _check_units(a, b, unit)
    _, fa = _grid(a, points, t_range, unit)
    _, fb = _grid(b, points, t_range, unit)
    return float(np.mean((fa - fb) ** 2))


def max_abs_diff(a: ExceedanceCurve, b: ExceedanceCurve, points: int = 1000,
                 t_range: tuple[float, float] = (0.0, 60.0), unit: str = "ms") -> float:
    _check_units(a, b, unit)
    _, fa = _grid(a, points, t_range, unit)
    _, fb = _grid(b, points, t_range, unit)
    return float(np.max(np.abs(fa - fb)))
