"""CAN frame model, Poisson error model and transmission-time PMFs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .pmf import Pmf, _raw

RETRY_LIMIT_CAP = 64
# Iterations over time give up beyond this many bit-times.
DEFAULT_HORIZON = 2**20 * 16


class ValidationError(ValueError):
    """Raised for malformed or inconsistent message-set input."""


class ConvergenceError(RuntimeError):
    """An iteration ran past its horizon (typically utilization >= 1)."""


@dataclass(frozen=True)
class Frame:
    """One CAN message stream; all times in bit-times."""

    id: str
    priority: int
    C: int
    T: int
    D: int
    E: int = 0
    J: int = 0
    # Explicit P(n retries) for n = 0..k, overriding the Poisson model.
    retry_masses: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.priority < 0:
            raise ValidationError(f"frame {self.id}: negative priority")
        if self.C < 1:
            raise ValidationError(f"frame {self.id}: C must be >= 1")
        if self.T < 1:
            raise ValidationError(f"frame {self.id}: T must be >= 1")
        if self.D > self.T:
            raise ValidationError(f"frame {self.id}: constrained deadline violated (D={self.D} > T={self.T})")
        if self.D < 1:
            raise ValidationError(f"frame {self.id}: D must be >= 1")
        if self.E < 0 or self.J < 0:
            raise ValidationError(f"frame {self.id}: E and J must be non-negative")
        if self.retry_masses is not None:
            masses = tuple(float(m) for m in self.retry_masses)
            if not masses or any(m < 0 for m in masses) or sum(masses) > 1 + 1e-9:
                raise ValidationError(f"frame {self.id}: retry_masses must be non-negative and sum to <= 1")
            object.__setattr__(self, "retry_masses", masses)


@dataclass(frozen=True)
class ErrorModel:
    """Poisson bit-error channel with either a fixed retry limit or a residual target."""

    lam: float
    k: int | None = None
    residual_threshold: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("error rate lambda must be >= 0")
        if (self.k is None) == (self.residual_threshold is None):
            raise ValidationError("exactly one of k and residual_threshold must be given")
        if self.k is not None and self.k < 0:
            raise ValidationError("retry limit k must be >= 0")
        if self.residual_threshold is not None and not 0 < self.residual_threshold < 1:
            raise ValidationError("residual_threshold must lie in (0, 1)")

    def retry_limit(self, frame: Frame) -> int:
        if frame.retry_masses is not None:
            return len(frame.retry_masses) - 1
        if self.k is not None:
            return self.k
        return choose_retry_limit(self.lam, frame.C, frame.E, self.residual_threshold)


@dataclass(frozen=True)
class MessageSet:
    frames: tuple[Frame, ...]
    bus_speed: int
    error_model: ErrorModel
    name: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        frames = tuple(sorted(self.frames, key=lambda f: f.priority))
        prios = [f.priority for f in frames]
        if len(set(prios)) != len(prios):
            dup = sorted({p for p in prios if prios.count(p) > 1})
            raise ValidationError(f"duplicate priority {dup}")
        ids = [f.id for f in frames]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate frame id")
        if self.bus_speed <= 0:
            raise ValidationError("bus speed must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def index_of(self, frame_id: str) -> int:
        for idx, f in enumerate(self.frames):
            if f.id == frame_id:
                return idx
        raise KeyError(f"no frame with id {frame_id!r}")

    @property
    def lowest_priority(self) -> int:
        return len(self.frames) - 1

    def utilization(self, upto: int | None = None) -> float:
        frames = self.frames if upto is None else self.frames[: upto + 1]
        return sum(f.C / f.T for f in frames)

    def bits_to_ms(self, bits):
        return np.asarray(bits, dtype=float) * 1000.0 / self.bus_speed

    def ms_to_bits(self, ms):
        return np.asarray(ms, dtype=float) * self.bus_speed / 1000.0

    def with_lambda(self, lam: float) -> MessageSet:
        """Switch to a Poisson channel with rate ``lam``; explicit retry masses are dropped."""
        frames = tuple(replace(f, retry_masses=None) for f in self.frames)
        return replace(self, frames=frames, error_model=replace(self.error_model, lam=lam))


def poisson_ok(lam: float, delta: float) -> float:
    """Probability of no bit error during ``delta`` bit-times."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return math.exp(-lam * delta)


def poisson_errors(lam: float, delta: float) -> float:
    return -math.expm1(-lam * delta)


def retry_probability(n: int, lam: float, C: int, E: int) -> float:
    """Probability that a frame needs exactly ``n`` retransmissions."""
    if n < 0:
        raise ValueError("retry count must be >= 0")
    if n == 0:
        return poisson_ok(lam, C)
    return poisson_errors(lam, C) * poisson_errors(lam, C + E) ** (n - 1) * poisson_ok(lam, C + E)


def retry_residual(k: int, lam: float, C: int, E: int) -> float:
    """Probability of more than ``k`` retries, computed without cancellation."""
    return poisson_errors(lam, C) * poisson_errors(lam, C + E) ** k


def choose_retry_limit(lam: float, C: int, E: int, residual_threshold: float) -> int:
    if not 0 < residual_threshold < 1:
        raise ValueError("residual_threshold must lie in (0, 1)")
    for k in range(RETRY_LIMIT_CAP + 1):
        if retry_residual(k, lam, C, E) < residual_threshold:
            return k
    raise ValidationError(
        f"error rate {lam} too high: no retry limit <= {RETRY_LIMIT_CAP} reaches residual {residual_threshold}"
    )


def retry_masses(frame: Frame, model: ErrorModel) -> tuple[np.ndarray, float]:
    """Masses of n = 0..k retries and the truncated remainder."""
    if frame.retry_masses is not None:
        masses = np.array(frame.retry_masses, dtype=float)
        return masses, max(0.0, 1.0 - float(masses.sum()))
    k = model.retry_limit(frame)
    masses = np.array([retry_probability(n, model.lam, frame.C, frame.E) for n in range(k + 1)])
    return masses, retry_residual(k, model.lam, frame.C, frame.E)


def _retry_pmf(frame: Frame, model: ErrorModel, offset: int, fold: bool) -> Pmf:
    masses, residual = retry_masses(frame, model)
    values = offset + np.arange(masses.size, dtype=np.int64) * (frame.C + frame.E)
    keep = masses > 0
    pmf = _raw(values[keep], masses[keep], residual)
    return pmf.fold_residual() if fold else pmf


def transmission_time_pmf(frame: Frame, model: ErrorModel, fold: bool = False) -> Pmf:
    """Variable transmission time: C + n(C+E) with probability P_n, n <= k."""
    return _retry_pmf(frame, model, frame.C, fold)


def retrans_pmf(frame: Frame, model: ErrorModel, fold: bool = False) -> Pmf:
    """Time spent on failed attempts only: n(C+E)."""
    return _retry_pmf(frame, model, 0, fold)


def blocking_time(mset: MessageSet, i: int, include_self: bool = False) -> int:
    """Longest lower-priority transmission including its error overhead.

    ``include_self`` selects the variant that also counts frame ``i``.
    """
    start = i if include_self else i + 1
    return max((f.C + f.E for f in mset.frames[start:]), default=0)


# --- file format -----------------------------------------------------------

def _to_bits(value: Any, bus_speed: int, what: str) -> int:
    bits = Fraction(str(value)) * bus_speed / 1000
    if bits.denominator != 1:
        raise ValidationError(f"{what}: {value} ms is not an integral number of bit-times at {bus_speed} bit/s")
    return int(bits)


def _field_bits(raw: Mapping[str, Any], key: str, bus_speed: int, fid: str, default: int | None = None) -> int:
    if f"{key}_bits" in raw:
        value = raw[f"{key}_bits"]
        if int(value) != value:
            raise ValidationError(f"frame {fid}: {key}_bits must be an integer")
        return int(value)
    if f"{key}_ms" in raw:
        return _to_bits(raw[f"{key}_ms"], bus_speed, f"frame {fid} {key}")
    if default is not None:
        return default
    raise ValidationError(f"frame {fid}: missing {key}_bits or {key}_ms")


def validate_and_convert(raw: Mapping[str, Any], name: str = "") -> MessageSet:
    """Build a :class:`MessageSet` from the JSON-style mapping."""
    try:
        bus_speed = int(raw["bus_speed_bps"])
        lam = float(raw.get("lambda_per_bit", 0.0))
        frames_raw = raw["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed message set: {exc}") from None
    if "retry_limit" in raw:
        model = ErrorModel(lam, k=int(raw["retry_limit"]))
    else:
        model = ErrorModel(lam, residual_threshold=float(raw.get("retry_residual", 1e-12)))
    frames = []
    for idx, fr in enumerate(frames_raw):
        fid = str(fr.get("id", f"f{idx}"))
        if "priority" not in fr:
            raise ValidationError(f"frame {fid}: missing priority")
        masses = fr.get("retry_masses")
        frames.append(
            Frame(
                id=fid,
                priority=int(fr["priority"]),
                C=_field_bits(fr, "C", bus_speed, fid),
                T=_field_bits(fr, "T", bus_speed, fid),
                D=_field_bits(fr, "D", bus_speed, fid),
                E=_field_bits(fr, "E", bus_speed, fid, default=0),
                J=_field_bits(fr, "J", bus_speed, fid, default=0),
                retry_masses=tuple(masses) if masses is not None else None,
            )
        )
    return MessageSet(tuple(frames), bus_speed, model, name=name or str(raw.get("name", "")))


def to_json_dict(mset: MessageSet) -> dict[str, Any]:
    """Serialise with all times in bits, so a reload is exact."""
    out: dict[str, Any] = {
        "name": mset.name,
        "bus_speed_bps": mset.bus_speed,
        "lambda_per_bit": mset.error_model.lam,
    }
    if mset.error_model.k is not None:
        out["retry_limit"] = mset.error_model.k
    else:
        out["retry_residual"] = mset.error_model.residual_threshold
    frames = []
    for f in mset.frames:
        entry: dict[str, Any] = {
            "id": f.id,
            "priority": f.priority,
            "C_bits": f.C,
            "T_bits": f.T,
            "D_bits": f.D,
            "E_bits": f.E,
            "J_bits": f.J,
        }
        if f.retry_masses is not None:
            entry["retry_masses"] = list(f.retry_masses)
        frames.append(entry)
    out["frames"] = frames
    return out


def load_message_set(source: str | Path) -> MessageSet:
    """Load a named dataset (``sae``, ``example3``) or a JSON file."""
    from .datasets import DATASETS

    if str(source) in DATASETS:
        return validate_and_convert(DATASETS[str(source)], name=str(source))
    path = Path(source)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"no dataset or file named {source!r}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return validate_and_convert(raw, name=raw.get("name") or path.stem)


def save_message_set(mset: MessageSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(mset), indent=2) + "\n")
