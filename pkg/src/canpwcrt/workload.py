"""Random CAN message sets at a target utilization (UUniFast).

Per-frame utilizations come from UUniFast.  Each frame then draws a
period log-uniformly from the period range and takes
``C = round(U_i * T)`` clamped to the C range; if the clamp moves the
frame's utilization more than 5 % (relative) off its target the period
is redrawn, and after too many failures the whole vector is redrawn.
Set ``s`` of a ``GenSpec`` uses ``SeedSequence(seed, spawn_key=(s,))``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import ErrorModel, Frame, MessageSet, ValidationError

UTILIZATION_TOLERANCE = 0.05


class InfeasibleSpec(ValidationError):
    """The generator could not hit the utilization target within its retry budget."""


@dataclass(frozen=True)
class GenSpec:
    n_messages: int = 10
    utilization: float = 0.5
    n_sets: int = 50
    seed: int = 0
    period_ms: tuple[float, float] = (10.0, 1000.0)
    c_bits: tuple[int, int] = (55, 135)
    jitter_frac: tuple[float, float] = (0.0, 0.1)
    deadline_frac: float = 1.0
    lam: float = 1e-5
    bus_speed: int = 125_000
    E: int = 13
    retry_residual: float = 1e-12
    period_tries: int = 200
    vector_tries: int = 10_000

    def __post_init__(self):
        if self.n_messages < 1 or self.n_sets < 1:
            raise ValidationError("n_messages and n_sets must be >= 1")
        if not 0 < self.utilization < 1:
            raise ValidationError("utilization must lie in (0, 1)")
        lo, hi = self.period_ms
        if not 0 < lo <= hi:
            raise ValidationError("period range must be positive and non-empty")
        if not 1 <= self.c_bits[0] <= self.c_bits[1]:
            raise ValidationError("C range must be non-empty and >= 1 bit")
        if not 0 <= self.jitter_frac[0] <= self.jitter_frac[1] <= 1:
            raise ValidationError("jitter fraction range must lie within [0, 1]")
        if not 0 < self.deadline_frac <= 1:
            raise ValidationError("deadline fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["period_ms"] = list(self.period_ms)
        d["c_bits"] = list(self.c_bits)
        d["jitter_frac"] = list(self.jitter_frac)
        return d


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def uunifast(n: int, U: float, seed=None) -> list[float]:
    """n positive utilizations summing to U, uniformly distributed on the simplex."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < U < 1:
        raise ValueError("U must lie in (0, 1)")
    rng = _rng(seed)
    out = []
    remaining = U
    for k in range(1, n):
        nxt = remaining * rng.random() ** (1.0 / (n - k))
        out.append(remaining - nxt)
        remaining = nxt
    out.append(remaining)
    return out


def _frame_params(u: float, spec: GenSpec, rng: np.random.Generator) -> tuple[int, int] | None:
    lo = math.log(spec.period_ms[0] * spec.bus_speed / 1000)
    hi = math.log(spec.period_ms[1] * spec.bus_speed / 1000)
    for _ in range(spec.period_tries):
        T = max(1, int(round(math.exp(rng.uniform(lo, hi)))))
        C = min(max(int(round(u * T)), spec.c_bits[0]), spec.c_bits[1])
        if C <= T and abs(C / T - u) <= UTILIZATION_TOLERANCE * u:
            return C, T
    return None


def generate_set(spec: GenSpec, index: int = 0) -> MessageSet:
    """Set number ``index`` of ``spec``; identical for identical arguments."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed, spawn_key=(index,))))
    for _ in range(spec.vector_tries):
        params = []
        for u in uunifast(spec.n_messages, spec.utilization, rng):
            p = _frame_params(u, spec, rng)
            if p is None:
                break
            params.append(p)
        else:
            break
    else:
        raise InfeasibleSpec(
            f"no message set within {UTILIZATION_TOLERANCE:.0%} of U={spec.utilization} "
            f"after {spec.vector_tries} attempts; widen the period or C range"
        )
    jlo, jhi = spec.jitter_frac
    order = sorted(range(len(params)), key=lambda k: params[k][1])
    frames = []
    for prio, k in enumerate(order):
        C, T = params[k]
        J = int(math.floor(rng.uniform(jlo, jhi) * T)) if jhi > 0 else 0
        D = max(C, int(math.floor(spec.deadline_frac * T)))
        frames.append(Frame(f"m{k + 1}", prio, C, T, D, spec.E, J))
    model = ErrorModel(spec.lam, residual_threshold=spec.retry_residual)
    return MessageSet(tuple(frames), spec.bus_speed, model, name=f"gen-s{spec.seed}-{index:03d}",
                      meta={"spec": spec.to_dict(), "index": index})


def generate_sets(spec: GenSpec) -> list[MessageSet]:
    return [generate_set(spec, s) for s in range(spec.n_sets)]
