"""Classical busy-window response-time analysis for non-preemptive fixed priority.

Arbitration convention shared with the stochastic analysis and the
simulator: a frame released exactly when the bus becomes idle does not
join the ongoing busy period, except at the start of a level-i window
where all simultaneous releases compete.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import DEFAULT_HORIZON, ConvergenceError, MessageSet, blocking_time


@dataclass(frozen=True)
class DetEntry:
    frame_id: str
    wcrt: int
    busy_window: int
    blocking: int
    instances: int
    deadline: int

    @property
    def schedulable(self) -> bool:
        return self.wcrt <= self.deadline


def released_before(t: int, period: int) -> int:
    """Number of periodic releases in [0, t), counting the one at 0 even for t == 0."""
    return max(1, -(-t // period))


def _cost(mset: MessageSet, k: int, with_errors: bool) -> int:
    f = mset.frames[k]
    if not with_errors:
        return f.C
    return f.C + mset.error_model.retry_limit(f) * (f.C + f.E)


def _fixpoint(base: int, terms: list[tuple[int, int]], horizon: int) -> int:
    t = base + sum(c for _, c in terms)
    while True:
        nxt = base + sum(released_before(t, period) * c for period, c in terms)
        if nxt == t:
            return t
        if nxt > horizon:
            raise ConvergenceError(f"busy window exceeds horizon of {horizon} bit-times")
        t = nxt


def busy_period(mset: MessageSet, i: int, with_errors: bool = False, horizon: int = DEFAULT_HORIZON) -> int:
    """Length of the level-i busy window started at the critical instant."""
    terms = [(mset.frames[k].T, _cost(mset, k, with_errors)) for k in range(i + 1)]
    return _fixpoint(blocking_time(mset, i), terms, horizon)


def det_wcrt(mset: MessageSet, i: int, with_errors: bool = False, horizon: int = DEFAULT_HORIZON) -> DetEntry:
    frame = mset.frames[i]
    B = blocking_time(mset, i)
    c_i = _cost(mset, i, with_errors)
    hp = [(mset.frames[k].T, _cost(mset, k, with_errors)) for k in range(i)]
    L = busy_period(mset, i, with_errors, horizon)
    wcrt = 0
    q = 0
    while q == 0 or q * frame.T < L:
        start = _fixpoint(B + q * c_i, hp, horizon)
        wcrt = max(wcrt, start - q * frame.T + c_i)
        q += 1
    return DetEntry(frame.id, wcrt, L, B, q, frame.D)


def det_analysis(mset: MessageSet, with_errors: bool = False) -> list[DetEntry]:
    return [det_wcrt(mset, i, with_errors) for i in range(len(mset))]
