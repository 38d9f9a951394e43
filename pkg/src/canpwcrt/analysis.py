"""Probabilistic worst-case response times of CAN frames.

The improved analysis builds the level-i busy window once, as a sequence
of PMFs indexed by release times, and derives every instance's backlog
from it.  Only the still-open part of a window (the *pending* part) is
convolved with a newly released instance; the closed part is kept.

``legacy_pwcrt`` is a reconstruction of the earlier convolution
approach: each instance is rebuilt from the critical instant, the
fixed-point iteration restarts from t = 0 whenever another release is
found to fall inside the window, and a frame released exactly when the
bus becomes idle is assumed to join arbitration.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .exceedance import ExceedanceCurve
from .model import (
    DEFAULT_HORIZON,
    ConvergenceError,
    MessageSet,
    blocking_time,
    retrans_pmf,
    transmission_time_pmf,
)
from .pmf import Boundary, Pmf, coalesce, convolve, point_mass, shift, split

DEFAULT_EPSILON = 1e-12
SAE_EPSILON = 2.7e-15


@dataclass(frozen=True, order=True)
class InstanceRelease:
    release: int
    priority: int
    frame: int
    ordinal: int


def release_stream(mset: MessageSet, indices: Iterable[int], start: int = 0) -> Iterator[InstanceRelease]:
    """Periodic releases of the given frames at or after ``start``.

    Ordered by (release time, priority); ordinals are 1-based from the
    critical instant.
    """
    heap = []
    for k in indices:
        f = mset.frames[k]
        n = -(-start // f.T)
        heap.append((n * f.T, f.priority, k, n + 1))
    heapq.heapify(heap)
    while heap:
        r, p, k, j = heap[0]
        yield InstanceRelease(r, p, k, j)
        heapq.heapreplace(heap, (r + mset.frames[k].T, p, k, j + 1))


def grouped_releases(stream: Iterator[InstanceRelease]) -> Iterator[tuple[int, list[InstanceRelease]]]:
    for t, group in itertools.groupby(stream, key=lambda inst: inst.release):
        yield t, list(group)


def _check_epsilon(epsilon: float) -> None:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")


def _check_load(mset: MessageSet, i: int) -> None:
    # Even error-free, the level-i window would never close.
    u = mset.utilization(i)
    if u >= 1:
        raise ConvergenceError(f"level-{mset.frames[i].id} utilization {u:.4f} >= 1; the busy window never ends")


@dataclass
class BusyWindowSequence:
    frame_index: int
    blocking: int
    releases: list[int] = field(default_factory=list)
    windows: list[Pmf] = field(default_factory=list)
    stop_time: int = 0
    stop_reason: str = ""
    truncated_mass: float = 0.0
    convolutions: int = 0

    def at(self, r: int) -> Pmf:
        """Window state before any instance released at ``r`` is added."""
        idx = bisect.bisect_left(self.releases, r)
        if idx == len(self.releases) or self.releases[idx] != r:
            raise ValueError(f"release time {r} is not recorded in the busy-window sequence")
        return self.windows[idx]


@dataclass
class InstanceResult:
    ordinal: int
    release: int
    backlog: Pmf
    queuing: Pmf
    response: Pmf
    # Response with the mass left open by the stop rule moved to the residual.
    bound: Pmf | None = None

    @property
    def open_mass(self) -> float:
        return self.bound.residual - self.response.residual if self.bound is not None else 0.0


@dataclass
class FrameAnalysis:
    frame_id: str
    frame_index: int
    method: str
    epsilon: float
    instances: list[InstanceResult]
    curve: ExceedanceCurve
    deadline: int
    sequence: BusyWindowSequence | None = None
    convolutions: int = 0

    @property
    def deadline_miss(self) -> float:
        return float(self.curve(self.deadline))

    @property
    def residual(self) -> float:
        return max((inst.response.residual for inst in self.instances), default=0.0)

    @property
    def open_mass(self) -> float:
        """Largest per-instance mass left open by the queuing stop rule."""
        return max((inst.open_mass for inst in self.instances), default=0.0)

    @property
    def min_response(self) -> int:
        """Largest error-free response over the analysed instances."""
        return max(inst.response.min_value for inst in self.instances)


class _Costs:
    """Transmission and retransmission PMFs, computed once per frame."""

    def __init__(self, mset: MessageSet):
        self._mset = mset
        self._tx: dict[int, Pmf] = {}
        self._re: dict[int, Pmf] = {}

    def tx(self, k: int) -> Pmf:
        if k not in self._tx:
            self._tx[k] = transmission_time_pmf(self._mset.frames[k], self._mset.error_model)
        return self._tx[k]

    def retrans(self, k: int) -> Pmf:
        if k not in self._re:
            self._re[k] = retrans_pmf(self._mset.frames[k], self._mset.error_model)
        return self._re[k]


def _boundary(offset: int, legacy: bool) -> Boundary:
    # Simultaneous releases at the window origin always compete.
    return Boundary.TO_PENDING if legacy or offset == 0 else Boundary.TO_STABLE


def busy_window_sequence(mset: MessageSet, i: int, epsilon: float = DEFAULT_EPSILON,
                         horizon: int = DEFAULT_HORIZON, _costs: _Costs | None = None) -> BusyWindowSequence:
    """Stochastic level-i busy window from the critical instant."""
    _check_epsilon(epsilon)
    _check_load(mset, i)
    costs = _costs or _Costs(mset)
    B = blocking_time(mset, i)
    seq = BusyWindowSequence(frame_index=i, blocking=B)
    w = point_mass(B)
    for t, group in grouped_releases(release_stream(mset, range(i + 1))):
        if t > horizon:
            raise ConvergenceError(
                f"busy window of {mset.frames[i].id} still open beyond {horizon} bit-times"
            )
        seq.releases.append(t)
        seq.windows.append(w)
        stable, pending = split(w, t, _boundary(t, False))
        if pending.total < epsilon:
            seq.stop_time = t
            seq.stop_reason = "epsilon"
            seq.truncated_mass = pending.total
            return seq
        for inst in group:
            pending = convolve(pending, costs.tx(inst.frame))
            seq.convolutions += 1
        w = coalesce(stable, pending)
    raise AssertionError("release stream is infinite")


def backlog(seq: BusyWindowSequence, r: int) -> Pmf:
    """Unfinished level-i work at ``r``: closed windows collapse onto 0."""
    w = seq.at(r)
    stable, pending = split(w, r, Boundary.TO_STABLE)
    done = stable.total
    rest = shift(pending, -r)
    if done <= 0.0:
        return rest
    return coalesce(point_mass(0, min(done, 1.0)), rest)


def _queuing(mset: MessageSet, i: int, release: int, backlog_pmf: Pmf, epsilon: float,
             horizon: int, costs: _Costs) -> tuple[Pmf, Pmf | None]:
    """Queuing delay and the part of it left open when the iteration stopped."""
    S = convolve(backlog_pmf, costs.retrans(i))
    if i == 0:
        return S, None
    for t, group in grouped_releases(release_stream(mset, range(i), start=release)):
        d = t - release
        if d > horizon:
            raise ConvergenceError(f"queuing delay of {mset.frames[i].id} exceeds {horizon} bit-times")
        stable, pending = split(S, d, _boundary(d, False))
        if pending.total < epsilon:
            return S, pending
        for inst in group:
            pending = convolve(pending, costs.tx(inst.frame))
        S = coalesce(stable, pending)
    raise AssertionError("release stream is infinite")


def queuing_delay(mset: MessageSet, i: int, release: int, backlog_pmf: Pmf, epsilon: float = DEFAULT_EPSILON,
                  horizon: int = DEFAULT_HORIZON, _costs: _Costs | None = None) -> Pmf:
    """Time from ``release`` until the instance starts its final, error-free attempt."""
    _check_epsilon(epsilon)
    return _queuing(mset, i, release, backlog_pmf, epsilon, horizon, _costs or _Costs(mset))[0]


def _open_tail(response: Pmf, open_part: Pmf | None) -> Pmf:
    # Mass still pending at the stop never saw later interference, so the
    # curve counts it as exceedance instead of trusting its position.
    if open_part is None or open_part.size == 0:
        return response
    cut = len(response.values) - open_part.size
    rest = float(response.masses[cut:].sum())
    return Pmf(response.values[:cut], response.masses[:cut], response.residual + rest)


def response_pmf(queuing: Pmf, frame) -> Pmf:
    return shift(queuing, frame.C)


def analyze_frame(mset: MessageSet, i: int, epsilon: float = DEFAULT_EPSILON,
                  horizon: int = DEFAULT_HORIZON, conservative_stop: bool = False) -> FrameAnalysis:
    """Per-instance response PMFs and the exceedance curve of frame ``i``.

    Every instance released up to and including the window's stop time
    is analysed.  With ``conservative_stop`` the curve treats the mass
    left open by the queuing stop rule as exceedance.
    """
    frame = mset.frames[i]
    costs = _Costs(mset)
    seq = busy_window_sequence(mset, i, epsilon, horizon, costs)
    results = []
    for r in range(0, seq.stop_time + 1, frame.T):
        b = backlog(seq, r)
        s, open_part = _queuing(mset, i, r, b, epsilon, horizon, costs)
        R = response_pmf(s, frame)
        results.append(InstanceResult(r // frame.T + 1, r, b, s, R, _open_tail(R, open_part)))
    pmfs = [x.bound if conservative_stop else x.response for x in results]
    curve = ExceedanceCurve.from_pmfs(pmfs, "improved", frame.id, mset.bus_speed)
    return FrameAnalysis(frame.id, i, "improved", epsilon, results, curve, frame.D, seq, seq.convolutions)


# --- legacy baseline ---------------------------------------------------------

class _LegacyRebuild:
    """Re-runs the whole convolution chain from t = 0 on every step."""

    def __init__(self, mset: MessageSet, i: int, costs: _Costs):
        self.mset = mset
        self.i = i
        self.costs = costs
        self.B = blocking_time(mset, i)
        self.convolutions = 0

    def _advance(self, p: Pmf, t: int, group: Sequence[InstanceRelease]) -> Pmf:
        stable, pending = split(p, t, Boundary.TO_PENDING)
        for inst in group:
            pending = convolve(pending, self.costs.tx(inst.frame))
            self.convolutions += 1
        return coalesce(stable, pending)

    def window(self, groups: Sequence[tuple[int, list[InstanceRelease]]]) -> Pmf:
        w = point_mass(self.B)
        for t, group in groups:
            w = self._advance(w, t, group)
        return w

    def queuing(self, prefix, r: int, hp_groups) -> tuple[Pmf, Pmf]:
        w = self.window(prefix)
        stable, pending = split(w, r, Boundary.TO_PENDING)
        b = shift(pending, -r)
        if stable.total > 0:
            b = coalesce(point_mass(0, min(stable.total, 1.0)), b)
        S = convolve(b, self.costs.retrans(self.i))
        self.convolutions += 1
        for t, group in hp_groups:
            S = self._advance(S, t - r, group)
        return b, S


def legacy_pwcrt(mset: MessageSet, i: int, epsilon: float = DEFAULT_EPSILON,
                 horizon: int = DEFAULT_HORIZON, conservative_stop: bool = False) -> FrameAnalysis:
    _check_epsilon(epsilon)
    _check_load(mset, i)
    frame = mset.frames[i]
    costs = _Costs(mset)
    rebuild = _LegacyRebuild(mset, i, costs)
    window_groups = grouped_releases(release_stream(mset, range(i + 1)))
    known: list[tuple[int, list[InstanceRelease]]] = []

    def group_at(n: int):
        while len(known) <= n:
            known.append(next(window_groups))
        return known[n]

    results: list[InstanceResult] = []
    r = 0
    while True:
        # Rebuild the window prefix [0, r) one release at a time.
        n = 0
        closed = False
        while group_at(n)[0] < r:
            t_next = group_at(n)[0]
            if t_next > horizon:
                raise ConvergenceError(f"legacy window of {frame.id} exceeds {horizon} bit-times")
            w = rebuild.window(known[:n])
            if t_next > 0 and split(w, t_next, Boundary.TO_PENDING)[1].total < epsilon:
                closed = True
                break
            n += 1
        if closed:
            break
        prefix = known[:n]
        last = r > 0 and split(rebuild.window(prefix), r, Boundary.TO_PENDING)[1].total < epsilon

        hp_iter = grouped_releases(release_stream(mset, range(i), start=r))
        hp_groups: list[tuple[int, list[InstanceRelease]]] = []
        open_part = None
        while True:
            b, S = rebuild.queuing(prefix, r, hp_groups)
            if i == 0:
                break
            t_next, group = next(hp_iter)
            if t_next - r > horizon:
                raise ConvergenceError(f"legacy queuing delay of {frame.id} exceeds {horizon} bit-times")
            open_part = split(S, t_next - r, Boundary.TO_PENDING)[1]
            if open_part.total < epsilon:
                break
            hp_groups.append((t_next, group))
        R = response_pmf(S, frame)
        results.append(InstanceResult(r // frame.T + 1, r, b, S, R, _open_tail(R, open_part)))
        if last:
            break
        r += frame.T
    pmfs = [x.bound if conservative_stop else x.response for x in results]
    curve = ExceedanceCurve.from_pmfs(pmfs, "legacy", frame.id, mset.bus_speed)
    return FrameAnalysis(frame.id, i, "legacy", epsilon, results, curve, frame.D, None, rebuild.convolutions)


def analyze(mset: MessageSet, i: int, method: str = "improved", epsilon: float = DEFAULT_EPSILON,
            horizon: int = DEFAULT_HORIZON, conservative_stop: bool = False) -> FrameAnalysis:
    if method == "improved":
        return analyze_frame(mset, i, epsilon, horizon, conservative_stop)
    if method == "legacy":
        return legacy_pwcrt(mset, i, epsilon, horizon, conservative_stop)
    raise ValueError(f"unknown method {method!r}")
