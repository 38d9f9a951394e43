"""Monte Carlo simulation of the critical instant with random retransmissions.

Each sample draws a retry count for every frame instance from the same
per-frame distribution the analysis uses (capped at the retry limit) and
plays the resulting bus timeline: non-preemptive priority arbitration
whenever the bus becomes idle, and a failed attempt (C + E bit-times)
sends the instance back into arbitration.

Arbitration convention: an instance released exactly when the bus
becomes idle misses that arbitration round, except at the start of the
level-i window where simultaneous releases compete.  Instances of the
target frame released after the first busy period has ended are played
from a fresh start (empty bus, higher-priority releases from their own
release time on), which is how the analysis treats them.

Samples are processed in chunks; chunk ``c`` draws from
``PCG64(SeedSequence(seed, spawn_key=(c,)))``, so results do not depend
on how chunks are distributed over worker processes.
"""

from __future__ import annotations

import heapq
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .deterministic import busy_period
from .exceedance import ExceedanceCurve
from .model import DEFAULT_HORIZON, ConvergenceError, MessageSet, blocking_time, retry_masses

RNG_NAME = "numpy.random.PCG64"
CHUNK_SIZE = 50_000
HORIZON_FACTOR = 4
REPORT_VERSION = 1


class SimulationOverflow(ConvergenceError):
    """A simulated busy period did not end within the time cap."""


@dataclass(frozen=True)
class SimConfig:
    mset: MessageSet
    frame: int
    samples: int
    seed: int = 0
    blocking: str = "worst_case_deterministic"
    jitter: str = "off"
    horizon_factor: int = HORIZON_FACTOR
    max_time: int = DEFAULT_HORIZON
    chunk_size: int = CHUNK_SIZE

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0 <= self.frame < len(self.mset):
            raise ValueError(f"frame index {self.frame} out of range")
        if self.blocking not in ("worst_case_deterministic", "sampled"):
            raise ValueError(f"unknown blocking mode {self.blocking!r}")
        if self.jitter not in ("off", "uniform"):
            raise ValueError(f"unknown jitter mode {self.jitter!r}")
        if self.chunk_size < 1 or self.horizon_factor < 1:
            raise ValueError("chunk_size and horizon_factor must be >= 1")


@dataclass
class SimReport:
    frame_id: str
    samples: int
    seed: int
    bus_speed: int
    horizon: int
    releases: list[int]
    # One (values, counts) histogram per recorded instance of the target frame.
    histograms: list[tuple[np.ndarray, np.ndarray]]
    max_histogram: tuple[np.ndarray, np.ndarray]
    blocking: str = "worst_case_deterministic"
    jitter: str = "off"
    chunk_size: int = CHUNK_SIZE
    rng: str = RNG_NAME
    numpy_version: str = field(default_factory=lambda: np.__version__)
    extended_rows: int = 0

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "frame_id": self.frame_id,
            "samples": self.samples,
            "seed": self.seed,
            "bus_speed_bps": self.bus_speed,
            "horizon_bits": self.horizon,
            "blocking": self.blocking,
            "jitter": self.jitter,
            "chunk_size": self.chunk_size,
            "rng": self.rng,
            "numpy_version": self.numpy_version,
            "extended_rows": self.extended_rows,
            "instances": [
                {"ordinal": n + 1, "release_bits": r, "values": v.tolist(), "counts": c.tolist()}
                for n, (r, (v, c)) in enumerate(zip(self.releases, self.histograms))
            ],
            "max_response": {
                "values": self.max_histogram[0].tolist(),
                "counts": self.max_histogram[1].tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimReport:
        hist = [(np.array(x["values"], dtype=np.int64), np.array(x["counts"], dtype=np.int64))
                for x in d["instances"]]
        mh = d["max_response"]
        return cls(
            frame_id=d["frame_id"],
            samples=int(d["samples"]),
            seed=int(d["seed"]),
            bus_speed=int(d["bus_speed_bps"]),
            horizon=int(d["horizon_bits"]),
            releases=[int(x["release_bits"]) for x in d["instances"]],
            histograms=hist,
            max_histogram=(np.array(mh["values"], dtype=np.int64), np.array(mh["counts"], dtype=np.int64)),
            blocking=d["blocking"],
            jitter=d["jitter"],
            chunk_size=int(d["chunk_size"]),
            rng=d["rng"],
            numpy_version=d["numpy_version"],
            extended_rows=int(d.get("extended_rows", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> SimReport:
        return cls.from_dict(json.loads(Path(path).read_text()))


def empirical_exceedance(report: SimReport) -> ExceedanceCurve:
    return ExceedanceCurve.from_samples(report.histograms, report.samples, "montecarlo",
                                        report.frame_id, report.bus_speed)


# --- plan ------------------------------------------------------------------

@dataclass
class _Plan:
    prio: list[int]
    C: list[int]
    E: list[int]
    T: list[int]
    J: list[int]
    cdf: list[np.ndarray]
    target: int
    horizon: int
    n_cols: list[int]
    offsets: list[int]
    blockers: list[int]
    B: int
    max_time: int
    recorded: int

    @property
    def width(self) -> int:
        return self.offsets[-1] + self.n_cols[-1]


def _plan(cfg: SimConfig) -> _Plan:
    mset, i = cfg.mset, cfg.frame
    frames = mset.frames[: i + 1]
    L0 = busy_period(mset, i, horizon=cfg.max_time)
    H = cfg.horizon_factor * L0
    cdf = []
    for f in frames:
        masses, _ = retry_masses(f, mset.error_model)
        # Thresholds between consecutive retry counts; the truncated tail maps to k.
        cdf.append(np.cumsum(masses)[:-1])
    n_cols = [-(-H // f.T) for f in frames]
    offsets = list(np.cumsum([0] + n_cols[:-1]).astype(int))
    return _Plan(
        prio=[f.priority for f in frames],
        C=[f.C for f in frames],
        E=[f.E for f in frames],
        T=[f.T for f in frames],
        J=[f.J if cfg.jitter == "uniform" else 0 for f in frames],
        cdf=cdf,
        target=i,
        horizon=H,
        n_cols=n_cols,
        offsets=offsets,
        blockers=[f.C + f.E for f in mset.frames[i + 1:]],
        B=blocking_time(mset, i),
        max_time=cfg.max_time,
        recorded=n_cols[-1],
    )


class _NeedsExtension(Exception):
    pass


class _Draws:
    """Retry counts and jitter offsets of one sample, indexed by (frame, ordinal)."""

    def __init__(self, plan: _Plan, retries: np.ndarray, jitter: np.ndarray | None,
                 ext: Callable[[], np.random.Generator] | None):
        self.plan = plan
        self.retries = retries
        self.jitter = jitter
        self._ext_factory = ext
        self._ext_rng: np.random.Generator | None = None
        self._ext: dict[tuple[int, int], tuple[int, int]] = {}

    def _extended(self, k: int, n: int) -> tuple[int, int]:
        if self._ext_factory is None:
            raise _NeedsExtension
        key = (k, n)
        if key not in self._ext:
            if self._ext_rng is None:
                self._ext_rng = self._ext_factory()
            u, v = self._ext_rng.random(2)
            r = int(np.searchsorted(self.plan.cdf[k], u, side="right"))
            j = int(v * (self.plan.J[k] + 1)) if self.plan.J[k] else 0
            self._ext[key] = (r, j)
        return self._ext[key]

    def retry(self, k: int, n: int) -> int:
        if n < self.plan.n_cols[k]:
            return int(self.retries[self.plan.offsets[k] + n])
        return self._extended(k, n)[0]

    def offset(self, k: int, n: int) -> int:
        if not self.plan.J[k]:
            return 0
        if n < self.plan.n_cols[k]:
            return int(self.jitter[self.plan.offsets[k] + n])
        return self._extended(k, n)[1]

    @property
    def used_extension(self) -> bool:
        return bool(self._ext)


def _releases(plan: _Plan, draws: _Draws, start: int, frames: range):
    """Heap of (actual release, priority, frame, ordinal) from nominal time ``start`` on."""
    heap = []
    for k in frames:
        n = -(-start // plan.T[k])
        heap.append((n * plan.T[k] + draws.offset(k, n), plan.prio[k], k, n))
    heapq.heapify(heap)
    return heap


def _next_release(plan: _Plan, draws: _Draws, heap, k: int, n: int) -> None:
    heapq.heappush(heap, ((n + 1) * plan.T[k] + draws.offset(k, n + 1), plan.prio[k], k, n + 1))


def _play(plan: _Plan, draws: _Draws, f: int, origin: int, heap, pending, fails, only: tuple[int, int] | None):
    """Run the bus from time ``f`` until idle (or until instance ``only`` is done).

    Returns (end time, {ordinal: completion}) for target-frame instances.
    """
    i = plan.target
    done: dict[int, int] = {}

    def admit(limit: int, inclusive: bool) -> None:
        while heap and (heap[0][0] < limit or (inclusive and heap[0][0] == limit)):
            _, p, k, n = heapq.heappop(heap)
            _next_release(plan, draws, heap, k, n)
            if k == i and only is not None:
                continue
            heapq.heappush(pending, (p, n, k))
            fails[(k, n)] = draws.retry(k, n)

    admit(f, f == origin)
    while pending:
        p, n, k = heapq.heappop(pending)
        left = fails[(k, n)]
        if left:
            f += plan.C[k] + plan.E[k]
            fails[(k, n)] = left - 1
            heapq.heappush(pending, (p, n, k))
        else:
            f += plan.C[k]
            del fails[(k, n)]
            if k == i:
                done[n] = f
                if only is not None and n == only[1]:
                    return f, done
        if f > plan.max_time:
            raise SimulationOverflow(f"simulated busy period exceeds {plan.max_time} bit-times")
        admit(f, False)
    return f, done


def _sample(plan: _Plan, draws: _Draws, B: int) -> np.ndarray:
    """Response of every recorded target instance in one sample."""
    i = plan.target
    heap = _releases(plan, draws, 0, range(i + 1))
    end, done = _play(plan, draws, B, 0, heap, [], {}, None)
    out = np.empty(plan.recorded, dtype=np.int64)
    T = plan.T[i]
    for n in range(plan.recorded):
        actual = n * T + draws.offset(i, n)
        if n in done and actual < end:
            out[n] = done[n] - n * T
            continue
        # Released after the first busy period: fresh start at its release.
        hp = _releases(plan, draws, n * T, range(i))
        pending = [(plan.prio[i], n, i)]
        fails = {(i, n): draws.retry(i, n)}
        _, d = _play(plan, draws, actual, actual, hp, pending, fails, (i, n))
        out[n] = d[n] - n * T
    return out


# --- chunk processing --------------------------------------------------------

def _draw_chunk(plan: _Plan, rng: np.random.Generator, rows: int, cfg: SimConfig):
    u = rng.random((rows, plan.width))
    retries = np.zeros((rows, plan.width), dtype=np.int16)
    for k, cdf in enumerate(plan.cdf):
        cols = slice(plan.offsets[k], plan.offsets[k] + plan.n_cols[k])
        for threshold in cdf:
            retries[:, cols] += u[:, cols] >= threshold
    keys = [retries]
    jitter = None
    if cfg.jitter == "uniform":
        v = rng.random((rows, plan.width))
        jitter = np.zeros((rows, plan.width), dtype=np.int64)
        for k in range(len(plan.T)):
            cols = slice(plan.offsets[k], plan.offsets[k] + plan.n_cols[k])
            jitter[:, cols] = np.floor(v[:, cols] * (plan.J[k] + 1)).astype(np.int64)
        keys.append(jitter)
    if cfg.blocking == "sampled" and plan.blockers:
        which = rng.integers(0, len(plan.blockers), rows)
        frac = rng.random(rows)
        size = np.asarray(plan.blockers)[which]
        B = np.floor(frac * (size + 1)).astype(np.int64)
    else:
        B = np.full(rows, plan.B if cfg.blocking == "worst_case_deterministic" else 0, dtype=np.int64)
    keys.append(B[:, None])
    return retries, jitter, B, np.hstack([np.asarray(x, dtype=np.int64) for x in keys])


def _chunk(cfg: SimConfig, plan: _Plan, c: int, rows: int) -> tuple[np.ndarray, int]:
    """Responses (rows x recorded instances) of chunk ``c``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(c,))))
    retries, jitter, B, keys = _draw_chunk(plan, rng, rows, cfg)
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    results = np.empty((uniq.shape[0], plan.recorded), dtype=np.int64)
    needs_ext = []
    for u in range(uniq.shape[0]):
        row = int(first[u])
        draws = _Draws(plan, retries[row], None if jitter is None else jitter[row], None)
        try:
            results[u] = _sample(plan, draws, int(B[row]))
        except _NeedsExtension:
            needs_ext.append(u)
    out = results[inverse]
    extended = 0
    for u in needs_ext:
        for row in np.flatnonzero(inverse == u):
            seq = np.random.SeedSequence(cfg.seed, spawn_key=(c, int(row) + 1))
            draws = _Draws(plan, retries[row], None if jitter is None else jitter[row],
                           lambda seq=seq: np.random.Generator(np.random.PCG64(seq)))
            out[row] = _sample(plan, draws, int(B[row]))
            extended += 1
    return out, extended


def _histogram(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v, c = np.unique(values, return_counts=True)
    return v.astype(np.int64), c.astype(np.int64)


def _merge(hists: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    v = np.concatenate([h[0] for h in hists])
    c = np.concatenate([h[1] for h in hists])
    uv, inv = np.unique(v, return_inverse=True)
    return uv, np.bincount(inv.reshape(-1), weights=c, minlength=uv.size).astype(np.int64)


def _run_chunk(args):
    cfg, c, rows = args
    plan = _plan(cfg)
    out, extended = _chunk(cfg, plan, c, rows)
    per_inst = [_histogram(out[:, n]) for n in range(out.shape[1])]
    return per_inst, _histogram(out.max(axis=1)), extended


def simulate(cfg: SimConfig, jobs: int = 1) -> SimReport:
    plan = _plan(cfg)
    sizes = [cfg.chunk_size] * (cfg.samples // cfg.chunk_size)
    if cfg.samples % cfg.chunk_size:
        sizes.append(cfg.samples % cfg.chunk_size)
    tasks = [(cfg, c, rows) for c, rows in enumerate(sizes)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    hists = [_merge([p[0][n] for p in parts]) for n in range(plan.recorded)]
    frame = cfg.mset.frames[cfg.frame]
    return SimReport(
        frame_id=frame.id,
        samples=cfg.samples,
        seed=cfg.seed,
        bus_speed=cfg.mset.bus_speed,
        horizon=plan.horizon,
        releases=[n * frame.T for n in range(plan.recorded)],
        histograms=hists,
        max_histogram=_merge([p[1] for p in parts]),
        blocking=cfg.blocking,
        jitter=cfg.jitter,
        chunk_size=cfg.chunk_size,
        extended_rows=sum(p[2] for p in parts),
    )
