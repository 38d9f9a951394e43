"""Command-line interface: analyze, simulate, compare, generate, bench.

Exit codes: 0 success, 2 invalid input, 3 an iteration did not converge.
Every command that writes files also writes a ``*.manifest.json`` with
the resolved parameters, input digests and per-phase timings.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DEFAULT_EPSILON, SAE_EPSILON, analyze, analyze_frame, legacy_pwcrt
from .deterministic import det_wcrt
from .exceedance import ExceedanceCurve, max_abs_diff, mse, read_curves_csv, write_curves_csv
from .model import ConvergenceError, MessageSet, ValidationError, load_message_set, save_message_set
from .simulation import SimConfig, empirical_exceedance, simulate
from .workload import GenSpec, generate_set

OUTPUT_ENV = "CANPWCRT_OUTPUT_DIR"
MANIFEST_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3


class _Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0


def _digest(path: str | Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_digests(*sources) -> dict[str, str]:
    out = {}
    for src in sources:
        if src is not None and Path(str(src)).is_file():
            out[str(src)] = _digest(src)
    return out


def _write_manifest(path: Path, command: str, params: dict, inputs: dict, outputs: list[Path],
                    timer: _Timer) -> None:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "canpwcrt",
        "tool_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "subcommand": command,
        "parameters": params,
        "inputs": inputs,
        "outputs": {p.name: _digest(p) for p in outputs},
        "timings_s": {k: round(v, 6) for k, v in timer.phases.items()},
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _out_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUTPUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> MessageSet:
    mset = load_message_set(args.set)
    if getattr(args, "lam", None) is not None:
        mset = mset.with_lambda(args.lam)
    return mset


def _frames(mset: MessageSet, args) -> list[int]:
    if args.all_frames:
        return list(range(len(mset)))
    if args.lowest_priority:
        return [mset.lowest_priority]
    if not args.frame:
        raise ValidationError("select a frame with --frame ID, --lowest-priority or --all-frames")
    try:
        return [mset.index_of(f) for f in args.frame]
    except KeyError as exc:
        raise ValidationError(str(exc.args[0])) from None


def _epsilon(args, mset: MessageSet) -> float:
    if args.epsilon is not None:
        return args.epsilon
    return SAE_EPSILON if mset.name == "sae" else DEFAULT_EPSILON


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


# --- analyze -----------------------------------------------------------------

def _analyze_one(task):
    mset, i, method, eps, conservative = task
    frame = mset.frames[i]
    if method == "deterministic":
        entry = det_wcrt(mset, i)
        curve = ExceedanceCurve(np.array([0, entry.wcrt]), np.array([1.0, 0.0]), "deterministic",
                                frame.id, mset.bus_speed)
        summary = {
            "frame_id": frame.id,
            "method": method,
            "wcrt_bits": entry.wcrt,
            "wcrt_ms": entry.wcrt * 1000.0 / mset.bus_speed,
            "busy_window_bits": entry.busy_window,
            "blocking_bits": entry.blocking,
            "instances": entry.instances,
            "deadline_bits": frame.D,
            "schedulable": entry.schedulable,
            "deadline_miss_probability": 0.0 if entry.schedulable else 1.0,
        }
        return curve, summary
    res = analyze(mset, i, method, eps, conservative_stop=conservative)
    summary = {
        "frame_id": frame.id,
        "method": method,
        "epsilon": eps,
        "deadline_bits": frame.D,
        "deadline_miss_probability": res.deadline_miss,
        "instances": len(res.instances),
        "min_response_bits": res.min_response,
        "residual": res.residual,
        "open_mass": res.open_mass,
        "convolutions": res.convolutions,
    }
    if res.sequence is not None:
        summary["busy_window_stop_bits"] = res.sequence.stop_time
        summary["busy_window_truncated_mass"] = res.sequence.truncated_mass
    return res.curve, summary


def cmd_analyze(args) -> int:
    timer = _Timer()
    with timer.phase("load"):
        mset = _load(args)
        frames = _frames(mset, args)
        eps = _epsilon(args, mset)
    tasks = [(mset, i, args.method, eps, args.conservative_stop) for i in frames]
    with timer.phase("analyze"):
        if args.jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_analyze_one, tasks))
        else:
            results = [_analyze_one(t) for t in tasks]
    out = _out_dir(args.out)
    prefix = args.prefix or f"{mset.name or 'set'}_{args.method}"
    csv_path = out / f"{prefix}.csv"
    summary_path = out / f"{prefix}.summary.json"
    with timer.phase("write"):
        write_curves_csv([c for c, _ in results], csv_path)
        summary = {"set": mset.name, "bus_speed_bps": mset.bus_speed, "lambda_per_bit": mset.error_model.lam,
                   "frames": [s for _, s in results]}
        summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    params = _params(args) | {"epsilon": eps}
    _write_manifest(out / f"{prefix}.manifest.json", "analyze", params, _input_digests(args.set),
                    [csv_path, summary_path], timer)
    _emit(summary)
    return EXIT_OK


# --- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    timer = _Timer()
    with timer.phase("load"):
        mset = _load(args)
        frames = _frames(mset, args)
    out = _out_dir(args.out)
    outputs, summaries, curves = [], [], []
    for i in frames:
        cfg = SimConfig(mset, i, args.samples, args.seed, args.blocking, args.jitter,
                        chunk_size=args.chunk_size)
        with timer.phase(f"simulate:{mset.frames[i].id}"):
            report = simulate(cfg, jobs=args.jobs)
        curve = empirical_exceedance(report)
        curves.append(curve)
        prefix = args.prefix or f"{mset.name or 'set'}_montecarlo"
        rep_path = out / f"{prefix}_{report.frame_id}.report.json"
        report.save(rep_path)
        outputs.append(rep_path)
        summaries.append({
            "frame_id": report.frame_id,
            "samples": report.samples,
            "seed": report.seed,
            "instances": len(report.histograms),
            "deadline_miss_probability": float(curve(mset.frames[i].D)),
            "extended_rows": report.extended_rows,
        })
    prefix = args.prefix or f"{mset.name or 'set'}_montecarlo"
    csv_path = out / f"{prefix}.csv"
    write_curves_csv(curves, csv_path)
    outputs.append(csv_path)
    _write_manifest(out / f"{prefix}.manifest.json", "simulate", _params(args), _input_digests(args.set),
                    outputs, timer)
    _emit({"set": mset.name, "frames": summaries})
    return EXIT_OK


# --- compare -----------------------------------------------------------------

def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like LO:HI, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("range must satisfy LO < HI")
    return lo, hi


def cmd_compare(args) -> int:
    timer = _Timer()
    curves: list[ExceedanceCurve] = []
    with timer.phase("load"):
        for path in args.curves:
            try:
                curves.extend(read_curves_csv(path))
            except FileNotFoundError:
                raise ValidationError(f"no such curve file {path!r}") from None
    if args.frame:
        curves = [c for c in curves if c.frame_id == args.frame]
    if len(curves) < 2:
        raise ValidationError("compare needs at least two curves")
    pairs = []
    with timer.phase("metrics"):
        for a, b in itertools.combinations(curves, 2):
            if args.reference and args.reference not in (a.method, b.method):
                continue
            pairs.append({
                "a": {"method": a.method, "frame_id": a.frame_id},
                "b": {"method": b.method, "frame_id": b.frame_id},
                "mse": mse(a, b, args.points, args.range, args.unit),
                "max_abs_diff": max_abs_diff(a, b, args.points, args.range, args.unit),
            })
    result = {"points": args.points, "range": list(args.range), "unit": args.unit, "pairs": pairs}
    if args.out:
        out = _out_dir(args.out)
        path = out / f"{args.prefix or 'compare'}.json"
        path.write_text(json.dumps(result, indent=2) + "\n")
        _write_manifest(out / f"{args.prefix or 'compare'}.manifest.json", "compare", _params(args),
                        _input_digests(*args.curves), [path], timer)
    _emit(result)
    return EXIT_OK


# --- generate ----------------------------------------------------------------

def _spec(args, utilization: float | None = None, n_sets: int | None = None) -> GenSpec:
    return GenSpec(
        n_messages=args.n,
        utilization=utilization if utilization is not None else args.utilization,
        n_sets=n_sets if n_sets is not None else args.sets,
        seed=args.seed,
        period_ms=args.period_range,
        c_bits=args.c_range,
        jitter_frac=args.jitter_range,
        lam=args.lam if args.lam is not None else 1e-5,
    )


def cmd_generate(args) -> int:
    timer = _Timer()
    spec = _spec(args)
    out = _out_dir(args.out)
    paths, utils = [], []
    with timer.phase("generate"):
        for s in range(spec.n_sets):
            mset = generate_set(spec, s)
            path = out / f"{mset.name}.json"
            save_message_set(mset, path)
            paths.append(path)
            utils.append(mset.utilization())
    params = _params(args) | {"spec": spec.to_dict(), "realized_utilization": utils}
    _write_manifest(out / "manifest.json", "generate", params, {}, paths, timer)
    _emit({"sets": len(paths), "directory": str(out), "utilization_min": min(utils),
           "utilization_max": max(utils)})
    return EXIT_OK


# --- bench -------------------------------------------------------------------

def _time_methods(mset: MessageSet, eps: float, repeat: int) -> dict[str, float]:
    i = mset.lowest_priority
    out = {}
    for name, fn in (("improved", analyze_frame), ("legacy", legacy_pwcrt)):
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn(mset, i, eps)
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out


def _stats(rows: list[dict[str, float]]) -> dict:
    return {m: {"mean_s": float(np.mean([r[m] for r in rows])), "max_s": float(np.max([r[m] for r in rows]))}
            for m in ("improved", "legacy")}


def bench_sets(groups: dict[str, list[MessageSet]], eps: float, repeat: int = 1) -> dict:
    """Wall-clock of both convolution methods on the lowest-priority frame of each set."""
    report = {"epsilon": eps, "repeat": repeat, "groups": []}
    for label, sets in groups.items():
        rows = []
        for mset in sets:
            t = _time_methods(mset, eps, repeat)
            rows.append(t)
        entry = {"label": label, "sets": len(sets), "per_set": [
            {"set": m.name, **r} for m, r in zip(sets, rows)]}
        entry.update(_stats(rows))
        report["groups"].append(entry)
    if len(report["groups"]) > 1:
        means = {m: [g[m]["mean_s"] for g in report["groups"]] for m in ("improved", "legacy")}
        # Fraction of consecutive sweep steps where the mean time grew.
        report["trend"] = {m: float(np.mean(np.diff(v) > 0)) for m, v in means.items()}
    return report


def _sweep(text: str, steps: int) -> list[float]:
    if ":" not in text:
        return [float(text)]
    lo, hi = _parse_range(text)
    return [float(x) for x in np.linspace(lo, hi, steps)]


def cmd_bench(args) -> int:
    timer = _Timer()
    groups: dict[str, list[MessageSet]] = {}
    inputs = {}
    with timer.phase("load"):
        if args.sets_dir:
            files = sorted(Path(args.sets_dir).glob("*.json"))
            files = [f for f in files if f.name != "manifest.json"]
            if not files:
                raise ValidationError(f"no message-set files in {args.sets_dir}")
            groups[str(args.sets_dir)] = [load_message_set(f) for f in files]
            inputs = _input_digests(*files)
        else:
            for u in _sweep(args.utilization_range, args.steps):
                spec = _spec(args, utilization=u)
                groups[f"U={u:.3f}"] = [generate_set(spec, s) for s in range(spec.n_sets)]
    eps = args.epsilon if args.epsilon is not None else DEFAULT_EPSILON
    with timer.phase("bench"):
        report = bench_sets(groups, eps, args.repeat)
    if args.out:
        out = _out_dir(args.out)
        path = out / f"{args.prefix or 'bench'}.json"
        path.write_text(json.dumps(report, indent=2) + "\n")
        _write_manifest(out / f"{args.prefix or 'bench'}.manifest.json", "bench", _params(args), inputs,
                        [path], timer)
    summary = {g["label"]: {m: g[m] for m in ("improved", "legacy")} for g in report["groups"]}
    if "trend" in report:
        summary["trend"] = report["trend"]
    _emit(summary)
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _pair(kind):
    def parse(text: str):
        lo, hi = _parse_range(text)
        return kind(lo), kind(hi)
    return parse


def _frame_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--frame", action="append", help="frame id (repeatable)")
    g.add_argument("--lowest-priority", action="store_true", help="analyse the lowest-priority frame")
    g.add_argument("--all-frames", action="store_true")


def _gen_args(p: argparse.ArgumentParser, sets_default: int = 50) -> None:
    p.add_argument("--n", type=int, default=10, help="messages per set")
    p.add_argument("--sets", type=int, default=sets_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--period-range", type=_pair(float), default=(10.0, 1000.0), metavar="LO:HI",
                   help="period range in ms")
    p.add_argument("--c-range", type=_pair(int), default=(55, 135), metavar="LO:HI", help="C range in bits")
    p.add_argument("--jitter-range", type=_pair(float), default=(0.0, 0.1), metavar="LO:HI",
                   help="jitter as a fraction of the period")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="bit error rate (default 1e-5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="canpwcrt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="exceedance curve of one or more frames")
    p.add_argument("--set", required=True, help="dataset name (sae, example3) or JSON file")
    _frame_args(p)
    p.add_argument("--method", choices=["improved", "legacy", "deterministic"], default="improved")
    p.add_argument("--epsilon", type=float, default=None,
                   help=f"stop threshold (default {SAE_EPSILON} for sae, {DEFAULT_EPSILON} otherwise)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="override the bit error rate")
    p.add_argument("--conservative-stop", action="store_true",
                   help="count mass left open by the stop rule as exceedance")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="Monte Carlo exceedance curve")
    p.add_argument("--set", required=True)
    _frame_args(p)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--blocking", choices=["worst_case_deterministic", "sampled"], default="worst_case_deterministic")
    p.add_argument("--jitter", choices=["off", "uniform"], default="off")
    p.add_argument("--chunk-size", type=int, default=50_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="MSE and max difference between curves")
    p.add_argument("curves", nargs="+", help="curve CSV files")
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--range", type=_parse_range, default=(0.0, 60.0), metavar="LO:HI")
    p.add_argument("--unit", choices=["ms", "bits"], default="ms")
    p.add_argument("--frame", help="only compare curves of this frame")
    p.add_argument("--reference", help="only pairs involving this method")
    p.add_argument("--out")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("generate", help="random message sets")
    _gen_args(p)
    p.add_argument("--utilization", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="time improved vs legacy convolution")
    p.add_argument("--sets-dir", help="directory of message-set JSON files")
    _gen_args(p)
    p.add_argument("--utilization", dest="utilization_range", default="0.5",
                   help="utilization or sweep LO:HI for generated sets")
    p.add_argument("--steps", type=int, default=4, help="sweep points")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--repeat", type=int, default=1, help="runs per set; the fastest is kept")
    p.add_argument("--out")
    p.add_argument("--prefix")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
