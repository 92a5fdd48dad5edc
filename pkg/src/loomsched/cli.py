"""Experiment driver: run one X+Y combination or the whole X x Y grid.

The report goes to stdout (JSON for a single combination, CSV for a sweep);
diagnostics go to stderr.  Traces and ``summary.csv`` are written under
``<out>/<timestamp>/``.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .chunking import TECHNIQUE_NAMES, LoopSpec, Technique
from .runtime import ClusterConfig, Mode, calibrate_claim_costs, run
from .simulator import OverheadModel, SimOutcome, rows_to_csv, simulate
from .trace import compute_metrics, export
from .workloads import (
    DISTRIBUTIONS,
    KernelError,
    MandelbrotParams,
    SyntheticParams,
    WorkloadKind,
    WorkloadSpec,
    generate_costs,
    kernel_for,
)
from .workqueue import LockModel

SWEEP_INTER = ("static", "gss", "tss", "fac2")
SWEEP_INTRA = TECHNIQUE_NAMES
# Simulator overhead defaults, measured with ``loomsched --calibrate`` on the
# build host (CPython 3.10, one hardware thread; medians of three runs).
# Re-run the calibration and pass the flags explicitly on other machines.
CALIBRATED_NS = {
    "global_claim_ns": 4918,
    "local_claim_ns": 7110,
    "lock_attempt_ns": 7344,
    "lock_granted_ns": 0,
}


class UsageError(ValueError):
    pass


def _technique(name: str) -> Technique:
    try:
        return Technique.parse(name)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _size_list(text: str) -> List[int]:
    try:
        return [_positive(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None


def _export_list(text: str) -> List[str]:
    formats = [part.strip().lower() for part in text.split(",") if part.strip()]
    for fmt in formats:
        if fmt not in ("csv", "json", "svg"):
            raise argparse.ArgumentTypeError(f"unknown export format {fmt!r}; accepted: csv,json,svg")
    return formats


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="loomsched",
        description="Hierarchical loop self-scheduling experiments (X+Y = inter+intra).",
    )
    p.add_argument("--inter", type=_technique, default=Technique.parse("gss"),
                   help=f"inter-node technique ({','.join(TECHNIQUE_NAMES)})")
    p.add_argument("--intra", type=_technique, default=Technique.parse("static"),
                   help=f"intra-node technique ({','.join(TECHNIQUE_NAMES)})")
    p.add_argument("--nodes", type=_positive, default=4)
    p.add_argument("--workers", type=_positive, default=os.cpu_count() or 1,
                   help="workers per node (default: CPU count)")
    p.add_argument("--n", type=_positive, default=None, help="loop iterations")
    p.add_argument("--workload", default="synthetic",
                   help="mandelbrot | synthetic | file:PATH")
    p.add_argument("--backend", choices=("real", "sim"), default="sim")
    p.add_argument("--mode", choices=("queue", "barrier"), default=None,
                   help="default: queue (single run) or both (sweep)")
    p.add_argument("--seed", type=_non_negative, default=0)
    p.add_argument("--reps", type=_positive, default=1)
    p.add_argument("--out", default="out", help="output root directory")
    p.add_argument("--export", type=_export_list, default=[], help="csv,json,svg")
    p.add_argument("--sweep", action="store_true", help="run the full X x Y grid")
    p.add_argument("--sizes", type=_size_list, default=[2, 4, 8, 16],
                   help="node counts for --sweep")
    o = p.add_argument_group("overheads (simulator defaults are calibrated; see --calibrate)")
    o.add_argument("--global-claim-ns", type=_non_negative, default=None,
                   help="global claim cost; on the real backend, injected latency (default 0)")
    o.add_argument("--local-claim-ns", type=_non_negative, default=CALIBRATED_NS["local_claim_ns"])
    o.add_argument("--lock-attempt-ns", type=_non_negative, default=CALIBRATED_NS["lock_attempt_ns"])
    o.add_argument("--lock-granted-ns", type=_non_negative, default=CALIBRATED_NS["lock_granted_ns"])
    o.add_argument("--calibrate", action="store_true",
                   help="measure claim costs on this machine, print them as JSON and exit")
    g = p.add_argument_group("workload parameters")
    g.add_argument("--dist", choices=DISTRIBUTIONS, default="exponential")
    g.add_argument("--mean-ns", type=float, default=1000.0)
    g.add_argument("--std-ns", type=float, default=1000.0)
    g.add_argument("--width", type=_positive, default=256)
    g.add_argument("--height", type=_positive, default=256)
    g.add_argument("--max-iter", type=_positive, default=10_000)
    return p


@dataclass(frozen=True)
class PlanEntry:
    config: ClusterConfig
    backend: str
    repetitions: int


def _workload(args) -> tuple:
    """Resolve (WorkloadSpec, n) and check that they agree."""
    name = args.workload
    if name == "mandelbrot":
        spec = WorkloadSpec(
            WorkloadKind.MANDELBROT,
            mandelbrot=MandelbrotParams(args.width, args.height, args.max_iter),
        )
        pixels = spec.mandelbrot.pixels
        if args.n is not None and args.n != pixels:
            raise UsageError(
                f"--n {args.n} does not match mandelbrot {args.width}x{args.height} = {pixels}"
            )
        return spec, pixels
    if name == "synthetic":
        spec = WorkloadSpec(
            WorkloadKind.SYNTHETIC,
            synthetic=SyntheticParams(args.dist, args.mean_ns, args.std_ns, args.seed),
        )
        return spec, args.n if args.n is not None else 10_000
    if name.startswith("file:"):
        from .workloads import read_costs

        path = name[len("file:"):]
        try:
            count = len(read_costs(path))
        except OSError as exc:
            raise UsageError(f"cannot read cost file {path}: {exc.strerror}") from None
        if args.n is not None and args.n != count:
            raise UsageError(f"--n {args.n} does not match {count} costs in {path}")
        return WorkloadSpec(WorkloadKind.FILE, path=path), count
    raise UsageError(f"unknown workload {name!r}; accepted: mandelbrot, synthetic, file:PATH")


def _overheads(args) -> OverheadModel:
    lock = LockModel(args.lock_attempt_ns, args.lock_granted_ns)
    global_ns = args.global_claim_ns
    if global_ns is None:
        global_ns = CALIBRATED_NS["global_claim_ns"]
    return OverheadModel(global_ns, args.local_claim_ns, lock)


def _thread_cap(config: ClusterConfig) -> ClusterConfig:
    cap = os.environ.get("LOOMSCHED_THREADS")
    if not cap:
        return config
    cap = max(int(cap), 1)
    if config.total_workers <= cap:
        return config
    workers = max(cap // config.node_count, 1)
    print(
        f"loomsched: LOOMSCHED_THREADS={cap} caps workers per node at {workers}",
        file=sys.stderr,
    )
    return ClusterConfig(
        config.node_count, workers, config.inter_technique, config.intra_technique,
        config.mode, config.inter_claim_latency,
    )


def _plan(args) -> List[PlanEntry]:
    if args.sweep:
        modes = [Mode(args.mode)] if args.mode else [Mode.QUEUE, Mode.BARRIER]
        combos = [
            (Technique.parse(x), Technique.parse(y), k, m)
            for m in modes
            for k in args.sizes
            for x in SWEEP_INTER
            for y in SWEEP_INTRA
        ]
    else:
        combos = [(args.inter, args.intra, args.nodes, Mode(args.mode or "queue"))]
    plan = []
    for inter, intra, nodes, mode in combos:
        cfg = ClusterConfig(nodes, args.workers, inter, intra, mode, args.global_claim_ns or 0)
        if args.backend == "real":
            cfg = _thread_cap(cfg)
        plan.append(PlanEntry(cfg, args.backend, args.reps))
    return plan


def _run_entry(entry: PlanEntry, spec, n, costs, overheads, seed):
    """Run all repetitions; returns (list of parallel times, last trace, last outcome)."""
    times, trace, outcome = [], None, None
    for _ in range(entry.repetitions):
        if entry.backend == "sim":
            outcome = simulate(entry.config, costs, overheads, seed=seed)
            trace = outcome.trace
            times.append(outcome.makespan)
        else:
            kernel = kernel_for(spec, costs)
            trace = run(entry.config, LoopSpec(n, spec.kind.value), kernel)
            trace.header["seed"] = seed
            times.append(compute_metrics(trace).parallel_time)
    return times, trace, outcome


def _output_dir(root: Path) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    path = root / stamp
    suffix = 0
    while path.exists():
        suffix += 1
        path = root / f"{stamp}-{suffix}"
    path.mkdir(parents=True)
    return path


def _write_traces(directory: Path, trace, formats) -> None:
    if not formats:
        return
    directory.mkdir(parents=True, exist_ok=True)
    for fmt in formats:
        (directory / f"trace.{fmt}").write_bytes(export(trace, fmt))


def execute(args, stdout=None) -> int:
    stdout = stdout or sys.stdout
    spec, n = _workload(args)
    overheads = _overheads(args)
    plan = _plan(args)
    costs = None
    if spec.kind is not WorkloadKind.MANDELBROT or args.backend == "sim":
        costs = generate_costs(spec, n)

    try:
        outdir = _output_dir(Path(args.out))
    except OSError as exc:
        raise UsageError(f"cannot create output directory under {args.out}: {exc.strerror}") from None

    rows = []
    report = None
    for entry in plan:
        cfg = entry.config
        times, trace, outcome = _run_entry(entry, spec, n, costs, overheads, args.seed)
        metrics = compute_metrics(trace)
        label = f"{cfg.inter_technique.name}+{cfg.intra_technique.name}"
        subdir = outdir / label
        if args.sweep:
            subdir = subdir / f"{cfg.node_count}nodes-{cfg.mode.value}"
        _write_traces(subdir, trace, args.export)
        row = {
            "inter": cfg.inter_technique.name,
            "intra": cfg.intra_technique.name,
            "nodes": cfg.node_count,
            "workers_per_node": cfg.workers_per_node,
            "mode": cfg.mode.value,
            "n": n,
            "makespan_ns": int(statistics.median(times)),
            "lower_bound_ns": -(-sum(metrics.busy_times.values()) // cfg.total_workers),
            "total_overhead_ns": metrics.overhead_time,
            "barrier_wait_ns": metrics.barrier_wait_time,
            "claims": outcome.claims if isinstance(outcome, SimOutcome) else len(
                [e for e in trace.events if e.kind in ("CLAIM_LOCAL", "REFILL", "CLAIM_GLOBAL")]
            ),
        }
        rows.append(row)
        if not args.sweep:
            report = {
                "backend": args.backend,
                "config": cfg.describe(),
                "workload": args.workload,
                "n": n,
                "seed": args.seed,
                "overheads": overheads.describe() if args.backend == "sim" else None,
                "repetitions": len(times),
                "parallel_time_ns": {
                    "median": int(statistics.median(times)),
                    "min": min(times),
                    "max": max(times),
                    "values": times,
                },
                "metrics": {
                    "cov_finish": metrics.cov,
                    "max_over_mean_finish": metrics.max_over_mean,
                    "overhead_ns": metrics.overhead_time,
                    "barrier_wait_ns": metrics.barrier_wait_time,
                    "idle_ns": metrics.idle_time,
                },
                "global_chunks": [hi - lo for lo, hi in trace.global_chunks()],
                "output_dir": str(outdir),
            }

    summary = rows_to_csv(rows)
    (outdir / "summary.csv").write_bytes(summary)
    if args.sweep:
        stdout.write(summary.decode())
    else:
        stdout.write(json.dumps(report, indent=2) + "\n")
    stdout.flush()
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.calibrate:
        print(json.dumps(calibrate_claim_costs(), indent=2))
        return 0
    try:
        return execute(args)
    except UsageError as exc:
        print(f"loomsched: error: {exc}", file=sys.stderr)
        return 2
    except KernelError as exc:
        print(f"loomsched: run failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"loomsched: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"loomsched: I/O error: {exc}", file=sys.stderr)
        return 1


run_cli = main


if __name__ == "__main__":
    sys.exit(main())
