"""Threaded execution backend.

Nodes are emulated as groups of threads in one process.  In QUEUE mode every
worker runs the two-level claim protocol on its own; in BARRIER mode worker 0
of each node is the only one allowed to talk to the global queue and the
whole node synchronises after each global chunk, the way a hybrid
process-per-node plus thread-team program does.
"""

from __future__ import annotations

import enum
import os
import threading
import time
from dataclasses import dataclass, field
from typing import List, Optional

from .chunking import LoopSpec, Technique
from .trace import Event, ExecutionTrace, merge_lanes
from .workloads import Kernel, KernelError
from .workqueue import GlobalQueue, LocalQueue


class Mode(enum.Enum):
    QUEUE = "queue"
    BARRIER = "barrier"


@dataclass(frozen=True)
class ClusterConfig:
    node_count: int
    workers_per_node: int
    inter_technique: Technique
    intra_technique: Technique
    mode: Mode = Mode.QUEUE
    inter_claim_latency: int = 0  # ns injected into every global claim
    pin_cpus: bool = False

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if self.workers_per_node < 1:
            raise ValueError("workers_per_node must be >= 1")
        if self.inter_claim_latency < 0:
            raise ValueError("inter_claim_latency must be >= 0")
        if not isinstance(self.mode, Mode):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def total_workers(self) -> int:
        return self.node_count * self.workers_per_node

    @property
    def label(self) -> str:
        return f"{self.inter_technique.name}+{self.intra_technique.name}"

    def describe(self) -> dict:
        return {
            "nodes": self.node_count,
            "workers_per_node": self.workers_per_node,
            "inter": self.inter_technique.name,
            "intra": self.intra_technique.name,
            "mode": self.mode.value,
            "inter_claim_latency_ns": self.inter_claim_latency,
        }


def _delay(ns: int) -> None:
    if ns <= 0:
        return
    deadline = time.perf_counter_ns() + ns
    if ns >= 200_000:
        time.sleep(ns / 1e9)
    while time.perf_counter_ns() < deadline:
        pass


class _LatentGlobalQueue(GlobalQueue):
    """Global queue whose claims pay a fixed interconnect latency."""

    def __init__(self, loop, technique, node_count, latency_ns):
        super().__init__(loop, technique, node_count)
        self.latency_ns = latency_ns

    def claim_steps(self):
        _delay(self.latency_ns)
        return (yield from super().claim_steps())


class _Abort:
    def __init__(self):
        self.error: Optional[BaseException] = None
        self.flag = threading.Event()

    def set(self, exc):
        if not self.flag.is_set():
            self.error = exc
            self.flag.set()


def run(config: ClusterConfig, loop: LoopSpec, kernel: Kernel, out=None) -> ExecutionTrace:
    """Execute ``kernel`` over every iteration of ``loop`` and return the trace.

    ``out``, when given, receives each iteration's result at its index.
    Raises :class:`KernelError` naming the first failing iteration.
    """
    if config.mode is Mode.BARRIER:
        return run_barrier_mode(config, loop, kernel, out)
    return _run(config, loop, kernel, out, _queue_worker)


def run_barrier_mode(config: ClusterConfig, loop: LoopSpec, kernel: Kernel, out=None) -> ExecutionTrace:
    if config.mode is not Mode.BARRIER:
        raise ValueError("run_barrier_mode needs a BARRIER-mode config")
    return _run(config, loop, kernel, out, _barrier_worker)


def _run(config, loop, kernel, out, worker_fn) -> ExecutionTrace:
    glob = _LatentGlobalQueue(
        loop, config.inter_technique, config.node_count, config.inter_claim_latency
    )
    locals_ = [
        LocalQueue(node, config.intra_technique, config.workers_per_node)
        for node in range(config.node_count)
    ]
    barriers = [threading.Barrier(config.workers_per_node) for _ in range(config.node_count)]
    abort = _Abort()
    lanes: List[List[Event]] = [[] for _ in range(config.total_workers)]
    hw_threads = os.cpu_count() or 1

    if hasattr(kernel, "warm_up"):
        kernel.warm_up()

    t0 = time.perf_counter_ns()
    threads = []
    for node in range(config.node_count):
        for local_id in range(config.workers_per_node):
            wid = node * config.workers_per_node + local_id
            ctx = _WorkerContext(
                wid, node, local_id, glob, locals_[node], barriers[node],
                kernel, out, lanes[wid], t0, abort, config.pin_cpus, hw_threads,
            )
            threads.append(threading.Thread(target=worker_fn, args=(ctx,), daemon=True))
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if abort.error is not None:
        raise abort.error

    header = {
        "backend": "REAL",
        "clock_unit": "ns",
        "config": config.describe(),
        "n": loop.total_iterations,
        "workload": loop.workload_id,
        "seed": None,
        "hardware_threads": hw_threads,
        "oversubscribed": config.total_workers > hw_threads,
        "cpu_pinning": config.pin_cpus,
    }
    return merge_lanes(header, lanes)


@dataclass
class _WorkerContext:
    wid: int
    node: int
    local_id: int
    glob: GlobalQueue
    local: LocalQueue
    barrier: threading.Barrier
    kernel: Kernel
    out: object
    lane: List[Event]
    t0: int
    abort: _Abort
    pin: bool = False
    hw_threads: int = 1
    clock: callable = field(default=time.perf_counter_ns)

    def now(self) -> int:
        return self.clock() - self.t0

    def emit(self, kind, start, end, rng=None):
        self.lane.append(Event(self.wid, self.node, kind, start, end, rng))

    def execute(self, lo, hi) -> bool:
        start = self.now()
        try:
            self.kernel.run_range(lo, hi, self.out)
        except KernelError as exc:
            self.abort.set(exc)
            return False
        except Exception as exc:  # kernels that override run_range directly
            self.abort.set(KernelError(lo, exc))
            return False
        self.emit("EXECUTE", start, self.now(), (lo, hi))
        return True


def _maybe_pin(ctx: _WorkerContext) -> None:
    if ctx.pin and hasattr(os, "sched_setaffinity"):
        os.sched_setaffinity(0, {ctx.wid % ctx.hw_threads})


def _queue_worker(ctx: _WorkerContext) -> None:
    _maybe_pin(ctx)
    while not ctx.abort.flag.is_set():
        start = ctx.now()
        result = ctx.local.claim(ctx.glob)
        end = ctx.now()
        if result.wait_ns:
            split = min(start + result.wait_ns, end)
            ctx.emit("IDLE", start, split)
            start = split
        if result.exhausted:
            ctx.emit("CLAIM_GLOBAL" if result.global_attempted else "CLAIM_LOCAL", start, end)
            ctx.emit("EXHAUSTED", end, end)
            return
        if result.refilled:
            ctx.emit("REFILL", start, end, (result.chunk.start, result.chunk.end))
        else:
            ctx.emit("CLAIM_LOCAL", start, end)
        if not ctx.execute(result.start, result.end):
            return


def _barrier_worker(ctx: _WorkerContext) -> None:
    _maybe_pin(ctx)
    lead = ctx.local_id == 0
    while True:
        wait_from = ctx.now()
        if lead and not ctx.abort.flag.is_set():
            chunk = ctx.glob.claim()
            end = ctx.now()
            if chunk is None:
                ctx.local.mark_exhausted()
                ctx.emit("CLAIM_GLOBAL", wait_from, end)
            else:
                ctx.local.install(chunk)
                ctx.emit("REFILL", wait_from, end, (chunk.start, chunk.end))
            wait_from = end
        try:
            ctx.barrier.wait()
        except threading.BrokenBarrierError:
            return
        now = ctx.now()
        ctx.emit("BARRIER_WAIT", wait_from, now)
        if ctx.local.exhausted or ctx.abort.flag.is_set():
            ctx.emit("EXHAUSTED", now, now)
            return
        while True:
            start = ctx.now()
            result = ctx.local.claim_local()
            end = ctx.now()
            ctx.emit("CLAIM_LOCAL", start, end)
            if result is None:
                break
            if not ctx.execute(result.start, result.end):
                ctx.barrier.abort()
                return
        wait_from = ctx.now()
        # Implicit end-of-chunk barrier: everybody waits for the slowest.
        try:
            ctx.barrier.wait()
        except threading.BrokenBarrierError:
            return
        ctx.emit("BARRIER_WAIT", wait_from, ctx.now())


def calibrate_claim_costs(threads: int = 4, claims: int = 50_000) -> dict:
    """Micro-benchmark the claim protocol on this machine.

    Returns the mean latency of an uncontended local claim and of a global
    claim, plus the extra latency per concurrent claimant measured with
    ``threads`` workers draining one SS local queue.
    """
    from .chunking import Kind

    ss, static = Technique(Kind.SS), Technique(Kind.STATIC)

    def local_latency(workers):
        glob = GlobalQueue(LoopSpec(claims), static, 1)
        local = LocalQueue(0, ss, workers)
        totals = [0] * workers
        counts = [0] * workers
        start = threading.Barrier(workers)

        def body(k):
            start.wait()
            while True:
                t = time.perf_counter_ns()
                result = local.claim(glob)
                totals[k] += time.perf_counter_ns() - t
                counts[k] += 1
                if result.exhausted:
                    return

        pool = [threading.Thread(target=body, args=(k,)) for k in range(workers)]
        for t in pool:
            t.start()
        for t in pool:
            t.join()
        return sum(totals) / sum(counts)

    glob = GlobalQueue(LoopSpec(claims), ss, 1)
    t = time.perf_counter_ns()
    while glob.claim() is not None:
        pass
    global_ns = (time.perf_counter_ns() - t) / claims
    single = local_latency(1)
    contended = local_latency(threads) if threads > 1 else single
    per_waiter = max(contended - single, 0.0) / max(threads - 1, 1)
    return {
        "local_claim_ns": round(single),
        "global_claim_ns": round(global_ns),
        "lock_attempt_ns": round(per_waiter),
        "threads": threads,
        "hardware_threads": os.cpu_count() or 1,
    }
