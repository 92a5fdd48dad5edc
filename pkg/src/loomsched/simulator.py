"""Discrete-event simulator of the two-level claim protocol.

Time is virtual and measured in integer nanoseconds.  Workers alternate
between claiming (paying the modelled overhead) and executing (paying the
exact sum of their sub-chunk's iteration costs).  Claims go through the very
same :mod:`loomsched.workqueue` objects the threaded backend uses, called
from a single thread in event order; events at equal times are processed in
``(node, worker)`` order, which makes every run reproducible bit for bit.

Lock contention is a model, not a measurement: a claim's waiter count is the
number of other workers of the same node whose claim is in progress at the
instant it is issued, and each waiter adds one lock-attempt cost.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .chunking import LoopSpec
from .runtime import ClusterConfig, Mode
from .trace import OVERHEAD_KINDS, Event, ExecutionTrace
from .workqueue import GlobalQueue, LocalQueue, LockModel, lock_model_claim


@dataclass(frozen=True)
class OverheadModel:
    global_claim_cost: int = 0
    local_claim_cost: int = 0
    lock_model: Optional[LockModel] = None

    def __post_init__(self):
        if self.global_claim_cost < 0 or self.local_claim_cost < 0:
            raise ValueError("claim costs must be >= 0")

    def describe(self) -> dict:
        lock = self.lock_model
        return {
            "global_claim_ns": self.global_claim_cost,
            "local_claim_ns": self.local_claim_cost,
            "lock_attempt_ns": lock.attempt_cost if lock else None,
            "lock_granted_ns": lock.granted_cost if lock else None,
        }


ZERO_OVERHEAD = OverheadModel()


@dataclass
class SimOutcome:
    makespan: int
    per_worker_busy: List[int]
    per_worker_idle: List[int]
    per_worker_overhead: List[int]
    trace: ExecutionTrace
    claims: int = 0
    barriers_per_node: List[int] = field(default_factory=list)

    @property
    def total_overhead(self) -> int:
        return sum(self.per_worker_overhead)


class _Sim:
    def __init__(self, config: ClusterConfig, costs: Sequence[int], overheads: OverheadModel, seed):
        self.config = config
        self.overheads = overheads
        self.n = len(costs)
        self.prefix = [0, *itertools.accumulate(int(c) for c in costs)]
        self.glob = GlobalQueue(LoopSpec(self.n), config.inter_technique, config.node_count)
        self.locals = [
            LocalQueue(node, config.intra_technique, config.workers_per_node)
            for node in range(config.node_count)
        ]
        w = config.workers_per_node
        self.lanes: List[List[Event]] = [[] for _ in range(config.total_workers)]
        self.claim_from = [0] * config.total_workers
        self.claim_until = [0] * config.total_workers
        self.refill_ready = [0] * config.node_count
        self.barriers = [0] * config.node_count
        self.claims = 0
        self.heap: List[tuple] = []
        self.seed = seed
        self.w = w

    def wid(self, node, lid):
        return node * self.w + lid

    def emit(self, node, lid, kind, start, end, rng=None, keep_empty=False):
        if end > start or keep_empty:
            self.lanes[self.wid(node, lid)].append(
                Event(self.wid(node, lid), node, kind, start, end, rng)
            )

    def waiters(self, node, lid, t) -> int:
        base = node * self.w
        me = base + lid
        return sum(
            1
            for k in range(base, base + self.w)
            if k != me and self.claim_from[k] <= t < self.claim_until[k]
        )

    def local_claim(self, node, lid, t, barrier_mode):
        """Issue a claim at ``t``; returns (result, local_cost, global_cost)."""
        local = self.locals[node]
        lock = self.overheads.lock_model
        self.claims += 1
        if barrier_mode:
            result = local.claim_local()
            extra = lock.overhead(self.waiters(node, lid, t)) if lock else 0
        elif lock is not None:
            result, extra = lock_model_claim(local, self.glob, lock, self.waiters(node, lid, t))
        else:
            result, extra = local.claim(self.glob), 0
        lc = self.overheads.local_claim_cost + extra
        gc = self.overheads.global_claim_cost if (result is not None and result.global_attempted) else 0
        k = self.wid(node, lid)
        self.claim_from[k], self.claim_until[k] = t, t + lc + gc
        return result, lc, gc

    def execute(self, node, lid, start, lo, hi):
        end = start + self.prefix[hi] - self.prefix[lo]
        self.emit(node, lid, "EXECUTE", start, end, (lo, hi), keep_empty=True)
        heapq.heappush(self.heap, (end, node, lid))

    # -- QUEUE mode ---------------------------------------------------------

    def queue_step(self, t, node, lid):
        if self.refill_ready[node] > t:
            # The node's fresh chunk is still in flight from the global queue.
            self.emit(node, lid, "IDLE", t, self.refill_ready[node])
            heapq.heappush(self.heap, (self.refill_ready[node], node, lid))
            return
        result, lc, gc = self.local_claim(node, lid, t, barrier_mode=False)
        self.emit(node, lid, "CLAIM_LOCAL", t, t + lc)
        done = t + lc + gc
        if result.exhausted:
            if result.global_attempted:
                self.emit(node, lid, "CLAIM_GLOBAL", t + lc, done)
            self.emit(node, lid, "EXHAUSTED", done, done, keep_empty=True)
            return
        if result.refilled:
            chunk = result.chunk
            self.emit(node, lid, "REFILL", t + lc, done, (chunk.start, chunk.end), keep_empty=True)
            self.refill_ready[node] = done
        self.execute(node, lid, done, result.start, result.end)

    # -- BARRIER mode -------------------------------------------------------

    def barrier_arrive(self, node, lid, t):
        self.arrivals[node][lid] = t
        if len(self.arrivals[node]) < self.w:
            return
        arrivals = self.arrivals[node]
        self.arrivals[node] = {}
        release = max(arrivals.values())
        if self.local_installed[node]:
            self.barriers[node] += 1
        # The lead alone talks to the global queue once everybody is in.
        chunk = self.glob.claim()
        done = release + self.overheads.global_claim_cost
        self.claims += 1
        for k in range(self.w):
            end = release if k == 0 else done
            self.emit(node, k, "BARRIER_WAIT", arrivals[k], end)
        if chunk is None:
            self.emit(node, 0, "CLAIM_GLOBAL", release, done)
            self.locals[node].mark_exhausted()
            for k in range(self.w):
                self.emit(node, k, "EXHAUSTED", done, done, keep_empty=True)
            return
        self.emit(node, 0, "REFILL", release, done, (chunk.start, chunk.end), keep_empty=True)
        self.locals[node].install(chunk)
        self.local_installed[node] = True
        for k in range(self.w):
            heapq.heappush(self.heap, (done, node, k))

    def barrier_step(self, t, node, lid):
        result, lc, _ = self.local_claim(node, lid, t, barrier_mode=True)
        self.emit(node, lid, "CLAIM_LOCAL", t, t + lc)
        if result is None:
            self.barrier_arrive(node, lid, t + lc)
        else:
            self.execute(node, lid, t + lc, result.start, result.end)

    # -----------------------------------------------------------------------

    def run(self) -> SimOutcome:
        cfg = self.config
        barrier_mode = cfg.mode is Mode.BARRIER
        if barrier_mode:
            self.arrivals = [dict() for _ in range(cfg.node_count)]
            self.local_installed = [False] * cfg.node_count
            step = self.barrier_step
        else:
            step = self.queue_step
        # Both modes start with every worker probing its empty local queue.
        for node in range(cfg.node_count):
            for lid in range(self.w):
                heapq.heappush(self.heap, (0, node, lid))

        heap = self.heap
        while heap:
            t, node, lid = heapq.heappop(heap)
            step(t, node, lid)

        events = [e for lane in self.lanes for e in lane]
        makespan = max((e.end for e in events), default=0)
        busy, overhead, idle = [], [], []
        for lane in self.lanes:
            b = sum(e.duration for e in lane if e.kind == "EXECUTE")
            o = sum(e.duration for e in lane if e.kind in OVERHEAD_KINDS)
            busy.append(b)
            overhead.append(o)
            idle.append(makespan - b - o)
        events.sort(key=lambda e: (e.start, e.node, e.worker, e.end))
        header = {
            "backend": "SIM",
            "clock_unit": "ns",
            "config": cfg.describe(),
            "overheads": self.overheads.describe(),
            "n": self.n,
            "seed": self.seed,
        }
        return SimOutcome(
            makespan,
            busy,
            idle,
            overhead,
            ExecutionTrace(header, events),
            self.claims,
            list(self.barriers),
        )


def simulate(
    config: ClusterConfig,
    costs: Sequence[int],
    overheads: OverheadModel = ZERO_OVERHEAD,
    n: Optional[int] = None,
    seed=None,
) -> SimOutcome:
    """Simulate one run of ``config`` over the per-iteration ``costs``."""
    if n is not None and n != len(costs):
        raise ValueError(f"cost vector has {len(costs)} entries, loop has {n} iterations")
    if len(costs) < 1:
        raise ValueError("cost vector is empty")
    if any(c < 0 for c in costs):
        raise ValueError("costs must be non-negative")
    return _Sim(config, costs, overheads, seed).run()


def sweep(
    configs: Sequence[ClusterConfig],
    costs: Sequence[int],
    overheads: OverheadModel = ZERO_OVERHEAD,
    seed=None,
) -> Dict[tuple, SimOutcome]:
    """Simulate every config; results keyed by (inter, intra, node_count)."""
    table: Dict[tuple, SimOutcome] = {}
    for cfg in configs:
        key = (cfg.inter_technique.name, cfg.intra_technique.name, cfg.node_count)
        if key in table:
            raise ValueError(f"duplicate sweep entry {key}")
        table[key] = simulate(cfg, costs, overheads, seed=seed)
    return table


SUMMARY_COLUMNS = (
    "inter", "intra", "nodes", "workers_per_node", "mode", "n",
    "makespan_ns", "lower_bound_ns", "total_overhead_ns", "barrier_wait_ns", "claims",
)


def summary_rows(table: Dict[tuple, SimOutcome], configs: Sequence[ClusterConfig]):
    rows = []
    for cfg in configs:
        key = (cfg.inter_technique.name, cfg.intra_technique.name, cfg.node_count)
        out = table[key]
        total = sum(out.per_worker_busy)
        workers = cfg.total_workers
        barrier = sum(e.duration for e in out.trace.events if e.kind == "BARRIER_WAIT")
        rows.append(
            {
                "inter": key[0],
                "intra": key[1],
                "nodes": cfg.node_count,
                "workers_per_node": cfg.workers_per_node,
                "mode": cfg.mode.value,
                "n": out.trace.header["n"],
                "makespan_ns": out.makespan,
                "lower_bound_ns": -(-total // workers),
                "total_overhead_ns": out.total_overhead,
                "barrier_wait_ns": barrier,
                "claims": out.claims,
            }
        )
    return rows


def rows_to_csv(rows) -> bytes:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue().encode()
