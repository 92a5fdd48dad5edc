"""Two-level hierarchical work queue.

A single :class:`GlobalQueue` hands out chunks of the whole iteration space to
nodes; each node has a :class:`LocalQueue` holding its current chunk, from
which the node's workers claim sub-chunks.  Whichever worker of a node finds
the local queue drained first refills it from the global queue, then takes a
sub-chunk of the fresh chunk for itself.

Both queues keep their state in an :class:`AtomicCell` holding an immutable
snapshot; every claim is a load / compute / compare-and-swap loop, so each
successful claim has exactly one linearization point (the winning CAS).

The claim protocol is written as a generator that yields right before each
shared-memory access.  :func:`claim_sub` simply runs it to completion; tests
drive several such generators step by step to enumerate interleavings.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass
from typing import Generator, Optional, Tuple

from .chunking import Chunk, LoopSpec, SchedulerState, Technique, compute_chunk_size


class AtomicCell:
    """A reference cell with an atomic compare-and-swap.

    ``load`` is a plain attribute read (atomic under CPython).  ``cas``
    compares by identity, and since every stored value is a fresh immutable
    object there is no ABA hazard.  The tiny lock only emulates the hardware
    CAS instruction; no claim logic runs while it is held.
    """

    __slots__ = ("_value", "_lock")

    def __init__(self, value):
        self._value = value
        self._lock = threading.Lock()

    def load(self):
        return self._value

    def cas(self, expected, new) -> bool:
        with self._lock:
            if self._value is expected:
                self._value = new
                return True
            return False

    def store(self, value) -> None:
        with self._lock:
            self._value = value


# Marker yielded by the protocol right before touching shared state.
STEP = "step"
# Marker yielded while another worker of the node holds the refill token.
WAIT = "wait"


class GlobalQueue:
    """Inter-node queue over ``[0, loop.total_iterations)``."""

    def __init__(self, loop: LoopSpec, technique: Technique, node_count: int):
        if node_count < 1:
            raise ValueError("node_count must be >= 1")
        self.loop = loop
        self.technique = technique
        self.node_count = node_count
        self.cell = AtomicCell(SchedulerState())

    @property
    def state(self) -> SchedulerState:
        return self.cell.load()

    @property
    def total(self) -> int:
        return self.loop.total_iterations

    def claim_steps(self) -> Generator[str, None, Optional[Chunk]]:
        n = self.total
        while True:
            yield STEP
            state = self.cell.load()
            if state.scheduled >= n:
                return None
            size = compute_chunk_size(self.technique, state, n, self.node_count)
            yield STEP
            if self.cell.cas(state, state.advance(size)):
                return Chunk(state.scheduled, size, state.step)

    def claim(self) -> Optional[Chunk]:
        """Claim the next global chunk, or ``None`` once the loop is exhausted."""
        return _drive(self.claim_steps())[0]


def claim_global(queue: GlobalQueue) -> Optional[Chunk]:
    return queue.claim()


@dataclass(frozen=True)
class _LocalSnapshot:
    chunk: Optional[Chunk] = None
    state: SchedulerState = SchedulerState()
    refilling: bool = False
    exhausted: bool = False

    @property
    def has_work(self) -> bool:
        return self.chunk is not None and self.state.scheduled < self.chunk.size


class Outcome(enum.Enum):
    SUBCHUNK = "SUBCHUNK"
    REFILLED_THEN_SUBCHUNK = "REFILLED_THEN_SUBCHUNK"
    EXHAUSTED = "EXHAUSTED"


@dataclass(frozen=True)
class ClaimResult:
    """Outcome of one intra-node claim.

    ``start``/``end`` delimit the sub-chunk in global iteration indices;
    ``chunk`` is the global chunk it was cut from and ``sub_step`` its
    scheduling step inside that chunk.  ``global_attempted`` is true when the
    claim went to the global queue (a refill or a failed refill).
    """

    outcome: Outcome
    start: int = 0
    end: int = 0
    chunk: Optional[Chunk] = None
    sub_step: int = -1
    global_attempted: bool = False
    wait_ns: int = 0

    @property
    def size(self) -> int:
        return self.end - self.start

    @property
    def exhausted(self) -> bool:
        return self.outcome is Outcome.EXHAUSTED

    @property
    def refilled(self) -> bool:
        return self.outcome is Outcome.REFILLED_THEN_SUBCHUNK


EXHAUSTED = ClaimResult(Outcome.EXHAUSTED)


class LocalQueue:
    """Per-node queue over the node's current global chunk."""

    def __init__(self, owner_node: int, technique: Technique, worker_count: int):
        if worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        self.owner_node = owner_node
        self.technique = technique
        self.worker_count = worker_count
        self.cell = AtomicCell(_LocalSnapshot())

    @property
    def current_chunk(self) -> Optional[Chunk]:
        return self.cell.load().chunk

    @property
    def state(self) -> SchedulerState:
        return self.cell.load().state

    @property
    def exhausted(self) -> bool:
        return self.cell.load().exhausted

    def _subrange(self, chunk: Chunk, state: SchedulerState, outcome: Outcome, size: int):
        start = chunk.start + state.scheduled
        return ClaimResult(
            outcome,
            start,
            start + size,
            chunk,
            state.step,
            global_attempted=outcome is Outcome.REFILLED_THEN_SUBCHUNK,
        )

    def claim_steps(self, global_queue: GlobalQueue) -> Generator[str, None, ClaimResult]:
        tech, workers = self.technique, self.worker_count
        while True:
            yield STEP
            snap = self.cell.load()
            if snap.exhausted:
                return EXHAUSTED

            if snap.has_work:
                chunk, state = snap.chunk, snap.state
                size = compute_chunk_size(tech, state, chunk.size, workers)
                new = _LocalSnapshot(chunk, state.advance(size))
                yield STEP
                if self.cell.cas(snap, new):
                    return self._subrange(chunk, state, Outcome.SUBCHUNK, size)
                continue

            if snap.refilling:
                # Another worker is fetching the next chunk; retry locally.
                yield WAIT
                continue

            yield STEP
            token = _LocalSnapshot(snap.chunk, snap.state, refilling=True)
            if not self.cell.cas(snap, token):
                continue

            chunk = yield from global_queue.claim_steps()
            yield STEP
            if chunk is None:
                self.cell.store(_LocalSnapshot(exhausted=True))
                return ClaimResult(Outcome.EXHAUSTED, global_attempted=True)
            fresh = SchedulerState()
            size = compute_chunk_size(tech, fresh, chunk.size, workers)
            # Only the token holder writes while refilling is set.
            self.cell.store(_LocalSnapshot(chunk, fresh.advance(size)))
            return self._subrange(chunk, fresh, Outcome.REFILLED_THEN_SUBCHUNK, size)

    def claim(self, global_queue: GlobalQueue) -> ClaimResult:
        result, wait_ns = _drive(self.claim_steps(global_queue))
        if wait_ns:
            result = _with_wait(result, wait_ns)
        return result

    # Barrier-mode primitives: a designated lead installs chunks, everybody
    # else only ever claims from the current chunk.

    def claim_local(self) -> Optional[ClaimResult]:
        """Claim from the current chunk only; ``None`` if it is drained."""
        while True:
            snap = self.cell.load()
            if not snap.has_work:
                return None
            chunk, state = snap.chunk, snap.state
            size = compute_chunk_size(self.technique, state, chunk.size, self.worker_count)
            if self.cell.cas(snap, _LocalSnapshot(chunk, state.advance(size))):
                return self._subrange(chunk, state, Outcome.SUBCHUNK, size)

    def install(self, chunk: Chunk) -> None:
        self.cell.store(_LocalSnapshot(chunk, SchedulerState()))

    def mark_exhausted(self) -> None:
        self.cell.store(_LocalSnapshot(exhausted=True))


def claim_sub(local: LocalQueue, global_queue: GlobalQueue) -> ClaimResult:
    """Two-stage claim: a sub-chunk locally, refilling from the global queue if needed."""
    return local.claim(global_queue)


def _with_wait(result: ClaimResult, wait_ns: int) -> ClaimResult:
    return ClaimResult(
        result.outcome,
        result.start,
        result.end,
        result.chunk,
        result.sub_step,
        result.global_attempted,
        wait_ns,
    )


def _drive(gen) -> Tuple[object, int]:
    """Run a protocol generator to completion; returns (value, ns spent waiting)."""
    waited = 0
    wait_from = None
    try:
        while True:
            marker = next(gen)
            if marker is WAIT:
                if wait_from is None:
                    wait_from = time.perf_counter_ns()
                time.sleep(0)
            elif wait_from is not None:
                waited += time.perf_counter_ns() - wait_from
                wait_from = None
    except StopIteration as stop:
        if wait_from is not None:
            waited += time.perf_counter_ns() - wait_from
        return stop.value, waited


@dataclass(frozen=True)
class LockModel:
    """Lock-polling cost model: a granted lock costs ``granted_cost``, and
    every concurrent waiter adds one more ``attempt_cost``."""

    attempt_cost: int = 0
    granted_cost: int = 0

    def __post_init__(self):
        if self.attempt_cost < 0 or self.granted_cost < 0:
            raise ValueError("lock costs must be >= 0")

    def overhead(self, waiters: int) -> int:
        return self.granted_cost + self.attempt_cost * waiters


def lock_model_claim(
    local: LocalQueue, global_queue: GlobalQueue, contention: LockModel, waiters: int
) -> Tuple[ClaimResult, int]:
    """:func:`claim_sub` plus the synthetic lock-polling overhead it incurs."""
    return local.claim(global_queue), contention.overhead(waiters)
