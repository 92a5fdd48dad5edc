"""Chunk-size rules for the five loop self-scheduling techniques.

Every rule is a pure function of the queue state ``(step, scheduled)``, the
loop size ``n`` and the number of claimants ``p``.  Because the size of the
next chunk never depends on *who* claims it, any linearizable interleaving of
claims produces exactly the sequence that :func:`chunk_sequence_oracle`
produces for a single sequential claimant.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional


class Kind(enum.Enum):
    STATIC = "static"
    SS = "ss"
    GSS = "gss"
    TSS = "tss"
    FAC2 = "fac2"


TECHNIQUE_NAMES = tuple(k.value for k in Kind)


class LoopExhausted(ValueError):
    """Raised when a chunk size is requested for a loop with nothing left."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class Technique:
    """A chunk-size rule plus its optional TSS overrides.

    ``first`` and ``last`` are the first and last TSS chunk sizes; they are
    only meaningful for ``Kind.TSS`` and default to ``ceil(n/2p)`` and 1.
    """

    kind: Kind
    first: Optional[int] = None
    last: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.kind, Kind):
            raise ValueError(f"unknown technique kind {self.kind!r}")
        if self.first is not None or self.last is not None:
            if self.kind is not Kind.TSS:
                raise ValueError("first/last overrides only apply to TSS")
            last = self.last if self.last is not None else 1
            if last < 1 or (self.first is not None and self.first < last):
                raise ValueError(
                    f"TSS overrides must satisfy first >= last >= 1, "
                    f"got first={self.first}, last={self.last}"
                )

    @classmethod
    def parse(cls, name: str) -> "Technique":
        """Build a technique from its case-insensitive name (``"gss"`` etc)."""
        try:
            return cls(Kind(name.strip().lower()))
        except (ValueError, AttributeError):
            raise ValueError(
                f"unknown technique {name!r}; accepted: {','.join(TECHNIQUE_NAMES)}"
            ) from None

    @property
    def name(self) -> str:
        return self.kind.value

    def __str__(self) -> str:
        return self.kind.name


@dataclass(frozen=True)
class LoopSpec:
    total_iterations: int
    workload_id: str = "synthetic"

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")


@dataclass(frozen=True)
class SchedulerState:
    """Queue state: index of the next scheduling step and iterations handed out."""

    step: int = 0
    scheduled: int = 0

    def advance(self, size: int) -> "SchedulerState":
        return SchedulerState(self.step + 1, self.scheduled + size)


@dataclass(frozen=True)
class Chunk:
    """Half-open iteration range ``[start, start + size)`` claimed at ``step``."""

    start: int
    size: int
    step: int

    @property
    def end(self) -> int:
        return self.start + self.size


def _tss_parameters(technique: Technique, n: int, p: int):
    first = technique.first if technique.first is not None else _ceil_div(n, 2 * p)
    last = technique.last if technique.last is not None else 1
    first = max(first, last)
    steps = _ceil_div(2 * n, first + last)
    delta = (first - last) // (steps - 1) if steps > 1 else 0
    return first, last, delta


@lru_cache(maxsize=1024)
def _fac2_batches(n: int, p: int) -> tuple:
    # Per-batch chunk size: each batch hands out half of what remained when
    # it started, split into p equal chunks.
    sizes = []
    remaining = n
    while remaining > 0:
        size = _ceil_div(remaining, 2 * p)
        sizes.append(size)
        remaining -= min(remaining, size * p)
    return tuple(sizes)


def compute_chunk_size(technique: Technique, state: SchedulerState, n: int, p: int) -> int:
    """Size of the chunk handed out at ``state`` for a loop of ``n`` iterations.

    The result is always in ``[1, n - state.scheduled]``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if p < 1:
        raise ValueError("p must be >= 1")
    remaining = n - state.scheduled
    if remaining <= 0:
        raise LoopExhausted(f"loop of {n} iterations is exhausted")

    kind = technique.kind
    if kind is Kind.STATIC:
        size = _ceil_div(n, p)
    elif kind is Kind.SS:
        size = 1
    elif kind is Kind.GSS:
        size = _ceil_div(remaining, p)
    elif kind is Kind.TSS:
        first, last, delta = _tss_parameters(technique, n, p)
        size = max(first - state.step * delta, last)
    elif kind is Kind.FAC2:
        batches = _fac2_batches(n, p)
        batch = state.step // p
        # Past the last batch only truncation tails remain.
        size = batches[batch] if batch < len(batches) else 1
    else:  # pragma: no cover
        raise ValueError(f"unknown technique {technique!r}")
    return max(1, min(size, remaining))


def chunk_sequence_oracle(technique: Technique, n: int, p: int) -> List[int]:
    """Chunk sizes seen by a single claimant draining the loop sequentially."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    state = SchedulerState()
    sizes = []
    while state.scheduled < n:
        size = compute_chunk_size(technique, state, n, p)
        sizes.append(size)
        state = state.advance(size)
    return sizes
