"""Execution traces, load-balance metrics and CSV / JSON / SVG exporters.

All timestamps are integer nanoseconds from the start of the run, both for
wall-clock traces of the real backend and virtual-time traces of the
simulator.
"""

from __future__ import annotations

import bisect
import colorsys
import csv
import io
import json
import statistics
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Dict, List, Optional

SCHEMA_VERSION = 1

EVENT_KINDS = (
    "CLAIM_GLOBAL",
    "CLAIM_LOCAL",
    "REFILL",
    "EXECUTE",
    "BARRIER_WAIT",
    "IDLE",
    "EXHAUSTED",
)
OVERHEAD_KINDS = frozenset({"CLAIM_GLOBAL", "CLAIM_LOCAL", "REFILL"})
WAIT_KINDS = frozenset({"BARRIER_WAIT", "IDLE"})

CSV_COLUMNS = ("worker", "node", "kind", "start_ns", "end_ns", "range_start", "range_end")


class TraceError(ValueError):
    """A trace violates well-formedness (overlap, gap or duplicate work)."""


@dataclass(frozen=True)
class Event:
    worker: int
    node: int
    kind: str
    start: int
    end: int
    range: Optional[tuple] = None

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass
class ExecutionTrace:
    header: Dict = field(default_factory=dict)
    events: List[Event] = field(default_factory=list)

    def of_kind(self, kind: str) -> List[Event]:
        return [e for e in self.events if e.kind == kind]

    def workers(self) -> List[int]:
        return sorted({e.worker for e in self.events})

    def by_worker(self) -> Dict[int, List[Event]]:
        lanes: Dict[int, List[Event]] = {}
        for e in self.events:
            lanes.setdefault(e.worker, []).append(e)
        return lanes

    def executed_ranges(self) -> List[tuple]:
        return sorted(e.range for e in self.events if e.kind == "EXECUTE")

    def global_chunks(self) -> List[tuple]:
        """Global chunk ranges in claim order (their starts increase with step)."""
        return sorted(e.range for e in self.events if e.kind == "REFILL")

    def sort(self) -> None:
        self.events.sort(key=lambda e: (e.start, e.node, e.worker, e.end))


def merge_lanes(header: Dict, lanes: List[List[Event]]) -> ExecutionTrace:
    trace = ExecutionTrace(header, [e for lane in lanes for e in lane])
    trace.sort()
    return trace


# ---------------------------------------------------------------------------
# Validation and metrics
# ---------------------------------------------------------------------------


def validate(trace: ExecutionTrace, n: Optional[int] = None) -> None:
    """Raise :class:`TraceError` unless per-worker events are ordered and
    disjoint and EXECUTE ranges partition ``[0, n)``."""
    for worker, lane in trace.by_worker().items():
        lane = sorted(lane, key=lambda e: (e.start, e.end))
        for e in lane:
            if e.end < e.start:
                raise TraceError(f"worker {worker}: event ends before it starts at {e.start}")
        for prev, cur in zip(lane, lane[1:]):
            if cur.start < prev.end:
                raise TraceError(
                    f"worker {worker}: {cur.kind} at {cur.start} overlaps "
                    f"{prev.kind} ending at {prev.end}"
                )
    ranges = trace.executed_ranges()
    if n is None:
        n = trace.header.get("n")
    cursor = 0
    for lo, hi in ranges:
        if lo != cursor:
            owner = next(e for e in trace.events if e.kind == "EXECUTE" and e.range == (lo, hi))
            what = "overlaps" if lo < cursor else "leaves a gap before"
            raise TraceError(
                f"worker {owner.worker}: range [{lo},{hi}) {what} iteration {cursor} "
                f"at {owner.start}"
            )
        cursor = hi
    if n is not None and cursor != n:
        raise TraceError(f"executed ranges cover [0,{cursor}), expected [0,{n})")


@dataclass
class Metrics:
    parallel_time: int
    finish_times: Dict[int, int]
    busy_times: Dict[int, int]
    cov: float
    max_over_mean: float
    overhead_time: int
    barrier_wait_time: int
    idle_time: int


def compute_metrics(trace: ExecutionTrace, check: bool = True) -> Metrics:
    if check:
        validate(trace)
    if not trace.events:
        raise TraceError("empty trace")
    t0 = min(e.start for e in trace.events)
    parallel_time = max(e.end for e in trace.events) - t0
    finish: Dict[int, int] = {}
    busy: Dict[int, int] = {}
    overhead = barrier = idle = 0
    for e in trace.events:
        finish[e.worker] = max(finish.get(e.worker, 0), e.end - t0)
        if e.kind == "EXECUTE":
            busy[e.worker] = busy.get(e.worker, 0) + e.duration
        else:
            busy.setdefault(e.worker, 0)
        if e.kind in OVERHEAD_KINDS:
            overhead += e.duration
        elif e.kind == "BARRIER_WAIT":
            barrier += e.duration
        elif e.kind == "IDLE":
            idle += e.duration
    values = [finish[w] for w in sorted(finish)]
    mean = statistics.fmean(values)
    if mean > 0:
        cov = statistics.pstdev(values) / mean
        ratio = max(values) / mean
    else:
        cov, ratio = 0.0, 1.0
    return Metrics(parallel_time, finish, busy, cov, ratio, overhead, barrier, idle)


# ---------------------------------------------------------------------------
# Exporters
# ---------------------------------------------------------------------------


def to_csv(trace: ExecutionTrace) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for e in trace.events:
        lo, hi = e.range if e.range is not None else ("", "")
        writer.writerow((e.worker, e.node, e.kind, e.start, e.end, lo, hi))
    return buf.getvalue().encode()


def to_json(trace: ExecutionTrace) -> bytes:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "header": trace.header,
        "events": [
            {
                "worker": e.worker,
                "node": e.node,
                "kind": e.kind,
                "start": e.start,
                "end": e.end,
                "range": list(e.range) if e.range is not None else None,
            }
            for e in trace.events
        ],
    }
    return (json.dumps(payload, indent=1, sort_keys=True) + "\n").encode()


def from_json(data) -> ExecutionTrace:
    payload = json.loads(data)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise TraceError(f"unsupported trace schema_version {version!r}")
    events = [
        Event(
            d["worker"],
            d["node"],
            d["kind"],
            d["start"],
            d["end"],
            tuple(d["range"]) if d["range"] is not None else None,
        )
        for d in payload["events"]
    ]
    return ExecutionTrace(payload["header"], events)


_LANE = 18
_GAP = 4
_LEFT = 90
_WIDTH = 1000


def _chunk_color(chunk_id: int) -> str:
    # Golden-ratio hue walk keeps neighbouring chunks distinguishable.
    r, g, b = colorsys.hsv_to_rgb((chunk_id * 0.618033988749895) % 1.0, 0.55, 0.9)
    return "#%02x%02x%02x" % (round(r * 255), round(g * 255), round(b * 255))


def to_svg(trace: ExecutionTrace) -> bytes:
    """Gantt chart: one lane per worker, EXECUTE bars coloured by global
    chunk, waits hatched, claim overheads in grey."""
    workers = trace.workers()
    lane_of = {w: i for i, w in enumerate(workers)}
    t0 = min((e.start for e in trace.events), default=0)
    span = max((e.end for e in trace.events), default=1) - t0 or 1
    scale = (_WIDTH - _LEFT - 10) / span
    height = len(workers) * (_LANE + _GAP) + 30

    chunk_starts = [lo for lo, _ in trace.global_chunks()]

    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(_WIDTH),
            "height": str(height),
        },
    )
    defs = ET.SubElement(svg, "defs")
    pattern = ET.SubElement(
        defs,
        "pattern",
        {"id": "hatch", "width": "6", "height": "6", "patternUnits": "userSpaceOnUse",
         "patternTransform": "rotate(45)"},
    )
    ET.SubElement(pattern, "line", {"x1": "0", "y1": "0", "x2": "0", "y2": "6",
                                    "stroke": "#b03030", "stroke-width": "2"})
    for w in workers:
        y = lane_of[w] * (_LANE + _GAP) + 5
        label = ET.SubElement(svg, "text", {"x": "4", "y": str(y + _LANE - 5),
                                            "font-size": "11", "font-family": "monospace"})
        label.text = f"w{w}"

    for e in trace.events:
        if e.duration <= 0:
            continue
        y = lane_of[e.worker] * (_LANE + _GAP) + 5
        attrs = {
            "x": f"{_LEFT + (e.start - t0) * scale:.2f}",
            "y": str(y),
            "width": f"{max(e.duration * scale, 0.5):.2f}",
            "height": str(_LANE),
            "class": e.kind.lower(),
            "data-duration": str(e.duration),
        }
        if e.kind == "EXECUTE":
            chunk_id = max(bisect.bisect_right(chunk_starts, e.range[0]) - 1, 0)
            attrs["fill"] = _chunk_color(chunk_id)
            attrs["data-chunk"] = str(chunk_id)
        elif e.kind in WAIT_KINDS:
            attrs["fill"] = "url(#hatch)"
        else:
            attrs["fill"] = "#888888"
        rect = ET.SubElement(svg, "rect", attrs)
        title = ET.SubElement(rect, "title")
        title.text = f"{e.kind} [{e.start},{e.end})" + (
            f" iterations [{e.range[0]},{e.range[1]})" if e.range else ""
        )

    axis = ET.SubElement(svg, "text", {"x": str(_LEFT), "y": str(height - 6),
                                       "font-size": "11", "font-family": "monospace"})
    axis.text = f"0 .. {span} {trace.header.get('clock_unit', 'ns')}"
    return ET.tostring(svg, encoding="utf-8", xml_declaration=True) + b"\n"


EXPORTERS = {"csv": to_csv, "json": to_json, "svg": to_svg}


def export(trace: ExecutionTrace, fmt: str) -> bytes:
    try:
        return EXPORTERS[fmt.lower()](trace)
    except KeyError:
        raise ValueError(f"unknown export format {fmt!r}; accepted: csv, json, svg") from None


def write(trace: ExecutionTrace, path, fmt: Optional[str] = None) -> None:
    from pathlib import Path

    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    data = export(trace, fmt)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc.strerror}") from exc
