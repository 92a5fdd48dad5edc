import re

import pytest

from loomsched.chunking import Kind, Technique
from loomsched.runtime import ClusterConfig, Mode
from loomsched.simulator import OverheadModel, simulate
from loomsched.trace import (
    CSV_COLUMNS,
    Event,
    ExecutionTrace,
    TraceError,
    compute_metrics,
    export,
    from_json,
    to_csv,
    to_json,
    to_svg,
    validate,
    write,
)
from loomsched.workloads import SyntheticParams, generate_costs

T = Technique.parse


def _finishing_at(*ends):
    events = []
    cursor = 0
    for w, end in enumerate(ends):
        events.append(Event(w, 0, "EXECUTE", 0, end, (cursor, cursor + 1)))
        cursor += 1
    return ExecutionTrace({"n": len(ends)}, events)


def test_perfect_balance():
    m = compute_metrics(_finishing_at(100, 100, 100))
    assert m.cov == 0 and m.max_over_mean == 1
    assert m.parallel_time == 100


def test_two_workers_ratio():
    m = compute_metrics(_finishing_at(100, 300))
    assert m.max_over_mean == 1.5
    assert m.finish_times == {0: 100, 1: 300}
    assert m.cov == pytest.approx(0.5)  # pstdev 100 / mean 200


def test_overlap_names_worker_and_instant():
    trace = ExecutionTrace({"n": 2}, [
        Event(3, 0, "EXECUTE", 0, 50, (0, 1)),
        Event(3, 0, "CLAIM_LOCAL", 40, 60),
        Event(4, 0, "EXECUTE", 0, 10, (1, 2)),
    ])
    with pytest.raises(TraceError, match=r"worker 3.*40"):
        validate(trace)


def test_gap_and_duplicate_are_rejected():
    gap = ExecutionTrace({"n": 3}, [
        Event(0, 0, "EXECUTE", 0, 5, (0, 1)),
        Event(1, 0, "EXECUTE", 7, 9, (2, 3)),
    ])
    with pytest.raises(TraceError, match=r"worker 1.*gap.*at 7"):
        validate(gap)
    dup = ExecutionTrace({"n": 2}, [
        Event(0, 0, "EXECUTE", 0, 5, (0, 2)),
        Event(1, 0, "EXECUTE", 1, 9, (1, 2)),
    ])
    with pytest.raises(TraceError, match="worker 1"):
        validate(dup)
    short = ExecutionTrace({"n": 3}, [Event(0, 0, "EXECUTE", 0, 5, (0, 2))])
    with pytest.raises(TraceError, match=r"\[0,2\)"):
        validate(short)


def test_minimal_trace_has_one_execute_row():
    out = simulate(ClusterConfig(1, 1, T("ss"), T("ss")), [5])
    rows = to_csv(out.trace).decode().splitlines()
    assert rows[0] == ",".join(CSV_COLUMNS)
    assert sum(1 for r in rows[1:] if r.split(",")[2] == "EXECUTE") == 1


def _sample(mode=Mode.QUEUE):
    costs = generate_costs(SyntheticParams("exponential", 1000, 1000, seed=6), 500)
    return simulate(ClusterConfig(2, 3, T("gss"), T("fac2"), mode), costs, OverheadModel(100, 10)).trace


@pytest.mark.parametrize("fmt", ["csv", "json", "svg"])
def test_exports_are_byte_identical(fmt):
    assert export(_sample(), fmt) == export(_sample(), fmt)


def test_json_round_trip():
    trace = _sample(Mode.BARRIER)
    once = to_json(trace)
    back = from_json(once)
    assert back == trace
    assert to_json(back) == once


def test_json_schema_version_checked():
    with pytest.raises(TraceError):
        from_json(b'{"schema_version": 99, "header": {}, "events": []}')


def test_unknown_format():
    with pytest.raises(ValueError, match="csv, json, svg"):
        export(_sample(), "png")


def test_unwritable_sink(tmp_path):
    with pytest.raises(OSError, match="cannot write"):
        write(_sample(), tmp_path / "missing" / "t.csv")


def test_svg_hatched_total_equals_barrier_wait():
    inter = Technique(Kind.TSS, first=4, last=4)
    costs = [1, 1, 1, 100] * 10
    out = simulate(ClusterConfig(1, 4, inter, T("static"), Mode.BARRIER), costs)
    svg = to_svg(out.trace).decode()
    hatched = [
        int(d)
        for tag in re.findall(r"<rect [^>]*>", svg)
        if 'class="barrier_wait"' in tag
        for d in re.findall(r'data-duration="(\d+)"', tag)
    ]
    metrics = compute_metrics(out.trace)
    assert sum(hatched) == metrics.barrier_wait_time > 0
    assert all('fill="url(#hatch)"' in tag for tag in re.findall(r"<rect [^>]*>", svg)
               if 'class="barrier_wait"' in tag)


def test_queue_mode_has_no_barrier_wait():
    out = simulate(ClusterConfig(2, 2, T("static"), T("static")), [3] * 40)
    assert compute_metrics(out.trace).barrier_wait_time == 0


def test_busy_times_match_simulator():
    out = simulate(ClusterConfig(2, 3, T("tss"), T("gss")), generate_costs(
        SyntheticParams("uniform", 500, 200, seed=1), 900), OverheadModel(50, 5))
    m = compute_metrics(out.trace)
    assert [m.busy_times[w] for w in range(6)] == out.per_worker_busy
