import random

import pytest

from loomsched.chunking import TECHNIQUE_NAMES, Kind, Technique, chunk_sequence_oracle
from loomsched.runtime import ClusterConfig, Mode
from loomsched.simulator import (
    OverheadModel,
    rows_to_csv,
    simulate,
    summary_rows,
    sweep,
)
from loomsched.trace import compute_metrics, validate
from loomsched.workloads import SyntheticParams, generate_costs
from loomsched.workqueue import LockModel

T = Technique.parse


def cfg(inter, intra, nodes, workers, mode=Mode.QUEUE):
    inter = inter if isinstance(inter, Technique) else T(inter)
    return ClusterConfig(nodes, workers, inter, T(intra), mode)


def test_static_static_unit_costs():
    out = simulate(cfg("static", "static", 2, 2), [1] * 8)
    assert out.makespan == 2
    assert compute_metrics(out.trace).barrier_wait_time == 0


def test_length_mismatch_is_rejected():
    with pytest.raises(ValueError, match="7"):
        simulate(cfg("gss", "ss", 1, 2), [1] * 7, n=8)
    with pytest.raises(ValueError):
        simulate(cfg("gss", "ss", 1, 2), [1, -1])


def test_gss_global_chunks_follow_oracle():
    out = simulate(cfg("gss", "static", 4, 4), [10] * 100)
    sizes = [hi - lo for lo, hi in out.trace.global_chunks()]
    assert sizes == chunk_sequence_oracle(T("gss"), 100, 4)


@pytest.mark.parametrize("inter", ["static", "gss", "tss", "fac2", "ss"])
@pytest.mark.parametrize("intra", ["static", "gss", "tss", "fac2", "ss"])
def test_subchunks_follow_intra_oracle(inter, intra):
    n, workers = 300, 3
    costs = generate_costs(SyntheticParams("exponential", 50, 50, seed=5), n)
    out = simulate(cfg(inter, intra, 1, workers), costs, OverheadModel(7, 3))
    validate(out.trace, n)
    chunks = out.trace.global_chunks()
    assert [hi - lo for lo, hi in chunks] == chunk_sequence_oracle(T(inter), n, 1)
    executed = out.trace.executed_ranges()
    for lo, hi in chunks:
        subs = [b - a for a, b in executed if lo <= a < hi]
        assert subs == chunk_sequence_oracle(T(intra), hi - lo, workers)


def test_accounting_identity():
    costs = generate_costs(SyntheticParams("gaussian", 1000, 300, seed=2), 2000)
    ov = OverheadModel(100, 20, LockModel(5, 10))
    for mode in Mode:
        out = simulate(cfg("fac2", "gss", 2, 4, mode), costs, ov)
        assert sum(out.per_worker_busy) == sum(costs)
        for b, i, o in zip(out.per_worker_busy, out.per_worker_idle, out.per_worker_overhead):
            assert i >= 0 and b + i + o == out.makespan
        metrics = compute_metrics(out.trace)
        assert metrics.parallel_time == out.makespan
        assert metrics.overhead_time == out.total_overhead


def test_deterministic():
    costs = generate_costs(SyntheticParams("exponential", 1000, 1000, seed=9), 3000)
    ov = OverheadModel(100, 10, LockModel(20, 5))
    a = simulate(cfg("tss", "ss", 3, 5), costs, ov, seed=9)
    b = simulate(cfg("tss", "ss", 3, 5), costs, ov, seed=9)
    assert a.trace == b.trace and a.makespan == b.makespan


def test_lock_model_bound_for_ss():
    # Work conservation: all work plus all claim overhead is spread over 16
    # workers, so makespan >= (serial + N * granted) / 16.
    n, granted = 1000, 200
    costs = generate_costs(SyntheticParams("exponential", 1000, 1000, seed=3), n)
    ov = OverheadModel(0, 0, LockModel(50, granted))
    out = simulate(cfg("static", "ss", 1, 16), costs, ov)
    assert out.total_overhead >= n * granted
    assert out.makespan * 16 >= sum(costs) + n * granted


def test_ss_loses_to_gss_once_attempts_are_expensive():
    n = 20_000
    costs = sorted(generate_costs(SyntheticParams("exponential", 1000, 1000, seed=1), n), reverse=True)
    makespans = {}
    for attempt in (0, 2000):
        ov = OverheadModel(100, 0, LockModel(attempt, 10))
        makespans[attempt] = {
            intra: simulate(cfg("static", intra, 1, 16), costs, ov).makespan for intra in ("ss", "gss")
        }
    assert makespans[0]["ss"] < makespans[0]["gss"]
    assert makespans[2000]["ss"] > makespans[2000]["gss"]


def _random_instance(seed):
    r = random.Random(seed)
    nodes, workers, n = r.randint(1, 4), r.randint(1, 8), r.randint(1, 2000)
    inter, intra = r.choice(TECHNIQUE_NAMES), r.choice(TECHNIQUE_NAMES)
    dist = r.choice(["exponential", "gaussian", "uniform"])
    costs = generate_costs(SyntheticParams(dist, 1000, r.choice([0, 300, 1000]), seed), n)
    ov = OverheadModel(r.choice([0, 100]), r.choice([0, 50]))
    return nodes, workers, inter, intra, costs, ov


@pytest.mark.parametrize("seed", range(40))
def test_queue_never_slower_than_barrier(seed):
    nodes, workers, inter, intra, costs, ov = _random_instance(seed)
    q = simulate(cfg(inter, intra, nodes, workers, Mode.QUEUE), costs, ov)
    b = simulate(cfg(inter, intra, nodes, workers, Mode.BARRIER), costs, ov)
    assert q.makespan <= b.makespan


def test_pathological_barrier_gap():
    # Constant global chunks of 4 on one node of 4 workers; STATIC intra gives
    # each worker one iteration and the last one is 100x more expensive.
    k = 20
    costs = [1, 1, 1, 100] * k
    inter = Technique(Kind.TSS, first=4, last=4)
    q = simulate(cfg(inter, "static", 1, 4, Mode.QUEUE), costs)
    b = simulate(cfg(inter, "static", 1, 4, Mode.BARRIER), costs)
    assert b.makespan == 100 * k
    # Greedy list scheduling bound for QUEUE: total/W + max.
    assert q.makespan <= sum(costs) / 4 + 100
    assert q.makespan <= 0.8 * b.makespan
    # All but one worker sit at the barrier while the expensive iteration runs.
    barrier = compute_metrics(b.trace).barrier_wait_time
    assert barrier >= 3 * 99 * k
    assert compute_metrics(q.trace).barrier_wait_time == 0


@pytest.mark.parametrize("intra", ["static", "ss", "gss", "tss", "fac2"])
@pytest.mark.parametrize("nodes", [1, 2, 4])
def test_static_inter_needs_one_barrier(intra, nodes):
    costs = generate_costs(SyntheticParams("exponential", 1000, 1000, seed=nodes), 4000)
    q = simulate(cfg("static", intra, nodes, 4, Mode.QUEUE), costs)
    b = simulate(cfg("static", intra, nodes, 4, Mode.BARRIER), costs)
    assert b.barriers_per_node == [1] * nodes
    assert q.makespan == b.makespan


def test_ss_intra_modes_converge():
    costs = generate_costs(SyntheticParams("exponential", 1000, 1000, seed=4), 4000)
    gap = {}
    for intra in ("static", "ss"):
        q = simulate(cfg("gss", intra, 2, 8, Mode.QUEUE), costs).makespan
        b = simulate(cfg("gss", intra, 2, 8, Mode.BARRIER), costs).makespan
        gap[intra] = b - q
    assert 0 <= gap["ss"] < gap["static"]


def _sweep_configs(sizes, workers=4, mode=Mode.QUEUE):
    return [
        cfg(x, y, k, workers, mode)
        for k in sizes
        for x in ("static", "gss", "tss", "fac2")
        for y in ("static", "ss", "gss", "tss", "fac2")
    ]


def test_sweep_rows_respect_lower_bound():
    costs = generate_costs(SyntheticParams("gaussian", 1000, 300, seed=11), 3000)
    configs = _sweep_configs([2, 4, 8, 16])
    table = sweep(configs, costs, OverheadModel(100, 10))
    rows = summary_rows(table, configs)
    assert len(rows) == 80
    for row in rows:
        assert row["makespan_ns"] * row["nodes"] * row["workers_per_node"] >= sum(costs)
        assert row["makespan_ns"] >= row["lower_bound_ns"]


def test_sweep_is_byte_reproducible():
    costs = generate_costs(SyntheticParams("exponential", 1000, 1000, seed=12), 1500)
    configs = _sweep_configs([2, 4])
    first = rows_to_csv(summary_rows(sweep(configs, costs, OverheadModel(100)), configs))
    second = rows_to_csv(summary_rows(sweep(configs, costs, OverheadModel(100)), configs))
    assert first == second


def test_sweep_rejects_duplicates():
    configs = [cfg("gss", "ss", 2, 2), cfg("gss", "ss", 2, 2)]
    with pytest.raises(ValueError, match="duplicate"):
        sweep(configs, [1] * 10)
