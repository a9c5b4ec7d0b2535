from __future__ import annotations

from collections import defaultdict

import numpy as np
import pytest

from hetspec.pipeline import (LLM, Entry, EventKind, EventTrace, MetricError, MicroBatchPlan,
                              schedule_from_history, simulate_pipelined, simulate_serial,
                              sweep_micro_batches, throughput, tune_micro_batches)
from hetspec.model import Cluster, LlmProfile, SsmProfile

WINDOW = 5


def _cluster(tps=(100.0, 50.0), cap=8, slowdown=0.0, llm=(0.01, 0.0001)):
    return Cluster([SsmProfile(j, t, cap, slowdown) for j, t in enumerate(tps)],
                   LlmProfile(*llm), window=WINDOW)


def _schedule(slots, per_ssm, num_ssms=2, kv=64, tokens=3):
    out = []
    rid = 0
    for _ in range(slots):
        entries = []
        rid = 0
        for j in range(num_ssms):
            for _ in range(per_ssm):
                entries.append(Entry(rid, j, kv, tokens))
                rid += 1
        out.append(entries)
    return out


def _intervals(trace, resource, start, end):
    s = sorted((e.time_sec, e.slot, e.micro_batch) for e in trace.events
               if e.resource == resource and e.kind is start)
    f = sorted((e.time_sec, e.slot, e.micro_batch) for e in trace.events
               if e.resource == resource and e.kind is end)
    return [(a[0], b[0]) for a, b in zip(s, f)]


def _no_overlap(iv):
    iv = sorted(iv)
    return all(b[0] >= a[1] - 1e-12 for a, b in zip(iv, iv[1:]))


def _check_trace(trace, schedule, cluster, plan):
    for r in [LLM] + [f"ssm{j}" for j in range(len(cluster.ssms))]:
        kinds = (EventKind.VERIFY_START, EventKind.VERIFY_END) if r == LLM else \
            (EventKind.SPEC_START, EventKind.SPEC_END)
        assert _no_overlap(_intervals(trace, r, *kinds))
    spec_end = {}
    verify = {}
    for e in trace.events:
        if e.kind is EventKind.SPEC_END:
            spec_end[(e.slot, e.micro_batch, e.resource)] = e.time_sec
        elif e.kind is EventKind.VERIFY_START:
            verify.setdefault((e.slot, e.micro_batch), [None, None])[0] = e.time_sec
        elif e.kind is EventKind.VERIFY_END:
            verify.setdefault((e.slot, e.micro_batch), [None, None])[1] = e.time_sec
    for (slot, mb, _), t in spec_end.items():
        assert verify[(slot, mb)][0] >= t - 1e-12
    # each request's next round starts only after its previous round was verified
    spec_start = {(e.slot, e.micro_batch, e.resource): e.time_sec for e in trace.events
                  if e.kind is EventKind.SPEC_START}
    last_verify = {}
    for n, entries in enumerate(schedule):
        by_ssm = defaultdict(list)
        for e in entries:
            by_ssm[e.ssm_id].append(e)
        for j, group in by_ssm.items():
            for idx, chunk in enumerate(plan.split(j, group)):
                start = spec_start[(n, idx, f"ssm{j}")]
                for e in chunk:
                    if e.request_id in last_verify:
                        assert start >= last_verify[e.request_id] - 1e-12
                    last_verify[e.request_id] = verify[(n, idx)][1]


# -- serial -------------------------------------------------------------------

def test_serial_single_request_idle_equals_drafting():
    cl = _cluster((100.0,))
    trace = simulate_serial(_schedule(5, 1, 1), cl)
    assert trace.llm_idle_sec == pytest.approx(5 * WINDOW / 100.0)
    assert trace.verify_passes == 5 and trace.accepted_tokens == 15


def test_serial_waits_for_slowest_ssm():
    cl = _cluster((100.0, 50.0))
    trace = simulate_serial(_schedule(1, 1), cl)
    start = next(e for e in trace.events if e.kind is EventKind.VERIFY_START)
    assert start.time_sec == pytest.approx(0.10)
    assert trace.llm_idle_sec >= 0.05


def test_empty_schedule():
    trace = simulate_serial([], _cluster())
    assert trace.events == [] and trace.makespan == 0 and trace.accepted_tokens == 0
    with pytest.raises(MetricError):
        throughput(trace)
    assert simulate_pipelined([], _cluster(), MicroBatchPlan.uniform(2, 2)).events == []


def test_throughput_arithmetic():
    tr = EventTrace(events=[object()], accepted_tokens=100, makespan=2.0, llm_busy_sec=2.0)
    assert throughput(tr) == (50.0, 0.0)


# -- pipelined ----------------------------------------------------------------

def test_one_micro_batch_matches_serial():
    cl = _cluster((100.0, 50.0), slowdown=0.3)
    sched = _schedule(6, 3)
    serial = simulate_serial(sched, cl)
    piped = simulate_pipelined(sched, cl, MicroBatchPlan.uniform(1, 2))
    assert piped.makespan == pytest.approx(serial.makespan, abs=1e-9)
    assert piped.llm_busy_sec == pytest.approx(serial.llm_busy_sec, abs=1e-9)
    ts = sorted((e.time_sec, e.kind.value, e.resource) for e in serial.events)
    tp = sorted((e.time_sec, e.kind.value, e.resource) for e in piped.events)
    assert len(ts) == len(tp)
    assert all(abs(a[0] - b[0]) <= 1e-9 and a[1:] == b[1:] for a, b in zip(ts, tp))


def test_two_micro_batches_reduce_idle():
    cl = _cluster((100.0, 50.0), slowdown=0.8)
    sched = _schedule(10, 4)
    serial = simulate_serial(sched, cl)
    piped = simulate_pipelined(sched, cl, MicroBatchPlan.uniform(2, 2))
    assert piped.llm_idle_sec < serial.llm_idle_sec
    assert piped.accepted_tokens == serial.accepted_tokens
    _check_trace(piped, sched, cl, MicroBatchPlan.uniform(2, 2))


def test_tiny_micro_batches_with_high_overhead_hurt():
    cl = _cluster((100.0, 50.0), slowdown=0.8, llm=(0.2, 0.0001))
    sched = _schedule(5, 8)
    serial = throughput(simulate_serial(sched, cl))[0]
    tiny = throughput(simulate_pipelined(sched, cl, MicroBatchPlan.uniform(8, 2)))[0]
    assert tiny < serial


def test_invariants_randomized():
    rng = np.random.default_rng(0)
    for trial in range(30):
        m = int(rng.integers(2, 5))
        cl = _cluster(tuple(rng.uniform(40, 400, m)), slowdown=float(rng.uniform(0.3, 1.0)))
        sched = []
        n_req = int(rng.integers(2, 12))
        for _ in range(int(rng.integers(1, 8))):
            seats = rng.integers(0, m, n_req)
            sched.append([Entry(i, int(seats[i]), int(rng.integers(8, 300)), int(rng.integers(1, 6)))
                          for i in range(n_req) if rng.random() < 0.9])
        b = int(rng.integers(1, 5))
        plan = MicroBatchPlan.uniform(b, m)
        piped = simulate_pipelined(sched, cl, plan, decompose=bool(trial % 2))
        serial = simulate_serial(sched, cl, decompose=bool(trial % 2))
        _check_trace(piped, sched, cl, plan)
        assert piped.accepted_tokens == serial.accepted_tokens


def test_plan_split():
    plan = MicroBatchPlan({0: 3})
    entries = [Entry(i, 0, 10, 1) for i in range(7)]
    sizes = [len(c) for c in plan.split(0, entries)]
    assert sizes == [3, 2, 2]
    assert len(plan.split(0, entries[:2])) == 2
    with pytest.raises(ValueError):
        MicroBatchPlan({0: 0})


# -- tuning -------------------------------------------------------------------

def test_tuner_single_ssm_picks_small_b():
    cl = _cluster((100.0,), slowdown=0.8)
    plan = tune_micro_batches(_schedule(20, 4, 1), cl)
    assert plan.count(0) <= 2


def test_tuner_near_sweep_best():
    cl = _cluster((400.0, 220.0, 130.0, 80.0, 55.0), slowdown=0.8, llm=(0.012, 2e-5))
    sched = _schedule(30, 5, 5, kv=200)
    sweep = sweep_micro_batches(sched, cl, range(1, 9))
    plan = tune_micro_batches(sched, cl)
    got = throughput(simulate_pipelined(sched, cl, plan))[0]
    assert got >= 0.9 * max(sweep.values())


def test_schedule_from_history():
    class Rec:
        def __init__(self, slot, rid, ssm, ctx, tokens):
            self.slot, self.request_id, self.ssm_id = slot, rid, ssm
            self.context_len, self.tokens = ctx, tokens

    hist = [Rec(1, 0, 0, 10, 3), Rec(1, 1, None, 20, 0), Rec(2, 0, 1, 13, 2)]
    sched = schedule_from_history(hist, 4)
    assert sched == [[Entry(0, 0, 14, 3)], [Entry(0, 1, 17, 2)]]
