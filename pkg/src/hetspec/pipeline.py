"""Discrete-event simulation of speculation/verification on SSMs and one verifier.

Serial mode: every slot, all SSMs draft their whole batch in parallel and the
verifier runs one pass over the combined batch once the slowest SSM is done.

Pipelined mode: each SSM's batch is cut into micro-batches that it drafts back
to back. Micro-batch ``m`` of every SSM forms verification wave ``m``; the
verifier runs waves one at a time in order, each as soon as all its members
have finished drafting. While the verifier checks wave ``m``, SSMs keep
drafting later micro-batches. A request never starts its next round before its
previous round was verified. With one micro-batch per SSM this reduces to the
serial schedule.
"""
from __future__ import annotations

import enum
import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import Cluster, speculation_time, verification_time
from .packing import verify_cost

LLM = "llm"


class MetricError(ValueError):
    pass


class EventKind(str, enum.Enum):
    SPEC_START = "SpecStart"
    SPEC_END = "SpecEnd"
    VERIFY_START = "VerifyStart"
    VERIFY_END = "VerifyEnd"


@dataclass(frozen=True)
class Entry:
    """One request's round within a slot."""

    request_id: int
    ssm_id: int
    kv_len: int
    tokens: int


# a schedule lists, per slot, the requests that run and on which SSM
Schedule = List[List[Entry]]


@dataclass(frozen=True)
class Event:
    time_sec: float
    kind: EventKind
    resource: str
    micro_batch: int
    slot: int


@dataclass
class EventTrace:
    events: List[Event] = field(default_factory=list)
    llm_busy_sec: float = 0.0
    accepted_tokens: int = 0
    makespan: float = 0.0
    verify_passes: int = 0
    kv_tokens: int = 0
    padding_tokens: int = 0
    extra_query_tokens: int = 0

    @property
    def llm_idle_sec(self) -> float:
        return self.makespan - self.llm_busy_sec

    def summary(self) -> dict:
        return {
            "makespan": self.makespan,
            "llm_busy_sec": self.llm_busy_sec,
            "llm_idle_sec": self.llm_idle_sec,
            "accepted_tokens": self.accepted_tokens,
            "verify_passes": self.verify_passes,
            "kv_tokens": self.kv_tokens,
            "padding_tokens": self.padding_tokens,
            "extra_query_tokens": self.extra_query_tokens,
        }


@dataclass
class MicroBatchPlan:
    """Micro-batch count per SSM; counts above a batch's size are capped to it."""

    counts: Dict[int, int]

    def __post_init__(self):
        if any(b < 1 for b in self.counts.values()):
            raise ValueError("micro-batch counts must be >= 1")

    @classmethod
    def uniform(cls, b: int, num_ssms: int) -> "MicroBatchPlan":
        return cls({j: b for j in range(num_ssms)})

    def count(self, ssm_id: int) -> int:
        return self.counts.get(ssm_id, 1)

    def split(self, ssm_id: int, entries: Sequence[Entry]) -> List[List[Entry]]:
        """Near-equal split in request-id order; earlier micro-batches take the remainder."""
        items = sorted(entries, key=lambda e: e.request_id)
        n = len(items)
        if n == 0:
            return []
        b = min(self.count(ssm_id), n)
        base, extra = divmod(n, b)
        out, pos = [], 0
        for m in range(b):
            size = base + (1 if m < extra else 0)
            out.append(items[pos:pos + size])
            pos += size
        return out


def _by_ssm(entries: Sequence[Entry]) -> Dict[int, List[Entry]]:
    out: Dict[int, List[Entry]] = {}
    for e in entries:
        out.setdefault(e.ssm_id, []).append(e)
    return dict(sorted(out.items()))


def _verify(trace: EventTrace, cluster: Cluster, entries: Sequence[Entry],
            decompose: bool, width: Optional[int]) -> float:
    cost = verify_cost([e.kv_len for e in entries], cluster.window, decompose, width)
    trace.kv_tokens += cost.kv_tokens
    trace.padding_tokens += cost.padding_tokens
    trace.extra_query_tokens += cost.extra_query_tokens
    trace.verify_passes += 1
    trace.accepted_tokens += sum(e.tokens for e in entries)
    return verification_time(cluster.llm, cost.total_tokens)


def simulate_serial(schedule: Schedule, cluster: Cluster, decompose: bool = False,
                    width: Optional[int] = None) -> EventTrace:
    trace = EventTrace()
    now = 0.0
    for n, entries in enumerate(schedule):
        if not entries:
            continue
        finish = now
        for j, group in _by_ssm(entries).items():
            dt = speculation_time(cluster.ssms[j], len(group), cluster.window)
            trace.events.append(Event(now, EventKind.SPEC_START, f"ssm{j}", 0, n))
            trace.events.append(Event(now + dt, EventKind.SPEC_END, f"ssm{j}", 0, n))
            finish = max(finish, now + dt)
        dv = _verify(trace, cluster, entries, decompose, width)
        trace.events.append(Event(finish, EventKind.VERIFY_START, LLM, 0, n))
        trace.events.append(Event(finish + dv, EventKind.VERIFY_END, LLM, 0, n))
        trace.llm_busy_sec += dv
        now = finish + dv
    trace.makespan = now
    trace.events.sort(key=lambda e: (e.time_sec, _KIND_ORDER[e.kind]))
    return trace


_KIND_ORDER = {EventKind.VERIFY_END: 0, EventKind.SPEC_END: 1,
               EventKind.SPEC_START: 2, EventKind.VERIFY_START: 3}


@dataclass
class _MicroBatch:
    slot: int
    index: int
    ssm_id: int
    entries: List[Entry]


class _Engine:
    """Priority-queue event loop for the pipelined mode."""

    def __init__(self, schedule: Schedule, cluster: Cluster, plan: MicroBatchPlan,
                 decompose: bool, width: Optional[int]):
        self.cluster = cluster
        self.decompose = decompose
        self.width = width
        self.trace = EventTrace()
        self.heap: List[Tuple[float, int, int, str, object]] = []
        self.seq = itertools.count()
        m = len(cluster.ssms)
        self.ssm_queue: List[deque] = [deque() for _ in range(m)]
        self.ssm_busy = [False] * m
        self.waves: deque = deque()  # (slot, index, members, remaining)
        self.wave_left: Dict[Tuple[int, int], int] = {}
        self.wave_members: Dict[Tuple[int, int], List[_MicroBatch]] = {}
        self.pending: Dict[int, bool] = {}
        # slots in which each request still has a round to run, in order
        self.rounds_left: Dict[int, deque] = {}
        self.llm_busy = False
        for n, entries in enumerate(schedule):
            for e in entries:
                self.rounds_left.setdefault(e.request_id, deque()).append(n)
            for j, group in _by_ssm(entries).items():
                for idx, chunk in enumerate(plan.split(j, group)):
                    mb = _MicroBatch(n, idx, j, chunk)
                    self.ssm_queue[j].append(mb)
                    key = (n, idx)
                    if key not in self.wave_members:
                        self.wave_members[key] = []
                        self.wave_left[key] = 0
                    self.wave_members[key].append(mb)
                    self.wave_left[key] += 1
        self.waves = deque(sorted(self.wave_members))

    def push(self, t: float, kind: str, payload) -> None:
        # priority: time, then verification completions before drafting completions
        prio = 0 if kind == "verify_end" else 1
        heapq.heappush(self.heap, (t, prio, next(self.seq), kind, payload))

    def try_ssm(self, j: int, now: float) -> None:
        if self.ssm_busy[j] or not self.ssm_queue[j]:
            return
        mb = self.ssm_queue[j][0]
        for e in mb.entries:
            if self.pending.get(e.request_id, False) or self.rounds_left[e.request_id][0] != mb.slot:
                return
        self.ssm_queue[j].popleft()
        for e in mb.entries:
            self.pending[e.request_id] = True
        self.ssm_busy[j] = True
        dt = speculation_time(self.cluster.ssms[j], len(mb.entries), self.cluster.window)
        self.trace.events.append(Event(now, EventKind.SPEC_START, f"ssm{j}", mb.index, mb.slot))
        self.push(now + dt, "spec_end", mb)

    def try_llm(self, now: float) -> None:
        if self.llm_busy or not self.waves:
            return
        key = self.waves[0]
        if self.wave_left[key]:
            return
        self.waves.popleft()
        entries = [e for mb in self.wave_members[key] for e in mb.entries]
        dv = _verify(self.trace, self.cluster, entries, self.decompose, self.width)
        self.llm_busy = True
        self.trace.llm_busy_sec += dv
        self.trace.events.append(Event(now, EventKind.VERIFY_START, LLM, key[1], key[0]))
        self.push(now + dv, "verify_end", key)

    def run(self) -> EventTrace:
        for j in range(len(self.ssm_queue)):
            self.try_ssm(j, 0.0)
        now = 0.0
        while self.heap:
            now, _, _, kind, payload = heapq.heappop(self.heap)
            if kind == "spec_end":
                mb = payload
                self.ssm_busy[mb.ssm_id] = False
                self.trace.events.append(
                    Event(now, EventKind.SPEC_END, f"ssm{mb.ssm_id}", mb.index, mb.slot))
                self.wave_left[(mb.slot, mb.index)] -= 1
                self.try_llm(now)
                self.try_ssm(mb.ssm_id, now)
            else:
                key = payload
                self.llm_busy = False
                self.trace.events.append(Event(now, EventKind.VERIFY_END, LLM, key[1], key[0]))
                self.trace.makespan = now
                for mb in self.wave_members[key]:
                    for e in mb.entries:
                        self.pending[e.request_id] = False
                        self.rounds_left[e.request_id].popleft()
                self.try_llm(now)
                for j in range(len(self.ssm_queue)):
                    self.try_ssm(j, now)
        if self.waves or any(self.ssm_queue):
            raise RuntimeError("pipeline simulation stalled with work left")
        return self.trace


def simulate_pipelined(schedule: Schedule, cluster: Cluster, plan: MicroBatchPlan,
                       decompose: bool = False, width: Optional[int] = None) -> EventTrace:
    return _Engine(schedule, cluster, plan, decompose, width).run()


def throughput(trace: EventTrace) -> Tuple[float, float]:
    """Tokens per second over the makespan, and the verifier's idle fraction."""
    if not trace.events or trace.makespan <= 0:
        raise MetricError("throughput of an empty trace is undefined")
    return trace.accepted_tokens / trace.makespan, trace.llm_idle_sec / trace.makespan


def sweep_micro_batches(schedule: Schedule, cluster: Cluster, counts: Sequence[int],
                        decompose: bool = False) -> Dict[int, float]:
    out = {}
    for b in counts:
        trace = simulate_pipelined(schedule, cluster, MicroBatchPlan.uniform(b, len(cluster.ssms)),
                                   decompose)
        out[b] = throughput(trace)[0]
    return out


def tune_micro_batches(schedule: Schedule, cluster: Cluster, decompose: bool = False,
                       b0: int = 2, threshold: float = 0.05, probe_slots: int = 20,
                       max_b: int = 8) -> MicroBatchPlan:
    """Grow the micro-batch count from ``b0`` until throughput drops noticeably.

    Each candidate is scored on a short probe (the first ``probe_slots``
    slots). A candidate counts as degraded when its throughput falls more
    than ``threshold`` below the best seen so far (starting from the
    unsplit batch); the last non-degraded count is returned.
    """
    probe = [s for s in schedule[:probe_slots]]
    m = len(cluster.ssms)
    if not any(probe):
        return MicroBatchPlan.uniform(1, m)

    def score(b: int) -> float:
        return throughput(simulate_pipelined(probe, cluster, MicroBatchPlan.uniform(b, m),
                                             decompose))[0]

    best = score(1)
    chosen = 1
    for b in range(b0, max_b + 1):
        tp = score(b)
        if tp < (1.0 - threshold) * best:
            break
        chosen = b
        best = max(best, tp)
    return MicroBatchPlan.uniform(chosen, m)


def schedule_from_history(history, window: int) -> Schedule:
    """Turn selector slot records into an engine schedule (idle requests dropped)."""
    slots: Dict[int, List[Entry]] = {}
    for rec in history:
        if rec.ssm_id is None:
            slots.setdefault(rec.slot, [])
            continue
        slots.setdefault(rec.slot, []).append(
            Entry(rec.request_id, rec.ssm_id, rec.context_len + window, rec.tokens))
    return [slots[t] for t in sorted(slots)]
