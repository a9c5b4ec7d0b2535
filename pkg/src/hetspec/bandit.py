"""Learning-based SSM selection: epoch-structured explore/exploit with regret tracking.

Time is divided into slots; one slot is one speculation+verification round
for every active request. Each epoch ``k`` runs ``alpha`` exploration slots,
grouped into chunks of ``beta`` slots during which a request keeps its
randomly drawn SSM, followed by ``min(2**k, remaining)`` exploitation slots on
the max-weight matching of the estimated goodputs.

Baseline selectors (epsilon-greedy and prompt-length greedy) run on the same
slot machinery so their histories are directly comparable.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from .matching import MatchingInstance, clamp_infinite, solve_max_weight_matching
from .model import (Cluster, ConfigError, OutcomeSource, Request, RequestState,
                    SsmProfile, expected_goodput, round_time)

EXPLORE = "explore"
EXPLOIT = "exploit"


@dataclass(frozen=True)
class BanditConfig:
    alpha: int = 8
    beta: int = 2
    lam: float = 1.0
    max_slots: int = 2000
    fast_switch: bool = True

    def __post_init__(self):
        if self.alpha < 1 or self.beta < 1:
            raise ConfigError("alpha and beta must be >= 1")
        if self.alpha % self.beta:
            raise ConfigError(f"chunk size beta={self.beta} must divide alpha={self.alpha}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.max_slots < 1:
            raise ConfigError("max_slots must be >= 1")


@dataclass
class BanditState:
    num_ssms: int
    epoch: int = 1
    sums: Dict[int, np.ndarray] = field(default_factory=dict)
    counts: Dict[int, np.ndarray] = field(default_factory=dict)
    assignment: Dict[int, Optional[int]] = field(default_factory=dict)
    prewarmed: Dict[int, Optional[int]] = field(default_factory=dict)

    def observe(self, request_id: int, ssm_id: int, goodput: float) -> None:
        if request_id not in self.sums:
            self.sums[request_id] = np.zeros(self.num_ssms)
            self.counts[request_id] = np.zeros(self.num_ssms, dtype=np.int64)
        self.sums[request_id][ssm_id] += goodput
        self.counts[request_id][ssm_id] += 1

    def estimates(self, request_id: int) -> np.ndarray:
        """Mean observed goodput per SSM; +inf where nothing was observed yet."""
        if request_id not in self.sums:
            return np.full(self.num_ssms, np.inf)
        c = self.counts[request_id]
        est = np.full(self.num_ssms, np.inf)
        seen = c > 0
        est[seen] = self.sums[request_id][seen] / c[seen]
        return est

    def estimate_matrix(self, request_ids: Sequence[int]) -> np.ndarray:
        if not request_ids:
            return np.zeros((0, self.num_ssms))
        return np.vstack([self.estimates(r) for r in request_ids])


@dataclass
class RegretLedger:
    lam: float
    goodput_regret: float = 0.0          # expected-reward form, monotone
    realized_goodput_regret: float = 0.0  # same with realized rewards
    switching_cost: float = 0.0
    curve_t: List[int] = field(default_factory=list)
    curve_goodput: List[float] = field(default_factory=list)
    curve_switching: List[float] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.goodput_regret + self.lam * self.switching_cost

    @property
    def realized_total(self) -> float:
        return self.realized_goodput_regret + self.lam * self.switching_cost

    def add_slot(self, t: int, expected_gap: float, realized_gap: float, switching: float) -> None:
        if expected_gap < -1e-9 or switching < 0:
            raise ValueError("per-slot expected regret and switching cost must be >= 0")
        self.goodput_regret += max(float(expected_gap), 0.0)
        self.realized_goodput_regret += float(realized_gap)
        self.switching_cost += float(switching)
        self.curve_t.append(t)
        self.curve_goodput.append(self.goodput_regret)
        self.curve_switching.append(self.switching_cost)

    def total_at(self, t: int) -> float:
        """R(t) after slot t (1-based)."""
        i = t - 1
        return self.curve_goodput[i] + self.lam * self.curve_switching[i]


@dataclass
class SlotRecord:
    slot: int
    request_id: int
    ssm_id: Optional[int]
    phase: str
    round_idx: int
    context_len: int
    accepted: int
    tokens: int
    wall_time: float
    goodput: float
    switched: bool
    cost: float


@dataclass
class SlotPlan:
    assignment: Dict[int, Optional[int]]
    phase: str
    epoch: int = 0
    learn: bool = False
    learn_ids: FrozenSet[int] = frozenset()


def exploitation_duration(k: int, remaining: Optional[int] = None) -> int:
    if k < 1:
        raise ValueError("epoch index k must be >= 1")
    d = 2 ** k
    return d if remaining is None else max(0, min(d, remaining))


def epoch_schedule(config: BanditConfig) -> List[Tuple[str, int, int]]:
    """Phase of every slot: ``(phase, epoch, chunk)``; chunk is -1 when exploiting."""
    out: List[Tuple[str, int, int]] = []
    T = config.max_slots
    k = 1
    while len(out) < T:
        for c in range(config.alpha // config.beta):
            for _ in range(config.beta):
                if len(out) < T:
                    out.append((EXPLORE, k, c))
        for _ in range(exploitation_duration(k, T - len(out))):
            out.append((EXPLOIT, k, -1))
        k += 1
    return out


def switching_cost(request: Request, from_ssm: Optional[int], to_ssm: SsmProfile,
                   prewarmed: Optional[int]) -> float:
    """KV recompute cost of moving ``request`` onto ``to_ssm`` (zero if it stays or was prewarmed)."""
    if from_ssm is None or from_ssm == to_ssm.id:
        return 0.0
    if prewarmed == to_ssm.id:
        return 0.0
    return request.context_len / to_ssm.tokens_per_sec


def prewarm_destination(state: BanditState, request_ids: Sequence[int],
                        next_draw: Optional[Dict[int, Optional[int]]] = None) -> Dict[int, Optional[int]]:
    """Destination SSM whose KV cache is rebuilt ahead of a possible switch.

    During exploration the next chunk's draw is already known and is used as
    is; otherwise the SSM with the highest estimate (lowest id on ties) is
    chosen. Unobserved SSMs count as +inf.
    """
    out: Dict[int, Optional[int]] = {}
    for rid in request_ids:
        if next_draw is not None and rid in next_draw:
            out[rid] = next_draw[rid]
        else:
            est = state.estimates(rid)
            out[rid] = int(np.argmax(est))  # argmax returns the first maximum
    return out


def draw_exploration_assignment(request_ids: Sequence[int], capacities: Sequence[int],
                                rng: np.random.Generator,
                                occupied: Optional[Sequence[int]] = None) -> Dict[int, Optional[int]]:
    """Random SSM per request, then random drops on overfull SSMs and redraws.

    Dropped requests are redrawn uniformly among SSMs with spare capacity and
    idle (``None``) when none is left.
    """
    m = len(capacities)
    caps = list(capacities)
    if occupied is not None:
        caps = [c - o for c, o in zip(caps, occupied)]
    if sum(max(c, 0) for c in capacities) == 0:
        raise ConfigError("total SSM capacity is zero")
    draw = {rid: int(rng.integers(m)) for rid in request_ids}
    out: Dict[int, Optional[int]] = {}
    dropped: List[int] = []
    for j in range(m):
        members = [rid for rid in request_ids if draw[rid] == j]
        room = max(caps[j], 0)
        if len(members) > room:
            keep_idx = rng.choice(len(members), size=room, replace=False)
            keep = {members[i] for i in keep_idx}
        else:
            keep = set(members)
        for rid in members:
            if rid in keep:
                out[rid] = j
            else:
                dropped.append(rid)
    used = [0] * m
    for rid, j in out.items():
        used[j] += 1
    for rid in sorted(dropped):
        spare = [j for j in range(m) if used[j] < caps[j]]
        if not spare:
            out[rid] = None
            continue
        j = spare[int(rng.integers(len(spare)))]
        out[rid] = j
        used[j] += 1
    return {rid: out[rid] for rid in request_ids}


def plan_exploitation(state: BanditState, request_ids: Sequence[int],
                      ssm_profiles: Sequence[SsmProfile]) -> Dict[int, Optional[int]]:
    """Max-weight capacity-feasible assignment on the current estimates."""
    if not request_ids:
        return {}
    w = clamp_infinite(state.estimate_matrix(request_ids))
    result = solve_max_weight_matching(
        MatchingInstance(w, [s.batch_capacity for s in ssm_profiles]))
    return {rid: result.assignment[a] for a, rid in enumerate(request_ids)}


class SelectionSim:
    """Slot-level environment shared by all selectors.

    Keeps the active set (continuous batching from a waiting pool), draws
    acceptance outcomes, scores each request's round with its own round time
    and tracks the regret ledger against the ground-truth optimum.
    """

    def __init__(self, requests: Sequence[Request], cluster: Cluster, lam: float = 1.0,
                 seed: int = 0, max_active: Optional[int] = None, fast_switch: bool = True):
        self.cluster = cluster
        self.requests: Dict[int, Request] = {r.id: r for r in requests}
        self.waiting = deque(sorted(self.requests))
        self.active: List[int] = []
        cap = sum(cluster.capacities)
        self.max_active = cap if max_active is None else min(max_active, cap)
        self.outcomes = OutcomeSource(seed, cluster.window, cluster.bonus)
        self.rng = np.random.default_rng([int(seed), 0xB4D])
        self.state = BanditState(num_ssms=len(cluster.ssms))
        self.ledger = RegretLedger(lam)
        self.history: List[SlotRecord] = []
        self.t = 0
        self.rounds: Dict[int, int] = {rid: 0 for rid in self.requests}
        self.fast_switch = fast_switch
        self._round_time = [round_time(s, cluster.llm, cluster.window) for s in cluster.ssms]
        self._truth = {rid: np.array([expected_goodput(r, s, cluster.llm, cluster.window,
                                                       cluster.bonus) for s in cluster.ssms])
                       for rid, r in self.requests.items()}
        self._opt_cache: Dict[Tuple[int, ...], float] = {}
        self.slot_phase: List[str] = []
        self.slot_epoch: List[int] = []
        self.admit()

    # -- population -------------------------------------------------------
    def admit(self) -> List[int]:
        self.active = [rid for rid in self.active if not self.requests[rid].finished]
        new = []
        while self.waiting and len(self.active) < self.max_active:
            rid = self.waiting.popleft()
            self.active.append(rid)
            new.append(rid)
        return new

    @property
    def done(self) -> bool:
        return not self.active

    def truth(self, rid: int) -> np.ndarray:
        return self._truth[rid]

    def optimal_total(self, ids: Sequence[int]) -> float:
        key = tuple(sorted(ids))
        if key not in self._opt_cache:
            if not key:
                self._opt_cache[key] = 0.0
            else:
                w = np.vstack([self._truth[r] for r in key])
                self._opt_cache[key] = solve_max_weight_matching(
                    MatchingInstance(w, self.cluster.capacities)).total_weight
        return self._opt_cache[key]

    # -- one slot ---------------------------------------------------------
    def run_slot(self, plan: SlotPlan, prewarm: Optional[Dict[int, Optional[int]]] = None
                 ) -> List[SlotRecord]:
        self.t += 1
        counts = [0] * len(self.cluster.ssms)
        for rid in self.active:
            j = plan.assignment.get(rid)
            if j is not None:
                counts[j] += 1
        for j, c in enumerate(counts):
            if c > self.cluster.capacities[j]:
                raise ValueError(f"slot {self.t}: ssm {j} over capacity ({c})")
        prewarm = prewarm or {}
        records = []
        exp_total = 0.0
        real_total = 0.0
        switch_total = 0.0
        for rid in self.active:
            req = self.requests[rid]
            j = plan.assignment.get(rid)
            if j is None:
                records.append(SlotRecord(self.t, rid, None, plan.phase, -1, req.context_len,
                                          0, 0, 0.0, 0.0, False, 0.0))
                continue
            prev = req.ssm_id
            pw = prewarm.get(rid) if self.fast_switch else None
            cost = switching_cost(req, prev, self.cluster.ssms[j], pw)
            switched = prev is not None and prev != j
            n = self.rounds[rid]
            context = req.context_len
            acc = self.outcomes.accepted(req, j, n)
            tokens = acc + (1 if self.cluster.bonus else 0)
            wall = self._round_time[j]
            r = tokens / wall
            req.activate(j)
            req.advance(tokens)
            self.rounds[rid] = n + 1
            if plan.learn or rid in plan.learn_ids:
                self.state.observe(rid, j, r)
            self.state.assignment[rid] = j
            exp_total += self._truth[rid][j]
            real_total += r
            switch_total += cost
            records.append(SlotRecord(self.t, rid, j, plan.phase, n, context, acc, tokens,
                                      wall, r, switched, cost))
        opt = self.optimal_total(self.active)
        self.ledger.add_slot(self.t, opt - exp_total, opt - real_total, switch_total)
        self.history.extend(records)
        self.slot_phase.append(plan.phase)
        self.slot_epoch.append(plan.epoch)
        self.admit()
        return records

    # -- metrics ----------------------------------------------------------
    def slot_goodputs(self) -> np.ndarray:
        """Aggregate goodput (sum over requests) per slot."""
        out = np.zeros(self.t)
        for rec in self.history:
            out[rec.slot - 1] += rec.goodput
        return out

    def mean_goodput(self) -> float:
        g = self.slot_goodputs()
        return float(g.mean()) if g.size else 0.0


def run_exploration_epoch(sim: SelectionSim, config: BanditConfig,
                          remaining: Optional[int] = None) -> BanditState:
    """Run one exploration stage (``alpha`` slots in ``alpha/beta`` chunks) on ``sim``."""
    if sum(sim.cluster.capacities) == 0:
        raise ConfigError("total SSM capacity is zero")
    budget = config.alpha if remaining is None else min(config.alpha, remaining)
    used = 0
    epoch = sim.state.epoch
    nxt = draw_exploration_assignment(sim.active, sim.cluster.capacities, sim.rng)
    for _ in range(config.alpha // config.beta):
        if used >= budget or sim.done:
            break
        plan_map = nxt
        prewarm = prewarm_destination(sim.state, sim.active, plan_map)
        for s in range(config.beta):
            if used >= budget or sim.done:
                break
            plan_map = _fill_new(sim, plan_map)
            sim.run_slot(SlotPlan(plan_map, EXPLORE, epoch, learn=True), prewarm)
            prewarm = {}
            used += 1
        nxt = draw_exploration_assignment(sim.active, sim.cluster.capacities, sim.rng)
    return sim.state


def _fill_new(sim: SelectionSim, assignment: Dict[int, Optional[int]]
              ) -> Dict[int, Optional[int]]:
    """Give newly admitted requests a random seat without disturbing the others."""
    missing = [rid for rid in sim.active if rid not in assignment]
    if not missing:
        return assignment
    out = {rid: assignment[rid] for rid in sim.active if rid in assignment}
    used = [0] * len(sim.cluster.ssms)
    for j in out.values():
        if j is not None:
            used[j] += 1
    out.update(draw_exploration_assignment(missing, sim.cluster.capacities, sim.rng, used))
    return out


def warm_up(sim: SelectionSim, assignment: Dict[int, Optional[int]], warming: Set[int],
            boundary: bool) -> Dict[int, Optional[int]]:
    """Seat requests admitted during exploitation.

    Optimistic estimates make a newcomer try its untried SSMs one chunk at a
    time (lowest id with room first); those slots feed its estimates. Once
    nothing is left to try it settles on its best estimate with room and
    leaves ``warming``. Requests already placed by the matching are untouched.
    """
    out = {rid: assignment[rid] for rid in sim.active if rid in assignment}
    new = [rid for rid in sim.active if rid not in out]
    warming.intersection_update(sim.active)
    warming.update(new)
    movers = set(new)
    if boundary:
        movers.update(warming)
    if not movers:
        return out
    for rid in movers:
        out.pop(rid, None)
    caps = sim.cluster.capacities
    used = [0] * len(caps)
    for j in out.values():
        if j is not None:
            used[j] += 1
    for rid in sorted(movers):
        est = sim.state.estimates(rid)
        untried = [j for j in range(len(caps)) if np.isinf(est[j]) and used[j] < caps[j]]
        if untried:
            seat: Optional[int] = untried[0]
        else:
            if not np.isinf(est).any():
                warming.discard(rid)
            order = sorted(range(len(caps)), key=lambda j: (-est[j], j))
            seat = next((j for j in order if used[j] < caps[j]), None)
        out[rid] = seat
        if seat is not None:
            used[seat] += 1
    return out


class Selector:
    name = "selector"

    def run(self, sim: SelectionSim, slots: int) -> SelectionSim:
        raise NotImplementedError


class LBSS(Selector):
    """Epoch-based explore/exploit selector with KM exploitation."""

    name = "lbss"

    def __init__(self, config: BanditConfig):
        self.config = config

    def run(self, sim: SelectionSim, slots: Optional[int] = None) -> SelectionSim:
        T = slots if slots is not None else self.config.max_slots
        k = 1
        while sim.t < T and not sim.done:
            sim.state.epoch = k
            run_exploration_epoch(sim, self.config, remaining=T - sim.t)
            if sim.t >= T or sim.done:
                break
            prewarm = prewarm_destination(sim.state, sim.active)
            assignment = plan_exploitation(sim.state, sim.active, sim.cluster.ssms)
            warming: Set[int] = set()
            for i in range(exploitation_duration(k, T - sim.t)):
                if sim.done:
                    break
                assignment = warm_up(sim, assignment, warming, i % self.config.beta == 0)
                sim.run_slot(SlotPlan(assignment, EXPLOIT, k, learn_ids=frozenset(warming)),
                             prewarm)
                prewarm = {}
            k += 1
        return sim


class EpsilonGreedy(Selector):
    """Per-slot epsilon-greedy baseline.

    Follows the convention of the system it is compared against: with
    probability ``epsilon`` every request takes the best SSM according to the
    observations so far (capacity-feasible matching), otherwise every request
    draws an SSM at random. All slots feed the estimates.
    """

    name = "epsilon-greedy"

    def __init__(self, epsilon: float = 0.2):
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon

    def run(self, sim: SelectionSim, slots: int) -> SelectionSim:
        while sim.t < slots and not sim.done:
            if sim.rng.random() < self.epsilon:
                plan = SlotPlan(plan_exploitation(sim.state, sim.active, sim.cluster.ssms),
                                EXPLOIT, 0, learn=True)
            else:
                plan = SlotPlan(draw_exploration_assignment(sim.active, sim.cluster.capacities,
                                                            sim.rng), EXPLORE, 0, learn=True)
            sim.run_slot(plan)
        return sim


class PromptLengthGreedy(Selector):
    """Static baseline: shorter prompts go to smaller (faster) SSMs.

    SSMs are ranked by speed, fastest first; prompt-length quantile cut points
    of the whole workload split requests into equally sized bands, band ``q``
    using the ``q``-th fastest SSM. Overflow spills to the next SSM with room.
    """

    name = "greedy"

    def assignment(self, sim: SelectionSim, ids: Sequence[int],
                   used: Optional[List[int]] = None) -> Dict[int, Optional[int]]:
        ssms = sim.cluster.ssms
        order = sorted(range(len(ssms)), key=lambda j: (-ssms[j].tokens_per_sec, j))
        lens = np.array([r.prompt_len for r in sim.requests.values()], dtype=float)
        cuts = np.quantile(lens, np.linspace(0, 1, len(ssms) + 1)[1:-1]) if len(ssms) > 1 else []
        used = list(used) if used is not None else [0] * len(ssms)
        out: Dict[int, Optional[int]] = {}
        for rid in sorted(ids, key=lambda r: (sim.requests[r].prompt_len, r)):
            band = int(np.searchsorted(cuts, sim.requests[rid].prompt_len, side="right"))
            seat = None
            for step in range(len(ssms)):
                j = order[(band + step) % len(ssms)]
                if used[j] < sim.cluster.capacities[j]:
                    seat = j
                    break
            out[rid] = seat
            if seat is not None:
                used[seat] += 1
        return out

    def run(self, sim: SelectionSim, slots: int) -> SelectionSim:
        assignment = self.assignment(sim, sim.active)
        while sim.t < slots and not sim.done:
            missing = [rid for rid in sim.active if rid not in assignment]
            if missing:
                keep = {rid: assignment[rid] for rid in sim.active if rid in assignment}
                used = [0] * len(sim.cluster.ssms)
                for j in keep.values():
                    if j is not None:
                        used[j] += 1
                keep.update(self.assignment(sim, missing, used))
                assignment = keep
            sim.run_slot(SlotPlan(assignment, EXPLOIT, 0))
        return sim


class FixedAssignment(Selector):
    """Pins every request to a given SSM (used for oracles and homogeneous runs)."""

    name = "fixed"

    def __init__(self, assignment: Dict[int, Optional[int]]):
        self.fixed = dict(assignment)

    def run(self, sim: SelectionSim, slots: int) -> SelectionSim:
        while sim.t < slots and not sim.done:
            sim.run_slot(SlotPlan({rid: self.fixed.get(rid) for rid in sim.active}, EXPLOIT, 0))
        return sim


class OptimalFixed(Selector):
    """Runs the ground-truth optimal matching for the current active set."""

    name = "optimal"

    def run(self, sim: SelectionSim, slots: int) -> SelectionSim:
        plans: Dict[Tuple[int, ...], Dict[int, Optional[int]]] = {}
        while sim.t < slots and not sim.done:
            ids = tuple(sim.active)
            if ids not in plans:
                w = np.vstack([sim.truth(r) for r in ids])
                res = solve_max_weight_matching(MatchingInstance(w, sim.cluster.capacities))
                plans[ids] = {rid: res.assignment[a] for a, rid in enumerate(ids)}
            sim.run_slot(SlotPlan(plans[ids], EXPLOIT, 0))
        return sim


def cumulative_regret(ground_truth: Dict[int, np.ndarray], history: Sequence[SlotRecord],
                      capacities: Sequence[int], lam: float,
                      realized: bool = False) -> Tuple[float, float, float]:
    """Recompute ``R(T)`` from raw slot history.

    Returns ``(total, goodput_term, switching_term)``. The goodput term sums,
    per slot, the optimal expected goodput of that slot's active set minus
    the expected (or, with ``realized``, observed) goodput of the chosen
    SSMs; the switching term sums the recorded switching costs.
    """
    if not ground_truth:
        raise ValueError("cumulative regret needs ground-truth goodputs (simulator only)")
    by_slot: Dict[int, List[SlotRecord]] = {}
    for rec in history:
        by_slot.setdefault(rec.slot, []).append(rec)
    goodput = 0.0
    switching = 0.0
    cache: Dict[Tuple[int, ...], float] = {}
    for t in sorted(by_slot):
        recs = by_slot[t]
        ids = tuple(sorted(r.request_id for r in recs))
        if ids not in cache:
            w = np.vstack([ground_truth[i] for i in ids])
            cache[ids] = solve_max_weight_matching(MatchingInstance(w, capacities)).total_weight
        got = 0.0
        for r in recs:
            if r.ssm_id is None:
                continue
            got += r.goodput if realized else ground_truth[r.request_id][r.ssm_id]
            switching += r.cost
        goodput += cache[ids] - got
    return goodput + lam * switching, goodput, switching


@dataclass
class LbssResult:
    sim: SelectionSim
    history: List[SlotRecord]
    ledger: RegretLedger
    metrics: dict


def run_lbss(config: BanditConfig, requests: Sequence[Request], cluster: Cluster,
             seed: int = 0, max_active: Optional[int] = None) -> LbssResult:
    sim = SelectionSim(requests, cluster, lam=config.lam, seed=seed, max_active=max_active,
                       fast_switch=config.fast_switch)
    LBSS(config).run(sim, config.max_slots)
    return LbssResult(sim, sim.history, sim.ledger, selection_metrics(sim))


def epoch_endpoints(sim: SelectionSim) -> List[int]:
    """Slots (1-based) at which an epoch's exploitation stage ends."""
    ends = []
    for i in range(len(sim.slot_phase)):
        last = i == len(sim.slot_phase) - 1
        if sim.slot_phase[i] == EXPLOIT and (last or sim.slot_phase[i + 1] == EXPLORE):
            ends.append(i + 1)
    return ends


def selection_metrics(sim: SelectionSim) -> dict:
    switches = sum(1 for r in sim.history if r.switched)
    return {
        "slots": sim.t,
        "mean_goodput": sim.mean_goodput(),
        "tokens": int(sum(r.tokens for r in sim.history)),
        "regret": sim.ledger.total,
        "goodput_regret": sim.ledger.goodput_regret,
        "realized_goodput_regret": sim.ledger.realized_goodput_regret,
        "switching_cost": sim.ledger.switching_cost,
        "switches": switches,
        "finished": sum(1 for r in sim.requests.values() if r.state is RequestState.FINISHED),
    }


def fit_log_regret(t: Sequence[float], regret: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares fit ``regret ~ a*log2(t) + b``; returns ``(a, b, r_squared)``."""
    x = np.log2(np.asarray(t, dtype=float))
    y = np.asarray(regret, dtype=float)
    A = np.vstack([x, np.ones_like(x)]).T
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a * x + b)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def iter_chunks(phases: Sequence[str], beta: int) -> Iterator[range]:
    """Slot index ranges of exploration chunks in a phase sequence."""
    i = 0
    n = len(phases)
    while i < n:
        if phases[i] == EXPLORE:
            j = i
            while j < n and phases[j] == EXPLORE and j - i < beta:
                j += 1
            yield range(i, j)
            i = j
        else:
            i += 1
