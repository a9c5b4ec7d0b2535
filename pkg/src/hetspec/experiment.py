"""Seeded experiment runs: selection, then timing on the verification engine."""
from __future__ import annotations

import copy
import dataclasses
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .bandit import (EXPLOIT, LBSS, EpsilonGreedy, OptimalFixed, PromptLengthGreedy,
                     SelectionSim, Selector, SlotPlan, epoch_endpoints, selection_metrics)
from .config import ExperimentConfig
from .model import Cluster, ConfigError, Request, SsmProfile, generate_workload
from .pipeline import (EventTrace, MicroBatchPlan, Schedule, schedule_from_history,
                       simulate_pipelined, simulate_serial, throughput, tune_micro_batches)


class ComparisonError(ValueError):
    pass


@dataclass
class RunRecord:
    seed: int
    policy: str
    mode: str
    decompose: bool
    goodput: float                 # engine tokens per second of makespan
    selector_goodput: float        # mean per-slot sum of per-request round goodputs
    idle_fraction: float
    makespan: float
    tokens: int
    verify_sec: float
    padding_tokens: int
    kv_tokens: int
    regret: float
    goodput_regret: float
    switching_cost: float
    switches: int
    micro_batches: int
    regret_t: List[int] = field(default_factory=list)
    regret_curve: List[float] = field(default_factory=list)

    def row(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("regret_t")
        d.pop("regret_curve")
        return d


def homogeneous_view(requests: Sequence[Request], cluster: Cluster, ssm_id: int,
                     instances: int, capacity: Optional[int] = None
                     ) -> Tuple[List[Request], Cluster]:
    """Same requests on ``instances`` copies of one SSM type."""
    src = cluster.ssms[ssm_id]
    cap = capacity or src.batch_capacity
    ssms = [SsmProfile(i, src.tokens_per_sec, cap, src.batch_slowdown, f"{src.name}#{i}")
            for i in range(instances)]
    reqs = [dataclasses.replace(r, accept_prob={i: r.accept_prob[ssm_id] for i in range(instances)})
            for r in requests]
    return reqs, Cluster(ssms, cluster.llm, cluster.window, cluster.bonus)


def balanced_assignment(ids: Sequence[int], capacities: Sequence[int]) -> Dict[int, Optional[int]]:
    used = [0] * len(capacities)
    out: Dict[int, Optional[int]] = {}
    for rid in ids:
        room = [j for j in range(len(capacities)) if used[j] < capacities[j]]
        if not room:
            out[rid] = None
            continue
        j = min(room, key=lambda j: (used[j], j))
        out[rid] = j
        used[j] += 1
    return out


class Balanced(Selector):
    """Spreads requests evenly over identical SSM instances; newcomers take the emptiest."""

    name = "homogeneous"

    def run(self, sim: SelectionSim, slots: int) -> SelectionSim:
        assignment: Dict[int, Optional[int]] = {}
        while sim.t < slots and not sim.done:
            keep = {rid: assignment[rid] for rid in sim.active if rid in assignment}
            missing = [rid for rid in sim.active if rid not in keep]
            if missing:
                room = list(sim.cluster.capacities)
                for j in keep.values():
                    if j is not None:
                        room[j] -= 1
                keep.update(balanced_assignment(missing, room))
            assignment = keep
            sim.run_slot(SlotPlan(assignment, EXPLOIT, 0))
        return sim


def make_selector(config: ExperimentConfig):
    if config.policy == "lbss":
        return LBSS(config.bandit)
    if config.policy == "epsilon-greedy":
        return EpsilonGreedy(config.epsilon)
    if config.policy == "greedy":
        return PromptLengthGreedy()
    if config.policy == "optimal":
        return OptimalFixed()
    if config.policy == "homogeneous":
        return Balanced()
    raise ConfigError(f"unknown policy {config.policy!r}")


def select(config: ExperimentConfig, seed: int) -> SelectionSim:
    """Run the configured selector for ``config.slots`` slots on a fresh workload."""
    spec = copy.deepcopy(config.workload)
    spec.seed = seed
    requests = generate_workload(spec)
    cluster = Cluster.from_spec(spec)
    if config.policy == "homogeneous":
        n = config.homogeneous_instances or len(cluster.ssms)
        requests, cluster = homogeneous_view(requests, cluster, config.homogeneous_ssm, n)
    sim = SelectionSim(requests, cluster, lam=config.bandit.lam, seed=seed,
                       max_active=config.max_active or None,
                       fast_switch=config.bandit.fast_switch)
    make_selector(config).run(sim, config.slots)
    return sim


def run_engine(config: ExperimentConfig, schedule: Schedule, cluster: Cluster
               ) -> Tuple[EventTrace, int]:
    decompose = config.packer.decompose
    width = config.packer.width or None
    mode = config.pipeline.mode
    if mode == "serial":
        return simulate_serial(schedule, cluster, decompose, width), 1
    if mode == "pipelined":
        b = config.pipeline.micro_batches
    else:
        p = config.pipeline
        plan = tune_micro_batches(schedule, cluster, decompose, p.b0, p.threshold,
                                  p.probe_slots, p.max_b)
        b = max(plan.counts.values())
    plan = MicroBatchPlan.uniform(b, len(cluster.ssms))
    return simulate_pipelined(schedule, cluster, plan, decompose, width), b


def run_once(config: ExperimentConfig, seed: int) -> Tuple[RunRecord, EventTrace, SelectionSim]:
    sim = select(config, seed)
    schedule = schedule_from_history(sim.history, sim.cluster.window)
    trace, b = run_engine(config, schedule, sim.cluster)
    tp, idle = throughput(trace)
    met = selection_metrics(sim)
    ends = epoch_endpoints(sim)
    record = RunRecord(
        seed=seed, policy=config.policy, mode=config.pipeline.mode,
        decompose=config.packer.decompose, goodput=tp,
        selector_goodput=met["mean_goodput"], idle_fraction=idle,
        makespan=trace.makespan, tokens=trace.accepted_tokens, verify_sec=trace.llm_busy_sec,
        padding_tokens=trace.padding_tokens, kv_tokens=trace.kv_tokens,
        regret=met["regret"], goodput_regret=met["goodput_regret"],
        switching_cost=met["switching_cost"], switches=met["switches"], micro_batches=b,
        regret_t=ends, regret_curve=[sim.ledger.total_at(t) for t in ends])
    return record, trace, sim


AGG_FIELDS = ("goodput", "selector_goodput", "idle_fraction", "verify_sec", "padding_tokens",
              "regret", "switching_cost")


def aggregate(records: Sequence[RunRecord]) -> Dict[str, Dict[str, float]]:
    out = {}
    for f in AGG_FIELDS:
        vals = [float(getattr(r, f)) for r in records]
        out[f] = {"mean": statistics.fmean(vals),
                  "std": statistics.stdev(vals) if len(vals) > 1 else 0.0}
    return out


@dataclass
class MetricsReport:
    name: str
    runs: List[RunRecord]
    aggregate: Dict[str, Dict[str, float]]
    traces: List[EventTrace] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "aggregate": self.aggregate,
            "runs": [dataclasses.asdict(r) for r in self.runs],
        }


def run_experiment(config: ExperimentConfig, keep_traces: bool = False) -> MetricsReport:
    """Run ``config.repetitions`` seeded repetitions (seeds seed+0 .. seed+r-1)."""
    config.validate()
    runs, traces = [], []
    for r in range(config.repetitions):
        record, trace, _ = run_once(config, config.seed + r)
        runs.append(record)
        if keep_traces:
            traces.append(trace)
    return MetricsReport(config.name, runs, aggregate(runs), traces)


def _workload_key(config: ExperimentConfig) -> str:
    return repr(dataclasses.asdict(config.workload))


def compare_policies(configs: Sequence[ExperimentConfig]) -> List[dict]:
    """Mean and std of goodput and regret for each config; workloads must match."""
    if len(configs) < 2:
        raise ComparisonError("compare_policies needs at least two configs")
    key = _workload_key(configs[0])
    reps = configs[0].repetitions
    for c in configs[1:]:
        if _workload_key(c) != key or c.repetitions != reps:
            raise ComparisonError("configs do not share one workload")
    rows = []
    for c in configs:
        rep = run_experiment(c)
        agg = rep.aggregate
        rows.append({
            "label": c.name,
            "policy": c.policy,
            "mode": c.pipeline.mode,
            "decompose": c.packer.decompose,
            "goodput_mean": agg["goodput"]["mean"],
            "goodput_std": agg["goodput"]["std"],
            "selector_goodput_mean": agg["selector_goodput"]["mean"],
            "selector_goodput_std": agg["selector_goodput"]["std"],
            "regret_mean": agg["regret"]["mean"],
            "regret_std": agg["regret"]["std"],
        })
    return rows


def policy_variants(base: ExperimentConfig, epsilon: float = 0.2) -> List[ExperimentConfig]:
    """LBSS, epsilon-greedy and prompt-length greedy on ``base``'s workload."""
    out = []
    for policy in ("lbss", "epsilon-greedy", "greedy"):
        c = base.replace(policy=policy, epsilon=epsilon)
        c.name = policy
        out.append(c)
    return out


def ablation_ladder(base: ExperimentConfig) -> List[ExperimentConfig]:
    """Best-homogeneous vanilla, +heterogeneous selection, +packing, +pipeline."""
    vanilla = [base.replace(policy="homogeneous", homogeneous_ssm=j,
                            **{"packer.decompose": False, "pipeline.mode": "serial"})
               for j in range(base.workload.num_ssms)]
    for j, c in enumerate(vanilla):
        c.name = f"vanilla-{base.workload.ssm_profiles[j].name or j}"
    hetero = base.replace(policy="lbss", **{"packer.decompose": False, "pipeline.mode": "serial"})
    hetero.name = "hetero"
    packed = base.replace(policy="lbss", **{"packer.decompose": True, "pipeline.mode": "serial"})
    packed.name = "hetero+packing"
    full = base.replace(policy="lbss", **{"packer.decompose": True, "pipeline.mode": "tuned"})
    full.name = "hetero+packing+pipeline"
    return vanilla + [hetero, packed, full]


def micro_batch_sweep(config: ExperimentConfig, counts: Sequence[int] = range(1, 9),
                      seed: Optional[int] = None) -> Dict[str, object]:
    """Throughput for each uniform micro-batch count, plus the tuned choice."""
    seed = config.seed if seed is None else seed
    sim = select(config, seed)
    schedule = schedule_from_history(sim.history, sim.cluster.window)
    decompose = config.packer.decompose
    curve = {}
    idle = {}
    for b in counts:
        tr = simulate_pipelined(schedule, sim.cluster, MicroBatchPlan.uniform(b, len(sim.cluster.ssms)),
                                decompose, config.packer.width or None)
        curve[b], idle[b] = throughput(tr)
    serial = simulate_serial(schedule, sim.cluster, decompose, config.packer.width or None)
    p = config.pipeline
    tuned = tune_micro_batches(schedule, sim.cluster, decompose, p.b0, p.threshold,
                               p.probe_slots, p.max_b)
    tb = max(tuned.counts.values())
    tuned_tp = curve.get(tb)
    if tuned_tp is None:
        tuned_tp = throughput(simulate_pipelined(schedule, sim.cluster, tuned, decompose))[0]
    s_tp, s_idle = throughput(serial)
    return {"seed": seed, "curve": curve, "idle": idle, "serial_goodput": s_tp,
            "serial_idle": s_idle, "tuned_b": tb, "tuned_goodput": tuned_tp}
