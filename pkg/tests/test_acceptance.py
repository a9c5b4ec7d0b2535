"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[C#] PASS/FAIL`` line with the measured numbers,
then asserts at the stated tolerance.
"""
from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

from hetspec import cli
from hetspec.bandit import epoch_endpoints, fit_log_regret
from hetspec.config import preset
from hetspec.experiment import ablation_ladder, micro_batch_sweep, policy_variants, run_once, select
from hetspec.matching import MatchingInstance, brute_force_matching, solve_max_weight_matching
from hetspec.packing import (build_indicator, decomposed_attention, exhaustive_min_padding,
                             naive_padding, pack, random_attention_inputs, reference_attention)

SEEDS = range(10)


@pytest.fixture
def report_line(capsys):
    def emit(tag: str, ok: bool, detail: str) -> bool:
        with capsys.disabled():
            print(f"\n[{tag}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def test_c1_attention_exactness(report_line):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        lens = rng.integers(1, 13, n).tolist()
        B = int(rng.integers(1, n + 1))
        inputs = random_attention_inputs(lens, int(rng.integers(1, 5)), 4, rng)
        layout = pack(lens, B)
        outs = decomposed_attention(inputs, layout, build_indicator(layout))
        for rid, inp in inputs.items():
            worst = max(worst, float(np.abs(outs[rid] - reference_attention(inp.q, inp.k, inp.v)).max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 10
    assert report_line("C1", ok, f"max abs error {worst:.2e} over 1000 batches in {dt:.2f}s")


def test_c2_matching_optimality(report_line):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 5))
        caps = rng.integers(1, 4, m)
        while caps.sum() > 8:
            caps[int(rng.integers(m))] = 1
        inst = MatchingInstance(rng.uniform(0, 100, (n, m)), caps.tolist())
        if solve_max_weight_matching(inst).total_weight != brute_force_matching(inst).total_weight:
            mismatches += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 5
    assert report_line("C2", ok, f"{mismatches} total-weight mismatches in 1000 instances, {dt:.2f}s")


def test_c3_packing_quality(report_line):
    checked = misses = 0
    for B in (1, 2, 3):
        for n in range(1, 6):
            for lens in itertools.combinations_with_replacement(range(1, 11), n):
                checked += 1
                if pack(list(lens), B).padding_tokens != exhaustive_min_padding(lens, B)[0]:
                    misses += 1
    rng = np.random.default_rng(3)
    reductions = []
    for _ in range(200):
        lens = np.maximum(1, np.round(rng.lognormal(4.5, 0.9, 16))).astype(int).tolist()
        naive = naive_padding(lens)
        if naive:
            reductions.append(1 - pack(lens, 16).padding_tokens / naive)
    med = float(np.median(reductions))
    ok = misses == 0 and med >= 0.30
    assert report_line("C3", ok, f"{misses}/{checked} small instances off the exhaustive minimum; "
                                 f"median padding reduction {med:.1%} on lognormal batches")


def test_c4_regret_sublinear(report_line):
    cfg = preset("hetero")
    assert cfg.workload.num_requests == 32 and cfg.slots == 2000
    t0 = time.perf_counter()
    curves, at200, at2000 = [], [], []
    ends = None
    for seed in SEEDS:
        sim = select(cfg, seed)
        e = epoch_endpoints(sim)
        ends = ends or e
        assert e == ends
        curves.append([sim.ledger.total_at(t) for t in e])
        at200.append(sim.ledger.total_at(200))
        at2000.append(sim.ledger.total_at(2000))
    dt = time.perf_counter() - t0
    mean = np.mean(curves, axis=0)
    _, _, r2 = fit_log_regret(ends, mean)
    ratio = (np.mean(at2000) / 2000) / (np.mean(at200) / 200)
    ok = r2 >= 0.9 and ratio < 0.5 and dt < 60
    assert report_line("C4", ok, f"R^2 {r2:.3f} of a*log2(t)+b over {len(ends)} epoch ends; "
                                 f"(R(2000)/2000)/(R(200)/200) = {ratio:.3f}; {dt:.1f}s")


def test_c5_policy_dominance(report_line):
    base = preset("hetero")
    means = {}
    for cfg in policy_variants(base, 0.2):
        means[cfg.policy] = float(np.mean([select(cfg, s).mean_goodput() for s in SEEDS]))
    r_eps = means["lbss"] / means["epsilon-greedy"]
    r_greedy = means["lbss"] / means["greedy"]
    ok = r_eps >= 1.2 and r_greedy >= 1.5
    assert report_line("C5", ok, f"LBSS {means['lbss']:.0f} vs eps-greedy {means['epsilon-greedy']:.0f} "
                                 f"({r_eps:.2f}x) vs greedy {means['greedy']:.0f} ({r_greedy:.2f}x) tok/s")


def _unimodal(ys) -> bool:
    k = int(np.argmax(ys))
    rises = all(a < b for a, b in zip(ys[:k], ys[1:k + 1]))
    falls = all(a > b for a, b in zip(ys[k:], ys[k + 1:]))
    return 0 < k < len(ys) - 1 and rises and falls


def test_c6_pipeline_shape(report_line):
    cfg = preset("skewed-slow").replace(**{"packer.decompose": True})
    sweeps = [micro_batch_sweep(cfg, range(1, 9), seed=s) for s in SEEDS]
    bs = sorted(sweeps[0]["curve"])
    mean_curve = [float(np.mean([s["curve"][b] for s in sweeps])) for b in bs]
    tuned_frac = [s["tuned_goodput"] / max(s["curve"].values()) for s in sweeps]
    idle_ok = all(s["idle"][s["tuned_b"]] <= s["serial_idle"] for s in sweeps)
    peak = bs[int(np.argmax(mean_curve))]
    ok = _unimodal(mean_curve) and min(tuned_frac) >= 0.9 and idle_ok
    assert report_line("C6", ok, f"mean curve peaks at b={peak} "
                                 f"({'unimodal' if _unimodal(mean_curve) else 'not unimodal'}); "
                                 f"tuned plan >= {min(tuned_frac):.1%} of sweep best; "
                                 f"pipelined idle <= serial on {'every' if idle_ok else 'not every'} seed")


def test_c7_ablation_ladder(report_line):
    ladder = ablation_ladder(preset("mix"))
    means = {c.name: float(np.mean([run_once(c, s)[0].goodput for s in SEEDS])) for c in ladder}
    vanilla = {k: v for k, v in means.items() if k.startswith("vanilla")}
    best_name = max(vanilla, key=vanilla.get)
    steps = [vanilla[best_name], means["hetero"], means["hetero+packing"],
             means["hetero+packing+pipeline"]]
    monotone = all(a <= b for a, b in zip(steps, steps[1:]))
    uplift = steps[-1] / steps[0]
    ok = monotone and uplift >= 1.5
    assert report_line("C7", ok, f"{best_name} {steps[0]:.1f} <= hetero {steps[1]:.1f} <= +packing "
                                 f"{steps[2]:.1f} <= +pipeline {steps[3]:.1f} tok/s; uplift {uplift:.2f}x")


def test_c8_determinism(report_line, tmp_path):
    outs = []
    for d in ("a", "b"):
        out = tmp_path / d
        code = cli.main(["run", "--preset", "mix", "--slots", "300", "--repetitions", "2",
                         "--mode", "tuned", "--decompose", "--out", str(out)])
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = outs[0] == outs[1]
    assert report_line("C8", same, f"{len(outs[0])} emitted files "
                                   f"{'byte-identical' if same else 'differ'} across two runs")
