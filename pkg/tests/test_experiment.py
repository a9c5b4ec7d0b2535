from __future__ import annotations

import json
from pathlib import Path

import pytest

from hetspec import cli, report
from hetspec.config import PRESETS, config_from_dict, load_config, preset
from hetspec.experiment import (ComparisonError, ablation_ladder, aggregate, balanced_assignment,
                                compare_policies, micro_batch_sweep, policy_variants,
                                run_experiment, run_once)
from hetspec.model import ConfigError
from hetspec.pipeline import Event, EventKind, EventTrace

SMALL_TOML = """
[experiment]
name = "small"
policy = "lbss"
seed = 3
slots = 60
repetitions = 2

[workload]
num_requests = 6
window = 4

[llm]
fixed_overhead_sec = 0.01
per_token_sec = 0.0001

[[ssm]]
tokens_per_sec = 400.0
batch_capacity = 4
batch_slowdown = 0.5

[[ssm]]
tokens_per_sec = 100.0
batch_capacity = 4
batch_slowdown = 0.5

[[difficulty]]
weight = 1.0
accept_low = [0.3, 0.7]
accept_high = [0.4, 0.8]
prompt_len = [16, 64]
target_len = [32, 64]

[bandit]
alpha = 8
beta = 2
lambda = 1.0

[pipeline]
mode = "pipelined"
micro_batches = 2

[output]
figures = false
"""


def _small(tmp_path: Path, text: str = SMALL_TOML) -> Path:
    p = tmp_path / "small.toml"
    p.write_text(text)
    return p


def _tiny_preset(name="hetero", slots=60, reps=1):
    cfg = preset(name).replace(**{"bandit.max_slots": slots})
    cfg.repetitions = reps
    return cfg


# -- config -------------------------------------------------------------------

def test_load_small_config(tmp_path):
    cfg = load_config(_small(tmp_path))
    assert cfg.name == "small" and cfg.seed == 3 and cfg.slots == 60
    assert cfg.bandit.lam == 1.0 and cfg.pipeline.mode == "pipelined"
    assert [s.tokens_per_sec for s in cfg.workload.ssm_profiles] == [400.0, 100.0]
    assert cfg.workload.difficulty_mix[0].accept_ranges == ((0.3, 0.4), (0.7, 0.8))


@pytest.mark.parametrize("edit", [
    lambda t: t.replace('policy = "lbss"', 'policy = "bogus"'),
    lambda t: t.replace("repetitions = 2", "repetitions = 0"),
    lambda t: t + "\n[mystery]\nx = 1\n",
    lambda t: t.replace("alpha = 8", "alpha = 7"),
    lambda t: t.replace("accept_high = [0.4, 0.8]", "accept_high = [0.4]"),
    lambda t: t.replace("weight = 1.0", "weight = 0.5"),
    lambda t: t.replace("[llm]", "[llm]\nbogus = 1"),
    lambda t: t + "\n[[ssm\n",
])
def test_bad_configs(tmp_path, edit):
    with pytest.raises(ConfigError):
        load_config(_small(tmp_path, edit(SMALL_TOML)))


def test_preset_override():
    cfg = config_from_dict({"experiment": {"preset": "mix", "seed": 11, "slots": 50}})
    assert cfg.seed == 11 and cfg.slots == 50 and cfg.workload.num_requests == 64
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": {"name": "x"}})


def test_all_presets_validate():
    for name in PRESETS:
        preset(name).validate()


# -- runs ---------------------------------------------------------------------

def test_run_experiment_seeds_and_aggregate(tmp_path):
    cfg = load_config(_small(tmp_path))
    rep = run_experiment(cfg, keep_traces=True)
    assert [r.seed for r in rep.runs] == [3, 4]
    assert len(rep.traces) == 2
    again = aggregate(rep.runs)
    assert again == rep.aggregate
    g = [r.goodput for r in rep.runs]
    assert rep.aggregate["goodput"]["mean"] == pytest.approx(sum(g) / 2)


def test_run_is_deterministic(tmp_path):
    cfg = load_config(_small(tmp_path))
    a = report.to_csv(report.RUN_COLUMNS, (r.row() for r in run_experiment(cfg).runs))
    b = report.to_csv(report.RUN_COLUMNS, (r.row() for r in run_experiment(cfg).runs))
    assert a == b


def test_work_conserved_across_modes():
    base = _tiny_preset("mix", slots=80)
    tokens = set()
    for mode in ("serial", "pipelined", "tuned"):
        rec, trace, _ = run_once(base.replace(**{"pipeline.mode": mode}), 0)
        tokens.add(rec.tokens)
    assert len(tokens) == 1


def test_balanced_assignment():
    assert balanced_assignment([5, 6, 7, 8, 9], [2, 2]) == {5: 0, 6: 1, 7: 0, 8: 1, 9: None}


# -- comparisons --------------------------------------------------------------

def test_identical_policies_give_identical_rows():
    a = _tiny_preset()
    b = _tiny_preset()
    rows = compare_policies([a, b])
    assert rows[0] == rows[1]


def test_mismatched_workloads_rejected():
    a = _tiny_preset()
    b = _tiny_preset()
    b.workload.seed = 99
    with pytest.raises(ComparisonError):
        compare_policies([a, b])
    with pytest.raises(ComparisonError):
        compare_policies([a])


def test_variant_and_ladder_shapes():
    base = _tiny_preset("mix")
    assert [c.policy for c in policy_variants(base)] == ["lbss", "epsilon-greedy", "greedy"]
    ladder = ablation_ladder(base)
    assert [c.name for c in ladder[-3:]] == ["hetero", "hetero+packing", "hetero+packing+pipeline"]
    assert len(ladder) == base.workload.num_ssms + 3


def test_sweep_record():
    s = micro_batch_sweep(_tiny_preset("skewed-slow", slots=40), range(1, 4))
    assert sorted(s["curve"]) == [1, 2, 3]
    assert s["tuned_b"] >= 1 and s["tuned_goodput"] > 0


# -- traces and reports -------------------------------------------------------

def _trace(n=3):
    t = EventTrace(events=[Event(0.1 * i, EventKind.SPEC_START, "ssm0", 0, i) for i in range(n)])
    t.makespan, t.accepted_tokens, t.verify_passes = 1.5, 10, 2
    return t


def test_trace_golden_headers(tmp_path):
    p = report.emit_trace(_trace(), tmp_path / "t.csv")
    assert p.read_text().splitlines()[0] == "time,resource,kind,micro_batch,slot"
    assert p.read_text().splitlines()[1] == "0.0,ssm0,SpecStart,0,0"
    doc = json.loads(report.emit_trace(_trace(), tmp_path / "t.json", "json").read_text())
    assert sorted(doc) == ["columns", "events", "totals"]
    assert doc["columns"] == ["time", "resource", "kind", "micro_batch", "slot"]
    assert sorted(doc["totals"]) == sorted(report.TRACE_TOTALS)


def test_report_golden_headers():
    assert ",".join(report.RUN_COLUMNS) == (
        "seed,policy,mode,decompose,goodput,selector_goodput,idle_fraction,makespan,tokens,"
        "verify_sec,padding_tokens,kv_tokens,regret,goodput_regret,switching_cost,switches,"
        "micro_batches")
    assert ",".join(report.COMPARE_COLUMNS) == (
        "label,policy,mode,decompose,goodput_mean,goodput_std,selector_goodput_mean,"
        "selector_goodput_std,regret_mean,regret_std")
    assert ",".join(report.SWEEP_COLUMNS) == "seed,micro_batches,goodput,idle_fraction,tuned"
    assert ",".join(report.REGRET_COLUMNS) == "seed,t,regret"


def test_empty_trace_is_header_only(tmp_path):
    p = report.emit_trace(EventTrace(), tmp_path / "e.csv")
    assert p.read_text() == "time,resource,kind,micro_batch,slot\n"


def test_json_round_trip(tmp_path):
    t = _trace(5)
    back = report.load_trace(report.emit_trace(t, tmp_path / "t.json", "json"))
    assert back == t
    csv_back = report.load_trace(report.emit_trace(t, tmp_path / "t.csv"))
    assert csv_back.events == t.events


def test_unknown_format_and_unwritable(tmp_path):
    with pytest.raises(ValueError):
        report.emit_trace(EventTrace(), tmp_path / "x.xml", "xml")
    (tmp_path / "afile").write_text("x")
    with pytest.raises(OSError):
        report.emit_trace(EventTrace(), tmp_path / "afile" / "t.csv")


def test_long_trace_row_count(tmp_path):
    cfg = _tiny_preset(slots=2000)
    _, trace, _ = run_once(cfg, 0)
    p = report.emit_trace(trace, tmp_path / "long.csv")
    assert len(p.read_text().splitlines()) == len(trace.events) + 1
    assert {e.slot for e in trace.events} >= set(range(1999))


# -- CLI ----------------------------------------------------------------------

def test_cli_run_writes_reports(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(_small(tmp_path)), "--out", str(out), "--seed", "5"])
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["regret.csv", "report.json", "runs.csv", "trace_seed5.csv", "trace_seed6.csv"]
    stdout = capsys.readouterr().out
    assert stdout == (out / "runs.csv").read_text()
    assert stdout.splitlines()[1].startswith("5,lbss,pipelined,false,")


def test_cli_run_is_byte_identical(tmp_path):
    cfg = str(_small(tmp_path))
    for d in ("a", "b"):
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for name in ("runs.csv", "regret.csv", "report.json", "trace_seed3.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_figures(tmp_path):
    out = tmp_path / "fig"
    code = cli.main(["run", "--preset", "hetero", "--slots", "40", "--out", str(out),
                     "--trace-format", "json"])
    assert code == 0
    assert (out / "regret.png").stat().st_size > 0
    assert (out / "trace_seed0.json").exists()


def test_cli_compare_and_sweep(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--preset", "hetero", "--slots", "40", "--out", str(out),
                     "--policies", "lbss,greedy"]) == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert len(lines) == 3 and (out / "compare.png").exists()
    out = tmp_path / "sw"
    assert cli.main(["sweep-microbatch", "--preset", "skewed-slow", "--slots", "30",
                     "--max-b", "3", "--out", str(out), "--no-figures"]) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 4 and not (out / "sweep.png").exists()


def test_cli_pack_demo(tmp_path, capsys):
    assert cli.main(["pack-demo", "8,5,3", "--width", "2", "--json", str(tmp_path / "l.json")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "# L=8 B=2 padding=0 naive_padding=8 decomposed=[]"
    assert len(out) == 3
    assert json.loads((tmp_path / "l.json").read_text())["L"] == 8


@pytest.mark.parametrize("argv", [
    ["run", "--config", "/nonexistent/cfg.toml"],
    ["run", "--preset", "hetero", "--repetitions", "0"],
    ["compare", "--preset", "hetero", "--policies", "lbss,nope"],
    ["pack-demo", "3,x"],
    ["pack-demo", "3,0"],
])
def test_cli_config_errors(argv, tmp_path):
    assert cli.main(argv + ([] if argv[0] == "pack-demo" else ["--out", str(tmp_path)])) == 2


def test_cli_io_error(tmp_path):
    (tmp_path / "afile").write_text("x")
    code = cli.main(["run", "--preset", "hetero", "--slots", "20", "--no-figures",
                     "--out", str(tmp_path / "afile" / "x")])
    assert code == 3
