"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from . import plotting, report
from .config import PRESETS, ExperimentConfig, load_config, preset
from .experiment import (ComparisonError, ablation_ladder, compare_policies, micro_batch_sweep,
                         policy_variants, run_experiment)
from .model import ConfigError
from .packing import LayoutError, build_indicator, naive_padding, pack

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _load(args) -> ExperimentConfig:
    if args.config:
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    else:
        cfg = preset(args.preset)
    if args.seed is not None:
        cfg.workload.seed = args.seed
    if getattr(args, "repetitions", None) is not None:
        cfg.repetitions = args.repetitions
    if getattr(args, "slots", None) is not None:
        cfg = cfg.replace(**{"bandit.max_slots": args.slots})
    cfg.validate()
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figures(args, cfg: ExperimentConfig) -> bool:
    return cfg.output.figures and not args.no_figures


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.policy:
        cfg.policy = args.policy
    if args.mode:
        cfg.pipeline.mode = args.mode
    if args.decompose is not None:
        cfg.packer.decompose = args.decompose
    cfg.validate()
    out = _out_dir(args, cfg)
    rep = run_experiment(cfg, keep_traces=cfg.output.write_trace)
    written = [report.write_runs(rep, out / "runs.csv"),
               report.write_regret(rep, out / "regret.csv"),
               report.write_json(rep.to_dict(), out / "report.json")]
    fmt = args.trace_format or cfg.output.trace_format
    for r, trace in zip(rep.runs, rep.traces):
        written.append(report.emit_trace(trace, out / f"trace_seed{r.seed}.{fmt}", fmt))
    if _figures(args, cfg):
        written.append(plotting.regret_curve(rep, out / "regret.png"))
    sys.stdout.write(report.to_csv(report.RUN_COLUMNS, (r.row() for r in rep.runs)))
    agg = rep.aggregate["goodput"]
    print(f"# goodput mean={agg['mean']:.3f} std={agg['std']:.3f} over {len(rep.runs)} run(s)",
          file=sys.stderr)
    for p in written:
        print(f"# wrote {p}", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    if args.ablation:
        configs = ablation_ladder(cfg)
    else:
        configs = policy_variants(cfg, args.epsilon if args.epsilon is not None else cfg.epsilon)
        if args.policies:
            wanted = args.policies.split(",")
            unknown = set(wanted) - {c.policy for c in configs}
            if unknown:
                raise ConfigError(f"unknown policies {sorted(unknown)}")
            configs = [c for c in configs if c.policy in wanted]
    rows = compare_policies(configs)
    out = _out_dir(args, cfg)
    written = [report.write_comparison(rows, out / "compare.csv")]
    if _figures(args, cfg):
        key = "goodput" if args.ablation else "selector_goodput"
        written.append(plotting.goodput_bars(rows, out / "compare.png", key))
    sys.stdout.write(report.to_csv(report.COMPARE_COLUMNS, rows))
    for p in written:
        print(f"# wrote {p}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.decompose is not None:
        cfg.packer.decompose = args.decompose
    counts = range(1, args.max_b + 1)
    sweeps = [micro_batch_sweep(cfg, counts, seed=cfg.seed + r) for r in range(cfg.repetitions)]
    out = _out_dir(args, cfg)
    written = [report.write_sweep(sweeps, out / "sweep.csv")]
    if _figures(args, cfg):
        written.append(plotting.throughput_vs_b(sweeps, out / "sweep.png"))
    sys.stdout.write(report.to_csv(report.SWEEP_COLUMNS, report.sweep_rows(sweeps)))
    for p in written:
        print(f"# wrote {p}", file=sys.stderr)
    return EXIT_OK


def _ints(text: str) -> List[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise ConfigError("lengths must be positive integers")
    return vals


def cmd_pack(args) -> int:
    lens = _ints(args.lens)
    width = args.width or len(lens)
    layout = pack(lens, width)
    grid = build_indicator(layout).grid
    print(f"# L={layout.L} B={layout.B} padding={layout.padding_tokens} "
          f"naive_padding={naive_padding(lens)} decomposed={layout.decomposed}")
    for row in grid:
        print(" ".join("." if c < 0 else str(c) for c in row))
    if args.json:
        report.write_json(layout.to_record(), args.json)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetspec",
                                     description="Heterogeneous speculative decoding simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="TOML experiment file")
        src.add_argument("--preset", default="hetero", choices=PRESETS,
                         help="built-in scenario when no --config is given (default: hetero)")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--repetitions", type=int, help="number of seeds to run")
        p.add_argument("--slots", type=int, help="slot horizon T")
        p.add_argument("--no-figures", action="store_true", help="skip PNG output")

    p = sub.add_parser("run", help="run one configuration over its seeds")
    common(p)
    p.add_argument("--policy", choices=("lbss", "epsilon-greedy", "greedy", "homogeneous", "optimal"))
    p.add_argument("--mode", choices=("serial", "pipelined", "tuned"))
    p.add_argument("--decompose", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--trace-format", choices=("csv", "json"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare selection policies or the ablation ladder")
    common(p)
    p.add_argument("--policies", help="comma-separated subset of lbss,epsilon-greedy,greedy")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--ablation", action="store_true",
                   help="homogeneous vanilla, +hetero selection, +packing, +pipeline")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-microbatch", help="throughput against micro-batch count")
    common(p)
    p.add_argument("--max-b", type=int, default=8)
    p.add_argument("--decompose", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pack-demo", help="print a packed layout for given KV lengths")
    p.add_argument("lens", help="comma-separated KV lengths, e.g. 9,3,5,2")
    p.add_argument("--width", type=int, help="tensor width B (default: number of requests)")
    p.add_argument("--json", help="also write the layout record to this file")
    p.set_defaults(func=cmd_pack)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ComparisonError, LayoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
