"""Experiment configuration: TOML loading, validation and scenario presets.

All preset numbers are synthetic. The five SSM profiles are shaped like a
family of draft models from ~68M to ~1.4B parameters (fast and less accurate
through slow and more accurate); the difficulty mixes stand in for prompt
datasets of differing difficulty.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bandit import BanditConfig
from .model import ConfigError, DifficultyClass, LlmProfile, SsmProfile, WorkloadSpec

POLICIES = ("lbss", "epsilon-greedy", "greedy", "homogeneous", "optimal")
MODES = ("serial", "pipelined", "tuned")


@dataclass
class PackerConfig:
    decompose: bool = False
    width: int = 0  # 0: one row per request in the verified batch


@dataclass
class PipelineConfig:
    mode: str = "serial"
    micro_batches: int = 2
    b0: int = 2
    threshold: float = 0.05
    probe_slots: int = 20
    max_b: int = 8


@dataclass
class OutputConfig:
    dir: str = "out"
    trace_format: str = "csv"
    write_trace: bool = True
    figures: bool = True


@dataclass
class ExperimentConfig:
    workload: WorkloadSpec
    bandit: BanditConfig = field(default_factory=BanditConfig)
    packer: PackerConfig = field(default_factory=PackerConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    name: str = "experiment"
    policy: str = "lbss"
    epsilon: float = 0.2
    homogeneous_ssm: int = 0
    homogeneous_instances: int = 0  # 0: as many instances as the cluster has SSMs
    max_active: int = 0             # 0: limited by total SSM capacity only
    repetitions: int = 1

    @property
    def seed(self) -> int:
        return self.workload.seed

    @property
    def slots(self) -> int:
        return self.bandit.max_slots

    def validate(self) -> None:
        self.workload.validate()
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.pipeline.mode not in MODES:
            raise ConfigError(f"unknown pipeline mode {self.pipeline.mode!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not 0 <= self.homogeneous_ssm < self.workload.num_ssms:
            raise ConfigError("homogeneous_ssm out of range")
        if self.homogeneous_instances < 0 or self.max_active < 0:
            raise ConfigError("homogeneous_instances and max_active must be >= 0")
        if self.pipeline.micro_batches < 1 or self.pipeline.b0 < 1 or self.pipeline.max_b < 1:
            raise ConfigError("micro-batch counts must be >= 1")
        if not 0 <= self.pipeline.threshold < 1:
            raise ConfigError("pipeline threshold must lie in [0, 1)")
        if self.packer.width < 0:
            raise ConfigError("packer width must be >= 0")
        if self.output.trace_format not in ("csv", "json"):
            raise ConfigError("trace_format must be csv or json")

    def replace(self, **changes) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        for key, value in changes.items():
            section, _, attr = key.partition(".")
            if attr:
                sub = getattr(out, section)
                if dataclasses.is_dataclass(sub) and getattr(type(sub), "__dataclass_params__").frozen:
                    setattr(out, section, dataclasses.replace(sub, **{attr: value}))
                else:
                    setattr(sub, attr, value)
            else:
                setattr(out, key, value)
        return out


# --- presets ------------------------------------------------------------

SSM_FAMILY = [
    SsmProfile(0, 400.0, 8, 0.8, "ssm-68m"),
    SsmProfile(1, 220.0, 8, 0.8, "ssm-265m"),
    SsmProfile(2, 130.0, 8, 0.8, "ssm-616m"),
    SsmProfile(3, 80.0, 8, 0.8, "ssm-1.1b"),
    SsmProfile(4, 55.0, 8, 0.8, "ssm-1.4b"),
]

LLM_7B = LlmProfile(fixed_overhead_sec=0.012, per_token_sec=2e-5)


def _cls(name, weight, centers, spread, prompt, target):
    ranges = tuple((max(0.0, c - spread), min(1.0, c + spread)) for c in centers)
    return DifficultyClass(weight, ranges, prompt, target, name)


# easy requests carry long context they mostly copy from; hard ones are short
# open-ended prompts, so prompt length is a poor difficulty signal
EASY = dict(centers=(0.80, 0.83, 0.85, 0.87, 0.88), prompt=(160, 512))
MEDIUM = dict(centers=(0.35, 0.70, 0.80, 0.84, 0.86), prompt=(64, 224))
HARD = dict(centers=(0.05, 0.10, 0.30, 0.75, 0.93), prompt=(16, 96))


def _mix(weights, spread=0.04, target=(64, 256)):
    parts = []
    for name, w, spec in zip(("easy", "medium", "hard"), weights, (EASY, MEDIUM, HARD)):
        if w > 0:
            parts.append(_cls(name, w, spec["centers"], spread, spec["prompt"], target))
    return parts


def _workload(n, mix, seed=0):
    return WorkloadSpec(num_requests=n, ssm_profiles=list(SSM_FAMILY), llm=LLM_7B,
                        difficulty_mix=mix, window=4, seed=seed)


STATIONARY_TARGET = (1_000_000, 1_000_000)


def preset(name: str) -> ExperimentConfig:
    """Named scenario; returns a fresh config each call."""
    thirds = (1 / 3, 1 / 3, 1 / 3)
    if name == "hetero":
        # stationary: nobody finishes within the horizon
        cfg = ExperimentConfig(_workload(32, _mix(thirds, target=STATIONARY_TARGET)),
                               name=name, max_active=32)
    elif name == "hard-mix":
        cfg = ExperimentConfig(_workload(64, _mix((0.2, 0.3, 0.5))), name=name, max_active=8)
    elif name == "easy-mix":
        cfg = ExperimentConfig(_workload(64, _mix((0.6, 0.3, 0.1))), name=name, max_active=8)
    elif name == "medium-mix":
        cfg = ExperimentConfig(_workload(64, _mix((0.3, 0.5, 0.2))), name=name, max_active=8)
    elif name == "mix":
        cfg = ExperimentConfig(_workload(64, _mix(thirds)), name=name, max_active=8)
    elif name == "skewed-slow":
        # most requests are hard and end up on the slow, accurate SSMs
        cfg = ExperimentConfig(_workload(96, _mix((0.15, 0.25, 0.6))), name=name, max_active=24)
    else:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    cfg.bandit = BanditConfig(alpha=16, beta=2, max_slots=2000)
    return cfg


PRESETS = ("hetero", "hard-mix", "easy-mix", "medium-mix", "mix", "skewed-slow")


# --- TOML ---------------------------------------------------------------

def _pick(table: Dict[str, Any], cls, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    return table


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    data = copy.deepcopy(data)
    exp = data.pop("experiment", {})
    base_name = exp.pop("preset", None)
    cfg = preset(base_name) if base_name else None
    try:
        wl = data.pop("workload", {})
        llm_t = data.pop("llm", None)
        ssm_t = data.pop("ssm", None)
        diff_t = data.pop("difficulty", None)
        if cfg is None and (ssm_t is None or diff_t is None or llm_t is None):
            raise ConfigError("config without a preset needs [llm], [[ssm]] and [[difficulty]]")
        if cfg is None:
            cfg = ExperimentConfig(WorkloadSpec(0, [], LlmProfile(), []))
        w = cfg.workload
        if llm_t is not None:
            w.llm = LlmProfile(**_pick(llm_t, LlmProfile, "llm"))
        if ssm_t is not None:
            w.ssm_profiles = [SsmProfile(id=i, **_pick(t, SsmProfile, "ssm"))
                              for i, t in enumerate(ssm_t)]
        if diff_t is not None:
            mix = []
            for t in diff_t:
                t = dict(t)
                low, high = t.pop("accept_low"), t.pop("accept_high")
                if len(low) != len(high):
                    raise ConfigError("accept_low and accept_high differ in length")
                ranges = tuple((float(a), float(b)) for a, b in zip(low, high))
                for key in ("prompt_len", "target_len"):
                    if key in t:
                        t[key] = tuple(int(v) for v in t[key])
                mix.append(DifficultyClass(accept_ranges=ranges,
                                           **_pick(t, DifficultyClass, "difficulty")))
            w.difficulty_mix = mix
        for key, value in _pick(wl, WorkloadSpec, "workload").items():
            setattr(w, key, value)
        if "bandit" in data:
            b = dict(data.pop("bandit"))
            if "lambda" in b:
                b["lam"] = b.pop("lambda")
            cfg.bandit = dataclasses.replace(cfg.bandit, **_pick(b, BanditConfig, "bandit"))
        for section, cls in (("packer", PackerConfig), ("pipeline", PipelineConfig),
                             ("output", OutputConfig)):
            if section in data:
                setattr(cfg, section,
                        dataclasses.replace(getattr(cfg, section),
                                            **_pick(data.pop(section), cls, section)))
        if data:
            raise ConfigError(f"unknown sections: {sorted(data)}")
        if "slots" in exp:
            cfg.bandit = dataclasses.replace(cfg.bandit, max_slots=int(exp.pop("slots")))
        if "seed" in exp:
            w.seed = int(exp.pop("seed"))
        allowed = {"name", "policy", "epsilon", "homogeneous_ssm", "homogeneous_instances",
                   "max_active", "repetitions"}
        unknown = set(exp) - allowed
        if unknown:
            raise ConfigError(f"[experiment] unknown keys: {sorted(unknown)}")
        for key, value in exp.items():
            setattr(cfg, key, value)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)
