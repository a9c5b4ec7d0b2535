"""Scheduling simulator for speculative decoding with heterogeneous draft models."""
from __future__ import annotations

from .bandit import LBSS, BanditConfig, EpsilonGreedy, PromptLengthGreedy, SelectionSim, run_lbss
from .config import ExperimentConfig, load_config, preset
from .experiment import MetricsReport, compare_policies, run_experiment
from .matching import MatchingInstance, solve_max_weight_matching
from .model import (Cluster, ConfigError, LlmProfile, Request, SsmProfile, WorkloadSpec,
                    generate_workload)
from .packing import decomposed_attention, pack, reference_attention
from .pipeline import MicroBatchPlan, simulate_pipelined, simulate_serial, tune_micro_batches
from .report import emit_trace, load_trace

__version__ = "0.1.0"
