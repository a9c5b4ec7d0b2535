"""Requests, model profiles, the acceptance process and the timing cost model."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class ConfigError(ValueError):
    """Invalid workload or experiment configuration."""


class CapacityError(ValueError):
    """A batch exceeds an SSM's batch capacity."""


class RequestState(enum.Enum):
    WAITING = "waiting"
    ACTIVE = "active"
    FINISHED = "finished"


@dataclass
class Request:
    id: int
    prompt_len: int
    target_len: int
    accept_prob: Dict[int, float]
    generated_len: int = 0
    state: RequestState = RequestState.WAITING
    ssm_id: Optional[int] = None
    # difficulty class index from the workload mix; informational only
    difficulty: int = 0

    def __post_init__(self):
        if self.prompt_len < 1 or self.target_len < 1:
            raise ConfigError(f"request {self.id}: prompt_len and target_len must be >= 1")
        for j, p in self.accept_prob.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"request {self.id}: accept_prob[{j}]={p} outside [0, 1]")

    @property
    def context_len(self) -> int:
        return self.prompt_len + self.generated_len

    @property
    def finished(self) -> bool:
        return self.state is RequestState.FINISHED

    def activate(self, ssm_id: int) -> None:
        if self.state is RequestState.FINISHED:
            raise ValueError(f"request {self.id} already finished")
        self.state = RequestState.ACTIVE
        self.ssm_id = ssm_id

    def advance(self, tokens: int) -> int:
        """Append ``tokens`` generated tokens, clipped at target_len. Returns tokens kept."""
        if self.state is not RequestState.ACTIVE:
            raise ValueError(f"request {self.id} is not active")
        kept = min(tokens, self.target_len - self.generated_len)
        self.generated_len += kept
        if self.generated_len >= self.target_len:
            self.state = RequestState.FINISHED
        return kept


@dataclass(frozen=True)
class SsmProfile:
    id: int
    tokens_per_sec: float
    batch_capacity: int = 8
    batch_slowdown: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not self.tokens_per_sec > 0:
            raise ConfigError(f"ssm {self.id}: tokens_per_sec must be > 0")
        if self.batch_capacity < 1:
            raise ConfigError(f"ssm {self.id}: batch_capacity must be >= 1")
        if self.batch_slowdown < 0:
            raise ConfigError(f"ssm {self.id}: batch_slowdown must be >= 0")


@dataclass(frozen=True)
class LlmProfile:
    fixed_overhead_sec: float = 0.01
    per_token_sec: float = 0.001

    def __post_init__(self):
        if not (np.isfinite(self.fixed_overhead_sec) and self.fixed_overhead_sec >= 0):
            raise ConfigError("llm fixed_overhead_sec must be finite and >= 0")
        if not (np.isfinite(self.per_token_sec) and self.per_token_sec > 0):
            raise ConfigError("llm per_token_sec must be finite and > 0")


@dataclass(frozen=True)
class DifficultyClass:
    """One component of a workload's difficulty mix.

    ``accept_ranges[j]`` is the (low, high) interval the per-token acceptance
    probability on SSM ``j`` is drawn from uniformly.
    """

    weight: float
    accept_ranges: Tuple[Tuple[float, float], ...]
    prompt_len: Tuple[int, int] = (32, 256)
    target_len: Tuple[int, int] = (64, 256)
    name: str = ""


@dataclass
class WorkloadSpec:
    num_requests: int
    ssm_profiles: List[SsmProfile]
    llm: LlmProfile
    difficulty_mix: List[DifficultyClass]
    window: int = 4
    seed: int = 0
    bonus_token: bool = True

    def validate(self) -> None:
        if not self.ssm_profiles:
            raise ConfigError("workload needs at least one SSM profile")
        ids = [s.id for s in self.ssm_profiles]
        if ids != list(range(len(ids))):
            raise ConfigError(f"SSM ids must be 0..M-1 in order, got {ids}")
        if self.num_requests < 0:
            raise ConfigError("num_requests must be >= 0")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not self.difficulty_mix:
            raise ConfigError("difficulty_mix is empty")
        total = sum(c.weight for c in self.difficulty_mix)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"difficulty weights sum to {total}, expected 1")
        for c in self.difficulty_mix:
            if c.weight < 0:
                raise ConfigError("difficulty weights must be non-negative")
            if len(c.accept_ranges) != len(self.ssm_profiles):
                raise ConfigError(
                    f"difficulty class {c.name!r} has {len(c.accept_ranges)} acceptance "
                    f"ranges for {len(self.ssm_profiles)} SSMs")
            for lo, hi in c.accept_ranges:
                if not 0.0 <= lo <= hi <= 1.0:
                    raise ConfigError(f"acceptance range ({lo}, {hi}) not inside [0, 1]")
            for lo, hi in (c.prompt_len, c.target_len):
                if not 1 <= lo <= hi:
                    raise ConfigError(f"length range ({lo}, {hi}) invalid")

    @property
    def num_ssms(self) -> int:
        return len(self.ssm_profiles)


@dataclass(frozen=True)
class SpeculationOutcome:
    request_id: int
    ssm_id: int
    proposed: int
    accepted: int
    bonus: int
    wall_time_sec: float

    def __post_init__(self):
        if not 0 <= self.accepted <= self.proposed:
            raise ValueError("accepted must lie in [0, proposed]")
        if self.bonus not in (0, 1):
            raise ValueError("bonus must be 0 or 1")

    @property
    def tokens(self) -> int:
        return self.accepted + self.bonus


def generate_workload(spec: WorkloadSpec) -> List[Request]:
    """Draw ``spec.num_requests`` requests; a pure function of ``spec`` (incl. seed)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    weights = np.array([c.weight for c in spec.difficulty_mix], dtype=float)
    classes = rng.choice(len(weights), size=spec.num_requests, p=weights / weights.sum())
    requests = []
    for i, k in enumerate(classes):
        c = spec.difficulty_mix[int(k)]
        probs = {}
        for j, (lo, hi) in enumerate(c.accept_ranges):
            # draw even for degenerate ranges so the stream layout is stable
            u = rng.random()
            probs[j] = float(lo + (hi - lo) * u)
        prompt = int(rng.integers(c.prompt_len[0], c.prompt_len[1] + 1))
        target = int(rng.integers(c.target_len[0], c.target_len[1] + 1))
        requests.append(Request(id=i, prompt_len=prompt, target_len=target,
                                accept_prob=probs, difficulty=int(k)))
    return requests


def accepted_prefix(p: float, uniforms: Sequence[float]) -> int:
    """Length of the leading run of ``u < p`` among ``uniforms``."""
    n = 0
    for u in uniforms:
        if u < p:
            n += 1
        else:
            break
    return n


def sample_accepted_prefix(request: Request, ssm_id: int, window: int,
                           rng: np.random.Generator) -> int:
    """Number of draft tokens the verifier accepts in one round.

    Each of the ``window`` draft tokens is accepted independently with
    probability ``request.accept_prob[ssm_id]``; the first rejection discards
    the rest of the window.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    try:
        p = request.accept_prob[ssm_id]
    except KeyError:
        raise KeyError(f"request {request.id} has no acceptance entry for ssm {ssm_id}") from None
    return accepted_prefix(p, rng.random(window))


def expected_accepted(p: float, window: int) -> float:
    """Closed form of E[accepted prefix] = p + p^2 + ... + p^w."""
    return float(sum(p ** k for k in range(1, window + 1)))


def speculation_time(ssm: SsmProfile, batch_size: int, window: int) -> float:
    if batch_size > ssm.batch_capacity:
        raise CapacityError(
            f"batch of {batch_size} exceeds capacity {ssm.batch_capacity} of ssm {ssm.id}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return window / ssm.tokens_per_sec * (1.0 + ssm.batch_slowdown * (batch_size - 1))


def verification_time(llm: LlmProfile, total_tokens: int) -> float:
    """One verifier forward pass over ``total_tokens`` KV positions, padding included."""
    if total_tokens < 0:
        raise ValueError("total_tokens must be >= 0")
    return llm.fixed_overhead_sec + llm.per_token_sec * total_tokens


def observed_goodput(outcome: SpeculationOutcome) -> float:
    if outcome.wall_time_sec <= 0:
        raise ZeroDivisionError("wall_time_sec must be > 0")
    return (outcome.accepted + outcome.bonus) / outcome.wall_time_sec


# --- per-request round model used as selector feedback ---------------------

def round_time(ssm: SsmProfile, llm: LlmProfile, window: int) -> float:
    """Duration of one speculation+verification round for a lone request on ``ssm``.

    The selector scores (request, SSM) pairs by this batch-independent round:
    the SSM drafts ``window`` tokens and the verifier checks those tokens.
    """
    return speculation_time(ssm, 1, window) + verification_time(llm, window)


def expected_goodput(request: Request, ssm: SsmProfile, llm: LlmProfile,
                     window: int, bonus: bool = True) -> float:
    e = expected_accepted(request.accept_prob[ssm.id], window) + (1.0 if bonus else 0.0)
    return e / round_time(ssm, llm, window)


def goodput_matrix(requests: Sequence[Request], ssms: Sequence[SsmProfile],
                   llm: LlmProfile, window: int, bonus: bool = True) -> np.ndarray:
    """Ground-truth expected goodput for every (request, SSM) pair (simulator-only)."""
    g = np.empty((len(requests), len(ssms)))
    for a, r in enumerate(requests):
        for b, s in enumerate(ssms):
            g[a, b] = expected_goodput(r, s, llm, window, bonus)
    return g


class OutcomeSource:
    """Counter-based randomness for speculation rounds.

    The uniforms for (request, round) depend only on the seed and those two
    integers, so every engine replaying the same assignment sees identical
    acceptance outcomes regardless of event timing. Different SSMs share the
    uniforms (common random numbers).
    """

    BLOCK = 256  # rounds per generated block

    def __init__(self, seed: int, window: int, bonus: bool = True):
        self.seed = int(seed)
        self.window = window
        self.bonus = bonus
        self._blocks: Dict[Tuple[int, int], np.ndarray] = {}

    def uniforms(self, request_id: int, round_idx: int) -> np.ndarray:
        """The ``window`` uniforms of round ``round_idx`` of ``request_id``."""
        if round_idx < 0:
            raise ValueError("round_idx must be >= 0")
        b, i = divmod(round_idx, self.BLOCK)
        key = (request_id, b)
        block = self._blocks.get(key)
        if block is None:
            gen = np.random.default_rng([self.seed, 0x5EC, request_id, b])
            block = self._blocks[key] = gen.random((self.BLOCK, self.window))
        return block[i]

    def accepted(self, request: Request, ssm_id: int, round_idx: int) -> int:
        try:
            p = request.accept_prob[ssm_id]
        except KeyError:
            raise KeyError(f"request {request.id} has no acceptance entry for ssm {ssm_id}") from None
        return accepted_prefix(p, self.uniforms(request.id, round_idx).tolist())

    def tokens(self, request: Request, ssm_id: int, round_idx: int) -> int:
        return self.accepted(request, ssm_id, round_idx) + (1 if self.bonus else 0)


@dataclass
class Cluster:
    """Convenience bundle of the models shared by the simulators."""

    ssms: List[SsmProfile]
    llm: LlmProfile
    window: int = 4
    bonus: bool = True
    capacities: List[int] = field(init=False)

    def __post_init__(self):
        self.capacities = [s.batch_capacity for s in self.ssms]

    @classmethod
    def from_spec(cls, spec: WorkloadSpec) -> "Cluster":
        return cls(list(spec.ssm_profiles), spec.llm, spec.window, spec.bonus_token)
