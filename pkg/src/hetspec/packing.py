"""KV-tensor packing with request decomposition, and the masked attention it needs.

A batch of requests with different KV lengths is laid out on a ``B x L``
tensor. Long requests may be cut into segments that continue on another row,
so short requests can share rows and fewer padding cells remain. Attention
over such a layout stays exact as long as each query only normalizes over
cells that belong to its own request, wherever those cells sit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .model import ConfigError

EMPTY = -1


class LayoutError(ValueError):
    """Segments overlap or fall outside the tensor."""


class ConsistencyError(ValueError):
    """Attention inputs, layout and mask disagree."""


@dataclass(frozen=True)
class Segment:
    request_id: int
    row: int
    col_start: int
    col_end: int
    token_offset: int

    @property
    def length(self) -> int:
        return self.col_end - self.col_start


@dataclass
class PackedLayout:
    L: int
    B: int
    segments: List[Segment]
    kv_lens: Dict[int, int]

    @property
    def padding_tokens(self) -> int:
        return self.B * self.L - sum(self.kv_lens.values())

    @property
    def q_replica_rows(self) -> Dict[int, int]:
        rows: Dict[int, set] = {rid: set() for rid in self.kv_lens}
        for s in self.segments:
            rows[s.request_id].add(s.row)
        return {rid: len(r) for rid, r in rows.items()}

    def segments_of(self, request_id: int) -> List[Segment]:
        return sorted((s for s in self.segments if s.request_id == request_id),
                      key=lambda s: s.token_offset)

    @property
    def decomposed(self) -> List[int]:
        return sorted(rid for rid, n in self.q_replica_rows.items() if n > 1)

    def to_record(self) -> dict:
        return {
            "L": self.L,
            "B": self.B,
            "padding_tokens": self.padding_tokens,
            "kv_lens": {str(k): v for k, v in sorted(self.kv_lens.items())},
            "segments": [
                {"request_id": s.request_id, "row": s.row, "col_start": s.col_start,
                 "col_end": s.col_end, "token_offset": s.token_offset}
                for s in self.segments
            ],
        }


@dataclass
class IndicatorMask:
    grid: np.ndarray  # B x L of request ids, EMPTY for padding

    def cells_of(self, request_id: int) -> int:
        return int((self.grid == request_id).sum())

    @property
    def empty_cells(self) -> int:
        return int((self.grid == EMPTY).sum())


@dataclass
class ToyAttentionInput:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.k = np.atleast_2d(np.asarray(self.k, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.k.shape != self.v.shape or self.q.shape[1] != self.k.shape[1]:
            raise ValueError(f"shape mismatch q{self.q.shape} k{self.k.shape} v{self.v.shape}")

    @property
    def kv_len(self) -> int:
        return self.k.shape[0]


def naive_padding(kv_lens: Sequence[int]) -> int:
    if len(kv_lens) == 0:
        raise ValueError("naive_padding needs at least one length")
    top = max(kv_lens)
    return sum(top - n for n in kv_lens)


def _first_fit_decreasing(lens: Mapping[int, int], B: int, L: int) -> Optional[List[Segment]]:
    free = [L] * B
    segments: List[Segment] = []
    order = sorted(lens, key=lambda rid: (-lens[rid], rid))
    for rid in order:
        n = lens[rid]
        row = next((r for r in range(B) if free[r] >= n), None)
        if row is not None:
            start = L - free[row]
            segments.append(Segment(rid, row, start, start + n, 0))
            free[row] -= n
            continue
        if sum(free) < n:
            return None
        # split across rows, roomiest row first, so the request spans few rows
        offset = 0
        while offset < n:
            row = max(range(B), key=lambda r: (free[r], -r))
            take = min(free[row], n - offset)
            start = L - free[row]
            segments.append(Segment(rid, row, start, start + take, offset))
            free[row] -= take
            offset += take
        if len({s.row for s in segments if s.request_id == rid}) > B:
            return None
    return segments


def pack(kv_lens: Sequence[int], B: int, ids: Optional[Sequence[int]] = None) -> PackedLayout:
    """Lay out requests on a width-``B`` tensor with minimal padding.

    Tensor lengths from ``ceil(sum/B)`` up to the longest request (or the
    lower bound, if larger) are tried in increasing order with a
    first-fit-decreasing fill that may split a request across rows. Padding
    is ``B*L - sum`` for any feasible layout, so the first feasible length is
    the minimum and also the smallest such ``L``.
    """
    if B < 1:
        raise ConfigError("tensor width B must be >= 1")
    if ids is None:
        ids = list(range(len(kv_lens)))
    if len(ids) != len(kv_lens):
        raise ValueError("ids and kv_lens differ in length")
    if any(n < 1 for n in kv_lens):
        raise ValueError("every kv_len must be >= 1")
    lens = {int(rid): int(n) for rid, n in zip(ids, kv_lens)}
    if not lens:
        return PackedLayout(0, B, [], {})
    total = sum(lens.values())
    lo = math.ceil(total / B)
    hi = max(lo, max(lens.values()))
    for L in range(lo, hi + 1):
        segs = _first_fit_decreasing(lens, B, L)
        if segs is not None:
            segs.sort(key=lambda s: (s.row, s.col_start))
            return PackedLayout(L, B, segs, lens)
    raise LayoutError(f"no feasible layout for lens={list(kv_lens)} B={B}")  # unreachable


def naive_layout(kv_lens: Sequence[int], ids: Optional[Sequence[int]] = None) -> PackedLayout:
    """One request per row, every row padded to the longest request."""
    if ids is None:
        ids = list(range(len(kv_lens)))
    lens = {int(rid): int(n) for rid, n in zip(ids, kv_lens)}
    L = max(lens.values()) if lens else 0
    segs = [Segment(rid, r, 0, n, 0) for r, (rid, n) in enumerate(lens.items())]
    return PackedLayout(L, len(lens), segs, lens)


def exhaustive_min_padding(kv_lens: Sequence[int], B: int) -> Tuple[int, int]:
    """Brute-force minimum padding over all tensor lengths and token splits.

    Returns ``(padding, L)``. Every way of distributing each request's tokens
    over the ``B`` rows (at most one segment per row) is explored by a
    memoized depth-first search. Test oracle only: exponential in general.
    """
    lens = tuple(sorted(kv_lens, reverse=True))
    total = sum(lens)

    def feasible(L: int) -> bool:
        @lru_cache(maxsize=None)
        def place(i: int, caps: Tuple[int, ...]) -> bool:
            if i == len(lens):
                return True
            return spread(i, lens[i], 0, caps)

        @lru_cache(maxsize=None)
        def spread(i: int, remaining: int, row: int, caps: Tuple[int, ...]) -> bool:
            if remaining == 0:
                return place(i + 1, tuple(sorted(caps)))
            if row == len(caps) or sum(caps[row:]) < remaining:
                return False
            for take in range(min(caps[row], remaining), -1, -1):
                nxt = caps[:row] + (caps[row] - take,) + caps[row + 1:]
                if spread(i, remaining - take, row + 1, nxt):
                    return True
            return False

        return place(0, (L,) * B)

    L = 1
    while not feasible(L):
        L += 1
    return B * L - total, L


def build_indicator(layout: PackedLayout) -> IndicatorMask:
    grid = np.full((layout.B, layout.L), EMPTY, dtype=np.int64)
    for s in layout.segments:
        if not (0 <= s.row < layout.B and 0 <= s.col_start <= s.col_end <= layout.L):
            raise LayoutError(f"segment {s} outside the {layout.B}x{layout.L} tensor")
        cells = grid[s.row, s.col_start:s.col_end]
        if (cells != EMPTY).any():
            raise LayoutError(f"segment {s} overlaps another segment")
        cells[:] = s.request_id
    return IndicatorMask(grid)


def reference_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                        return_scores: bool = False):
    """Dense softmax attention ``O = softmax(Q K^T) V`` for one request."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    k = np.atleast_2d(np.asarray(k, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(f"shape mismatch q{q.shape} k{k.shape} v{v.shape}")
    logits = q @ k.T
    f = np.exp(logits - logits.max(axis=1, keepdims=True))
    a = f / f.sum(axis=1, keepdims=True)
    out = a @ v
    return (out, a) if return_scores else out


def decomposed_attention(inputs: Mapping[int, ToyAttentionInput], layout: PackedLayout,
                         mask: IndicatorMask, return_scores: bool = False):
    """Attention computed row by row on the packed KV tensor.

    Each request's queries are replicated onto every row holding one of its
    segments. Per row, ``exp(Q K^T)`` is gated by the indicator mask; the
    numerators and the normalizer are then summed across those rows.
    Returns ``{request_id: O}`` (and per-request score matrices in token
    order when ``return_scores``).
    """
    if set(inputs) != set(layout.kv_lens):
        raise ConsistencyError("attention inputs and layout cover different requests")
    if mask.grid.shape != (layout.B, layout.L):
        raise ConsistencyError("mask shape does not match layout")
    d = next(iter(inputs.values())).k.shape[1] if inputs else 0
    k_tensor = np.zeros((layout.B, layout.L, d))
    v_tensor = np.zeros((layout.B, layout.L, d))
    # position of every cell within its request, for score reassembly
    token_at = np.full((layout.B, layout.L), -1, dtype=np.int64)
    for s in layout.segments:
        inp = inputs[s.request_id]
        if mask.grid[s.row, s.col_start:s.col_end].tolist() != [s.request_id] * s.length:
            raise ConsistencyError(f"mask disagrees with segment {s}")
        tok = slice(s.token_offset, s.token_offset + s.length)
        k_tensor[s.row, s.col_start:s.col_end] = inp.k[tok]
        v_tensor[s.row, s.col_start:s.col_end] = inp.v[tok]
        token_at[s.row, s.col_start:s.col_end] = np.arange(tok.start, tok.stop)

    outputs: Dict[int, np.ndarray] = {}
    scores: Dict[int, np.ndarray] = {}
    for rid, inp in inputs.items():
        if inp.kv_len != layout.kv_lens[rid] or mask.cells_of(rid) != inp.kv_len:
            raise ConsistencyError(f"request {rid}: KV length disagrees with layout/mask")
        rows = sorted({s.row for s in layout.segments if s.request_id == rid})
        logits = [inp.q @ k_tensor[r].T for r in rows]  # Q replicated per row
        gates = [mask.grid[r] == rid for r in rows]
        shift = np.max([np.where(g, lg, -np.inf).max(axis=1) for lg, g in zip(logits, gates)],
                       axis=0)[:, None]
        num = np.zeros((inp.q.shape[0], d))
        den = np.zeros((inp.q.shape[0], 1))
        f_rows = []
        for r, lg, g in zip(rows, logits, gates):
            f = np.exp(lg - shift) * g  # indicator zeroes other requests and padding
            num += f @ v_tensor[r]
            den += f.sum(axis=1, keepdims=True)
            f_rows.append((r, f))
        outputs[rid] = num / den
        if return_scores:
            a = np.zeros((inp.q.shape[0], inp.kv_len))
            for r, f in f_rows:
                cols = np.flatnonzero(mask.grid[r] == rid)
                a[:, token_at[r, cols]] = f[:, cols] / den
            scores[rid] = a
    return (outputs, scores) if return_scores else outputs


def random_attention_inputs(kv_lens: Sequence[int], window: int, d: int,
                            rng: np.random.Generator,
                            ids: Optional[Sequence[int]] = None) -> Dict[int, ToyAttentionInput]:
    """Toy Q/K/V with entries in [-1, 1] and ``window`` query rows per request."""
    if ids is None:
        ids = list(range(len(kv_lens)))
    out = {}
    for rid, n in zip(ids, kv_lens):
        out[rid] = ToyAttentionInput(q=rng.uniform(-1, 1, (window, d)),
                                     k=rng.uniform(-1, 1, (n, d)),
                                     v=rng.uniform(-1, 1, (n, d)))
    return out


@dataclass
class VerifyCost:
    kv_tokens: int       # B*L cells incl. padding
    padding_tokens: int
    extra_query_tokens: int  # Q rows copied for decomposed requests

    @property
    def total_tokens(self) -> int:
        return self.kv_tokens + self.extra_query_tokens


def verify_cost(kv_lens: Sequence[int], window: int, decompose: bool,
                width: Optional[int] = None) -> VerifyCost:
    """Token count charged to one verifier pass over a batch."""
    if len(kv_lens) == 0:
        return VerifyCost(0, 0, 0)
    if not decompose:
        n = len(kv_lens)
        pad = naive_padding(kv_lens)
        return VerifyCost(n * max(kv_lens), pad, 0)
    layout = pack(kv_lens, width or len(kv_lens))
    extra = sum(c - 1 for c in layout.q_replica_rows.values()) * window
    return VerifyCost(layout.B * layout.L, layout.padding_tokens, extra)
