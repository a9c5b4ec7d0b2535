"""Capacity-constrained maximum-weight assignment of requests to SSMs.

Each SSM ``j`` is expanded into ``B_j`` identical replica columns and the
resulting bipartite graph is solved with the Kuhn-Munkres (Hungarian)
algorithm. Among optimal assignments the solver returns a canonical one:
request 0 gets the lowest SSM id it can take in some optimum, then request 1,
and so on (Unassigned ranks after every SSM).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

UNASSIGNED: Optional[int] = None


class MatchingInputError(ValueError):
    pass


class InstanceTooLargeError(ValueError):
    pass


@dataclass
class MatchingInstance:
    weights: np.ndarray
    capacities: Sequence[int]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise MatchingInputError("weights must be an N x M matrix")
        if self.weights.shape[1] != len(self.capacities):
            raise MatchingInputError(
                f"{self.weights.shape[1]} weight columns for {len(self.capacities)} capacities")
        if any(int(b) < 0 for b in self.capacities):
            raise MatchingInputError("capacities must be non-negative")
        self.capacities = [int(b) for b in self.capacities]
        if sum(self.capacities) < 1:
            raise MatchingInputError("total capacity must be >= 1")

    @property
    def num_requests(self) -> int:
        return self.weights.shape[0]

    @property
    def num_ssms(self) -> int:
        return self.weights.shape[1]


@dataclass
class MatchResult:
    assignment: Dict[int, Optional[int]]
    total_weight: float

    def counts(self, num_ssms: int) -> List[int]:
        c = [0] * num_ssms
        for j in self.assignment.values():
            if j is not None:
                c[j] += 1
        return c


def clamp_infinite(weights: np.ndarray) -> np.ndarray:
    """Replace +inf (optimistic cold-start) by max finite weight + 1."""
    w = np.array(weights, dtype=float)
    if np.isnan(w).any() or np.isneginf(w).any():
        raise MatchingInputError("weights must not be NaN or -inf")
    pos = np.isposinf(w)
    if pos.any():
        finite = w[~pos]
        top = float(finite.max()) if finite.size else 0.0
        w[pos] = top + 1.0
    return w


def expand_replicas(instance: MatchingInstance) -> tuple[np.ndarray, np.ndarray]:
    """Square weight matrix with one column per SSM replica.

    Returns ``(matrix, column_ssm)`` where ``column_ssm[c]`` is the SSM behind
    column ``c`` or -1 for a zero-weight dummy column. Dummy rows are appended
    when requests are fewer than replicas.
    """
    w = instance.weights
    n_req = w.shape[0]
    column_ssm = np.repeat(np.arange(instance.num_ssms), instance.capacities)
    rect = w[:, column_ssm] if n_req else np.zeros((0, column_ssm.size))
    n = max(n_req, column_ssm.size)
    square = np.zeros((n, n))
    square[:n_req, :column_ssm.size] = rect
    column_ssm = np.concatenate([column_ssm, np.full(n - column_ssm.size, -1)])
    return square, column_ssm


def _hungarian(cost: np.ndarray):
    """Minimum-cost perfect matching on a square matrix.

    Returns ``(row_of_col, u, v)`` with 0-based ``row_of_col`` and the dual
    potentials (``cost[i, j] - u[i] - v[j] >= 0``, equality on the matching).
    """
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    return p[1:] - 1, u[1:], v[1:]


def _canonicalize(tight: np.ndarray, row_of_col: np.ndarray, n_req: int,
                  column_ssm: np.ndarray, num_ssms: int) -> np.ndarray:
    """Pick the lexicographically smallest optimum inside the tight subgraph."""
    n = tight.shape[0]
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col] = np.arange(n)
    row_of_col = row_of_col.copy()
    fixed_rows = np.zeros(n, dtype=bool)
    fixed_cols = np.zeros(n, dtype=bool)

    def reroute(row: int, target_col: int) -> bool:
        # move row onto target_col; the displaced row must reach the freed column
        freed = col_of_row[row]
        displaced = row_of_col[target_col]
        if displaced == row:
            return True
        # alternating path from `displaced` to `freed` over tight, unfixed edges
        parent = {}
        stack = [displaced]
        seen_cols = {target_col}
        found = False
        while stack and not found:
            r = stack.pop()
            for c in np.flatnonzero(tight[r]):
                c = int(c)
                if fixed_cols[c] or c in seen_cols:
                    continue
                seen_cols.add(c)
                parent[c] = r
                if c == freed:
                    found = True
                    break
                nxt = int(row_of_col[c])
                if nxt == row or fixed_rows[nxt]:
                    continue
                stack.append(nxt)
        if not found:
            return False
        c = freed
        while True:
            r = parent[c]
            prev = int(col_of_row[r])
            row_of_col[c] = r
            col_of_row[r] = c
            if r == displaced:
                break
            c = prev
        row_of_col[target_col] = row
        col_of_row[row] = target_col
        return True

    # column preference per row: SSM ids ascending, dummy columns last
    order_key = np.where(column_ssm < 0, num_ssms, column_ssm)
    for r in range(n_req):
        current_key = order_key[col_of_row[r]]
        for key in range(num_ssms + 1):
            if key >= current_key:
                break
            cols = [int(c) for c in np.flatnonzero((order_key == key) & tight[r] & ~fixed_cols)]
            if any(reroute(r, c) for c in cols):
                break
        fixed_rows[r] = True
        fixed_cols[col_of_row[r]] = True
    return col_of_row


def solve_max_weight_matching(instance: MatchingInstance) -> MatchResult:
    w = instance.weights
    if not np.isfinite(w).all():
        raise MatchingInputError("weights must be finite (clamp cold-start +inf first)")
    n_req = instance.num_requests
    if n_req == 0:
        return MatchResult({}, 0.0)
    square, column_ssm = expand_replicas(instance)
    scale = max(1.0, float(np.abs(square).max()))
    cost = -square / scale
    row_of_col, u, v = _hungarian(cost)
    reduced = cost - u[:, None] - v[None, :]
    tight = reduced <= 1e-9 * square.shape[0]
    tight[row_of_col, np.arange(square.shape[0])] = True
    col_of_row = _canonicalize(tight, row_of_col, n_req, column_ssm, instance.num_ssms)
    assignment: Dict[int, Optional[int]] = {}
    total = 0.0
    for i in range(n_req):
        j = int(column_ssm[col_of_row[i]])
        if j < 0:
            assignment[i] = UNASSIGNED
        else:
            assignment[i] = j
            total += float(w[i, j])
    return MatchResult(assignment, total)


def brute_force_matching(instance: MatchingInstance) -> MatchResult:
    """Exhaustive search over capacity-feasible assignments (test oracle).

    Assigns exactly ``min(N, sum(B))`` requests, like the replica expansion.
    """
    n_req, m = instance.weights.shape
    caps = instance.capacities
    if n_req > 8 or sum(caps) > 8:
        raise InstanceTooLargeError("brute force limited to N <= 8 and sum(B) <= 8")
    need = min(n_req, sum(caps))
    w = instance.weights
    best_total = -np.inf
    best = None
    choices = list(range(m)) + [None]
    for combo in itertools.product(choices, repeat=n_req):
        used = [0] * m
        ok = True
        assigned = 0
        for j in combo:
            if j is not None:
                used[j] += 1
                assigned += 1
                if used[j] > caps[j]:
                    ok = False
                    break
        if not ok or assigned != need:
            continue
        total = sum(float(w[i, j]) for i, j in enumerate(combo) if j is not None)
        if total > best_total:
            best_total = total
            best = combo
    return MatchResult({i: j for i, j in enumerate(best)}, float(best_total))
