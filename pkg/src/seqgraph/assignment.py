"""Exact linear assignment with a deterministic tie-break.

The solver is the shortest-augmenting-path form of the Hungarian method
(O(n^3)). Rectangular problems are padded with zero-cost dummy rows or
columns so that exactly ``min(n, m)`` real pairs are returned.

Among all optimal matchings the one whose sorted pair list is
lexicographically smallest is returned. Every optimal matching lives in the
equality subgraph of any optimal dual solution, so the canonical matching is
found greedily inside that subgraph.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

__all__ = ["Matching", "solve_assignment"]


@dataclass(frozen=True)
class Matching:
    pairs: List[Tuple[int, int]]
    objective: float


def _hungarian(cost: np.ndarray):
    """Minimize over a square matrix. Returns (row->col, u, v)."""
    n = cost.shape[0]
    # 1-based potentials; index 0 is the virtual source column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _canonicalize(tight: np.ndarray, row_to_col: np.ndarray, n_real_rows: int) -> np.ndarray:
    """Lexicographically smallest perfect matching of ``tight`` (boolean).

    ``row_to_col`` must already be a perfect matching of ``tight``.
    """
    n = tight.shape[0]
    row_to_col = row_to_col.copy()
    col_to_row = np.empty(n, dtype=np.int64)
    col_to_row[row_to_col] = np.arange(n)
    fixed_rows = np.zeros(n, dtype=bool)
    fixed_cols = np.zeros(n, dtype=bool)
    adjacency = [np.flatnonzero(tight[r]) for r in range(n)]

    def reroute(start_row: int, target_col: int, banned_row: int, banned_col: int):
        # alternating DFS: start_row must reach target_col through tight edges
        parent = {}
        seen_cols = {banned_col}
        stack = [start_row]
        while stack:
            r = stack.pop()
            for c in adjacency[r][::-1]:
                c = int(c)
                if c in seen_cols or fixed_cols[c]:
                    continue
                seen_cols.add(c)
                parent[c] = r
                if c == target_col:
                    return parent
                nxt = int(col_to_row[c])
                if nxt == banned_row or fixed_rows[nxt]:
                    continue
                stack.append(nxt)
        return None

    for i in range(n_real_rows):
        for j in adjacency[i]:
            j = int(j)
            if fixed_cols[j]:
                continue
            if row_to_col[i] == j:
                break
            r = int(col_to_row[j])
            old = int(row_to_col[i])
            parent = reroute(r, old, banned_row=i, banned_col=j)
            if parent is None:
                continue
            # flip the alternating path ending at the freed column
            c = old
            while True:
                rr = parent[c]
                prev = int(row_to_col[rr])
                row_to_col[rr] = c
                col_to_row[c] = rr
                if rr == r:
                    break
                c = prev
            row_to_col[i] = j
            col_to_row[j] = i
            break
        fixed_rows[i] = True
        fixed_cols[row_to_col[i]] = True
    return row_to_col


def solve_assignment(cost, sense: str = "minimize") -> Matching:
    """Optimal one-to-one assignment of ``min(n, m)`` row/column pairs.

    ``sense`` is ``"minimize"`` or ``"maximize"``. Ties between optimal
    matchings resolve to the lexicographically smallest sorted pair list.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise ValueError(f"cost matrix must be 2-D and non-empty, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix contains non-finite entries")
    if sense not in ("minimize", "maximize"):
        raise ValueError(f"unknown sense {sense!r}")

    n, m = c.shape
    size = max(n, m)
    work = np.zeros((size, size))
    work[:n, :m] = -c if sense == "maximize" else c

    row_to_col, u, v = _hungarian(work)
    reduced = work - u[:, None] - v[None, :]
    scale = max(1.0, float(np.max(np.abs(work))))
    tight = reduced <= 1e-11 * scale * size
    tight[np.arange(size), row_to_col] = True
    row_to_col = _canonicalize(tight, row_to_col, n)

    pairs = [(r, int(row_to_col[r])) for r in range(n) if row_to_col[r] < m]
    objective = float(sum(c[r, col] for r, col in pairs))
    return Matching(pairs=pairs, objective=objective)
