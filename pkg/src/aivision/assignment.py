"""Optimal bipartite assignment with per-cell feasibility gating.

Solves min-total-cost over maximum-cardinality feasible matchings with a
shortest-augmenting-path Hungarian (O(n^3)). Infeasible cells are priced out
with a finite penalty large enough that the solver always prefers one more
feasible pair over any cost saving.

Costs run through the solver as (cost, weight) pairs under lexicographic
order. The integer weight channel encodes a base-(n+1) positional preference:
earlier rows outweigh later ones, and within a row lower columns weigh less,
with "unmatched" weighing more than any real column. Among equal-cost optima
the solver therefore lands on the lexicographically smallest matching, which
no amount of after-the-fact pair swapping can guarantee (optimal matchings
can differ by cycles longer than a transposition).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

Matrix = Sequence[Sequence[float]]
GateFn = Callable[[int, int], bool]


def _hungarian(cf: list[list[float]], cw: list[list[int]]) -> list[int]:
    """Col matched to each row; square matrix with (cf, cw) lexicographic cost."""
    n = len(cf)
    INF = math.inf
    u_f = [0.0] * (n + 1)
    u_w = [0] * (n + 1)
    v_f = [0.0] * (n + 1)
    v_w = [0] * (n + 1)
    match = [0] * (n + 1)       # row (1-based) matched to each col, 0 = free
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv_f = [INF] * (n + 1)
        minv_w = [0] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta_f = INF
            delta_w = 0
            j1 = 0
            row_f = cf[i0 - 1]
            row_w = cw[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur_f = row_f[j - 1] - u_f[i0] - v_f[j]
                cur_w = row_w[j - 1] - u_w[i0] - v_w[j]
                if cur_f < minv_f[j] or (cur_f == minv_f[j] and cur_w < minv_w[j]):
                    minv_f[j] = cur_f
                    minv_w[j] = cur_w
                    way[j] = j0
                if minv_f[j] < delta_f or (minv_f[j] == delta_f and minv_w[j] < delta_w):
                    delta_f = minv_f[j]
                    delta_w = minv_w[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u_f[match[j]] += delta_f
                    u_w[match[j]] += delta_w
                    v_f[j] -= delta_f
                    v_w[j] -= delta_w
                else:
                    minv_f[j] -= delta_f
                    minv_w[j] -= delta_w
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_for_row = [-1] * n
    for j in range(1, n + 1):
        if match[j] != 0:
            col_for_row[match[j] - 1] = j - 1
    return col_for_row


def solve_assignment(cost: Matrix, gate: GateFn | None = None) -> list[tuple[int, int]]:
    """Minimum-cost matching over feasible cells, rows/cols used at most once.

    Maximizes the number of feasible pairs first, then minimizes their total
    cost. Ties resolve to the lexicographically smallest matching (lowest row
    index, then lowest column index). Returns row-sorted (row, col) pairs.
    """
    rows = len(cost)
    cols = len(cost[0]) if rows else 0
    if rows == 0 or cols == 0:
        return []

    feasible = [[gate is None or gate(r, c) for c in range(cols)] for r in range(rows)]
    finite = [cost[r][c] for r in range(rows) for c in range(cols) if feasible[r][c]]
    if not finite:
        return []
    for v in finite:
        if not math.isfinite(v):
            raise ValueError("feasible cells must have finite costs")
    lo, hi = min(finite), max(finite)
    n = max(rows, cols)
    big = (hi - lo + 1.0) * (n + 1)

    # Square the matrix out with penalty cells. A real row landing on an
    # infeasible or padding cell is simply unmatched; dummy rows carry zero
    # weight so they never influence the tie-break.
    base = n + 1
    work_f = []
    work_w = []
    for r in range(n):
        scale = base ** (n - 1 - r) if r < rows else 0
        row_f = []
        row_w = []
        for c in range(n):
            if r < rows and c < cols and feasible[r][c]:
                row_f.append(cost[r][c] - lo)
                row_w.append(scale * c)
            else:
                row_f.append(big)
                row_w.append(scale * n)
        work_f.append(row_f)
        work_w.append(row_w)

    col_for_row = _hungarian(work_f, work_w)

    pairs = []
    for r in range(rows):
        c = col_for_row[r]
        if c < cols and feasible[r][c]:
            pairs.append((r, c))
    return pairs
