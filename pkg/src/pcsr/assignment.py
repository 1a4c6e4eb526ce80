"""Optimal-assignment solvers backing the earth mover's distance metric.

Two routes: an exact O(n^3) shortest-augmenting-path solver with row and
column potentials, and an epsilon-scaling auction for the sizes where the
exact route becomes slow. The auction's final assignment is within
n * epsilon of the optimal total cost, i.e. within epsilon of the optimal
mean per-pair cost.
"""

from __future__ import annotations

import numpy as np


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Exact minimum-cost perfect matching on a square cost matrix.

    Returns ``col`` with ``col[i]`` the column assigned to row i.
    Shortest augmenting paths with potentials; the per-row inner search is
    vectorized over columns.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    n = cost.shape[0]
    # 1-based arrays; column 0 is the virtual start column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    cols = np.arange(1, n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[cols[better]] = j0
            masked = np.where(free, minv[1:], np.inf)
            jmin = int(np.argmin(masked))
            delta = masked[jmin]
            used_idx = np.nonzero(used)[0]
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = jmin + 1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.int64)
    col[p[1:] - 1] = np.arange(n)
    return col


def _auction_round(benefit: np.ndarray, prices: np.ndarray, eps: float) -> np.ndarray:
    """One full auction at a fixed epsilon, warm-starting from the given prices.

    Mutates ``prices``; returns ``col[i]`` assignments.
    """
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)  # column -> row
    col_of = np.full(n, -1, dtype=np.int64)  # row -> column
    unassigned = list(range(n))
    while unassigned:
        rows = np.asarray(unassigned, dtype=np.int64)
        values = benefit[rows] - prices  # (r, n)
        best = values.argmax(axis=1)
        r_idx = np.arange(rows.shape[0])
        top = values[r_idx, best]
        values[r_idx, best] = -np.inf
        second = values.max(axis=1) if n > 1 else top - eps
        bids = prices[best] + (top - second) + eps
        # highest bid per column wins; ascending sort so the last write is the max
        order = np.argsort(bids, kind="stable")
        win_col = best[order]
        win_row = rows[order]
        win_bid = bids[order]
        chosen = np.full(n, -1, dtype=np.int64)
        chosen[win_col] = win_row
        top_bid = np.full(n, -np.inf)
        top_bid[win_col] = win_bid
        unassigned = []
        contested = np.nonzero(chosen >= 0)[0]
        for j in contested:
            prev = owner[j]
            if prev >= 0:
                col_of[prev] = -1
                unassigned.append(int(prev))
            owner[j] = chosen[j]
            col_of[chosen[j]] = j
            prices[j] = top_bid[j]
        losers = rows[col_of[rows] == -1]
        unassigned.extend(int(r) for r in losers)
    return col_of


def auction(cost: np.ndarray, eps_final: float) -> np.ndarray:
    """Epsilon-scaling auction assignment minimizing total cost.

    The returned assignment's total cost is within ``n * eps_final`` of
    optimal. Scaling shrinks epsilon by 8x per round, reusing prices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if eps_final <= 0:
        raise ValueError("eps_final must be positive")
    benefit = -cost
    spread = float(cost.max() - cost.min()) if cost.size else 1.0
    eps = max(eps_final, spread / 2.0) if spread > 0 else eps_final
    prices = np.zeros(cost.shape[0])
    while True:
        col = _auction_round(benefit, prices, eps)
        if eps <= eps_final:
            return col
        eps = max(eps_final, eps / 8.0)
