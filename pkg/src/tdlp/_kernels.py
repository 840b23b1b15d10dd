"""Numeric inner-loop kernels.

The ``*_py`` functions are plain Python/numpy.  At import time each public
name (``lsap_square``, ``maxcard_mincost``, ``lex_assign``, ``iou_matrix``)
is bound to an ``@njit``-compiled version unless the environment variable
``TDLP_NO_NUMBA=1`` is set, in which case the interpreted versions are used.
Both paths produce identical results; ``benchmarks/bench_kernels.py`` times
one against the other by toggling the flag in subprocesses.

Kernels call each other through the public aliases so the whole chain stays
inside nopython mode when numba is active.
"""

from __future__ import annotations

import os

import numpy as np


def lsap_square_py(a):
    """Minimum-cost perfect matching on a square cost matrix.

    Jonker-Volgenant style shortest augmenting path, O(n^3).  Returns
    ``row_to_col`` with one column per row.  Scan order is fixed, so the
    result is deterministic; global lexicographic minimality among ties is
    ``lex_assign``'s job.
    """
    n = a.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to col j, 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, n + 1):
        if p[j] > 0:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col


def maxcard_mincost_py(cost, allowed):
    """Maximum-cardinality then minimum-cost matching on allowed edges.

    Rectangular; rows/columns may stay unmatched.  Implemented by padding
    to a square problem where every real edge carries a bonus large enough
    that cardinality dominates cost.  Returns ``row_to_col`` (-1 = free).
    """
    n, m = cost.shape
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return out
    cabs = 1.0
    for i in range(n):
        for j in range(m):
            if allowed[i, j]:
                c = abs(cost[i, j])
                if c > cabs:
                    cabs = c
    nm = n if n < m else m
    bonus = 2.0 * nm * cabs + 1.0
    forbid = 2.0 * (n + m) * (bonus + cabs) + 1.0
    size = n + m
    a = np.full((size, size), forbid)
    for i in range(n):
        for j in range(m):
            if allowed[i, j]:
                a[i, j] = cost[i, j] - bonus
    for i in range(n):
        a[i, m + i] = 0.0  # row i unmatched via its own dummy column
    for j in range(m):
        a[n + j, j] = 0.0  # column j unmatched via its own dummy row
    for i in range(m):
        for j in range(n):
            a[n + i, m + j] = 0.0  # dummy-dummy pairs are free
    r2c = lsap_square(a)
    for i in range(n):
        if r2c[i] < m:
            out[i] = r2c[i]
    return out


def lex_assign_py(cost, allowed):
    """Lexicographically smallest optimal matching.

    Among all maximum-cardinality minimum-cost matchings, returns the one
    whose (row, col) sequence, sorted by row, is lexicographically smallest.
    Greedy fix-and-verify: a pair is kept iff an optimal completion still
    exists, checked with a sub-solve on the remaining rows/columns.
    """
    n, m = cost.shape
    base = maxcard_mincost(cost, allowed)
    out = np.full(n, -1, dtype=np.int64)
    kstar = 0
    cstar = 0.0
    for i in range(n):
        if base[i] >= 0:
            kstar += 1
            cstar += cost[i, base[i]]
    if kstar == 0:
        return out
    tol = 1e-6 * (1.0 + abs(cstar))
    col_used = np.zeros(m, dtype=np.bool_)
    k_rem = kstar
    c_rem = cstar
    for t in range(n):
        if k_rem == 0:
            break
        for d in range(m):
            if col_used[d] or not allowed[t, d]:
                continue
            nr = n - t - 1
            free_cols = np.empty(m, dtype=np.int64)
            nc = 0
            for j in range(m):
                if not col_used[j] and j != d:
                    free_cols[nc] = j
                    nc += 1
            sub_cost = np.empty((nr, nc))
            sub_allowed = np.zeros((nr, nc), dtype=np.bool_)
            for ii in range(nr):
                for jj in range(nc):
                    sub_cost[ii, jj] = cost[t + 1 + ii, free_cols[jj]]
                    sub_allowed[ii, jj] = allowed[t + 1 + ii, free_cols[jj]]
            sub = maxcard_mincost(sub_cost, sub_allowed)
            k_sub = 0
            c_sub = 0.0
            for ii in range(nr):
                if sub[ii] >= 0:
                    k_sub += 1
                    c_sub += sub_cost[ii, sub[ii]]
            if k_sub == k_rem - 1 and abs(c_sub - (c_rem - cost[t, d])) <= tol:
                out[t] = d
                col_used[d] = True
                k_rem -= 1
                c_rem -= cost[t, d]
                break
    return out


def iou_matrix_py(a, b):
    """Pairwise IoU of xywh boxes, (n, 4) x (m, 4) -> (n, m)."""
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax2 = a[i, 0] + a[i, 2]
        ay2 = a[i, 1] + a[i, 3]
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            iw = min(ax2, b[j, 0] + b[j, 2]) - max(a[i, 0], b[j, 0])
            if iw <= 0.0:
                continue
            ih = min(ay2, b[j, 1] + b[j, 3]) - max(a[i, 1], b[j, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + b[j, 2] * b[j, 3] - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


USE_NUMBA = os.environ.get("TDLP_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    from numba import njit

    lsap_square = njit(cache=True)(lsap_square_py)
    maxcard_mincost = njit(cache=True)(maxcard_mincost_py)
    lex_assign = njit(cache=True)(lex_assign_py)
    iou_matrix = njit(cache=True)(iou_matrix_py)
else:
    lsap_square = lsap_square_py
    maxcard_mincost = maxcard_mincost_py
    lex_assign = lex_assign_py
    iou_matrix = iou_matrix_py
