"""Gated optimal bipartite assignment between tracks and detections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import lex_assign


@dataclass
class AssignmentResult:
    """Partition of tracks and detections produced by :func:`associate`."""

    matches: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)


def hungarian_solve(cost, forbidden=None) -> list[tuple[int, int]]:
    """Optimal matching on a rectangular cost matrix.

    Maximizes cardinality over allowed edges, then minimizes total cost;
    among optimal solutions returns the one whose sorted (row, col) pair
    sequence is lexicographically smallest.

    Args:
        cost: (N, M) real matrix; entries on allowed edges must be finite.
        forbidden: optional (N, M) boolean mask; True edges cannot be used.

    Returns:
        List of (row, col) pairs sorted by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    if forbidden is None:
        allowed = np.ones(cost.shape, dtype=np.bool_)
    else:
        allowed = ~np.asarray(forbidden, dtype=np.bool_)
        if allowed.shape != cost.shape:
            raise ValueError("forbidden mask shape must match cost shape")
    if not np.all(np.isfinite(cost[allowed])):
        raise ValueError("allowed edges must have finite costs")
    if cost.size == 0:
        return []
    row_to_col = lex_assign(np.ascontiguousarray(cost), np.ascontiguousarray(allowed))
    return [(i, int(j)) for i, j in enumerate(row_to_col) if j >= 0]


def associate(scores, theta_link: float) -> AssignmentResult:
    """Gated assignment over link scores.

    Edges with score <= ``theta_link`` are forbidden ("exceeds" gating);
    the rest are matched maximizing total score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n, m = scores.shape
    forbidden = scores <= theta_link
    pairs = hungarian_solve(-scores, forbidden=forbidden)
    matched_t = {i for i, _ in pairs}
    matched_d = {j for _, j in pairs}
    return AssignmentResult(
        matches=[(i, j, float(scores[i, j])) for i, j in pairs],
        unmatched_tracks=[i for i in range(n) if i not in matched_t],
        unmatched_detections=[j for j in range(m) if j not in matched_d],
    )
