"""Assignment solver checked against exhaustive enumeration."""

import itertools

import numpy as np
import pytest

from tdlp.assoc import AssignmentResult, associate, hungarian_solve

from util import brute_force_assignment as brute_force


def test_diagonal_optimum():
    assert hungarian_solve([[1.0, 2.0], [2.0, 1.0]]) == [(0, 0), (1, 1)]


def test_empty_shapes():
    assert hungarian_solve(np.zeros((0, 3))) == []
    assert hungarian_solve(np.zeros((3, 0))) == []


def test_matches_brute_force_3x3_integers():
    rng = np.random.default_rng(7)
    for _ in range(50):
        cost = rng.integers(0, 10, size=(3, 3)).astype(float)
        pairs = hungarian_solve(cost)
        got = sum(cost[i, j] for i, j in pairs)
        want = min(
            sum(cost[i, p] for i, p in enumerate(perm))
            for perm in itertools.permutations(range(3))
        )
        assert got == want


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force_rectangular_with_forbidden(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 6, size=2)
    cost = rng.normal(size=(n, m)) * 5
    forbidden = rng.random((n, m)) < 0.3
    pairs = hungarian_solve(cost, forbidden=forbidden)
    card, total, lex_pairs = brute_force(cost, forbidden)
    assert len(pairs) == card
    assert sum(cost[i, j] for i, j in pairs) == pytest.approx(total, abs=1e-9)
    assert pairs == lex_pairs


def test_lexicographic_tie_break():
    # all costs equal: any perfect matching is optimal; lexicographic
    # smallest is the identity pairing
    cost = np.zeros((3, 3))
    assert hungarian_solve(cost) == [(0, 0), (1, 1), (2, 2)]
    # two optima: (0,1),(1,0) and (0,0),(1,1) both cost 2 -> pick latter
    cost = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert hungarian_solve(cost) == [(0, 0), (1, 1)]


def test_infinite_cost_on_allowed_edge_rejected():
    with pytest.raises(ValueError):
        hungarian_solve([[np.inf, 1.0], [1.0, 1.0]])
    # inf on a forbidden edge is fine
    pairs = hungarian_solve(
        [[np.inf, 1.0], [1.0, 1.0]], forbidden=[[True, False], [False, False]]
    )
    assert pairs == [(0, 1), (1, 0)]


def test_associate_gating():
    res = associate(np.array([[0.9, 0.1], [0.2, 0.8]]), 0.5)
    assert [(i, j) for i, j, _ in res.matches] == [(0, 0), (1, 1)]
    assert res.unmatched_tracks == [] and res.unmatched_detections == []


def test_associate_all_gated():
    res = associate(np.array([[0.4]]), 0.5)
    assert res.matches == []
    assert res.unmatched_tracks == [0]
    assert res.unmatched_detections == [0]


def test_associate_strict_inequality_at_gate():
    res = associate(np.array([[0.5]]), 0.5)
    assert res.matches == []


def test_associate_zero_gate_max_cardinality():
    rng = np.random.default_rng(3)
    s = rng.uniform(0.01, 1.0, size=(4, 6))
    res = associate(s, 0.0)
    assert len(res.matches) == 4


def test_associate_brute_force_score_sum():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n, m = rng.integers(1, 7, size=2)
        s = rng.uniform(0, 1, size=(n, m))
        theta = float(rng.uniform(0, 0.8))
        res = associate(s, theta)
        card, total, _ = brute_force(-s, forbidden=s <= theta)
        assert len(res.matches) == card
        assert sum(v for _, _, v in res.matches) == pytest.approx(-total, abs=1e-9)
        for _, _, v in res.matches:
            assert v > theta


def test_gating_monotonicity():
    rng = np.random.default_rng(5)
    s = rng.uniform(0, 1, size=(5, 5))
    counts = [len(associate(s, th).matches) for th in np.linspace(0, 1, 21)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_result_partitions_indices():
    rng = np.random.default_rng(9)
    s = rng.uniform(0, 1, size=(4, 3))
    res = associate(s, 0.3)
    t_all = sorted([i for i, _, _ in res.matches] + res.unmatched_tracks)
    d_all = sorted([j for _, j, _ in res.matches] + res.unmatched_detections)
    assert t_all == list(range(4))
    assert d_all == list(range(3))
