"""Controlled-suite mechanics with scripted scorers; calibration; baselines."""

import numpy as np
import pytest

from tdlp.experiments import (
    LastBoxIouScorer,
    association_f1,
    calibrate_gate,
    greedy_associate,
    passfail_suite,
    rank_test,
    run_iou_greedy_baseline,
    scenario_histories_and_candidates,
    threshold_test,
)
from tdlp.mot_io import DetectionRecord, SequenceData
from tdlp.synth import MotionPattern, ScenarioSpec
from tdlp.tracker import TrackerConfig


class ConstantScorer:
    def __init__(self, value):
        self.value = value

    def __call__(self, histories, dets, frame):
        return np.full((len(histories), len(dets)), self.value)


class OracleScorer:
    """1.0 for the pattern-consistent continuation, 0.0 otherwise."""

    def __init__(self):
        self.expected = {}

    def prime(self, spec=None):
        spec = spec or ScenarioSpec()
        from tdlp.synth import PATTERN_KINDS

        for kind in PATTERN_KINDS:
            _, positive, _ = scenario_histories_and_candidates(spec, MotionPattern(kind))
            self.expected[kind] = positive

    def __call__(self, histories, dets, frame):
        out = np.zeros((len(histories), len(dets)))
        for j, d in enumerate(dets):
            for pos in self.expected.values():
                if abs(d.x - pos.x) < 1e-12 and abs(d.conf - pos.conf) < 1e-12 \
                        and abs(d.y - pos.y) < 1e-12:
                    out[:, j] = 1.0
        return out


def test_scenario_candidates_layout():
    hist, pos, negs = scenario_histories_and_candidates(
        ScenarioSpec(), MotionPattern("linear")
    )
    assert len(hist) == 50
    assert [o.frame for o in hist] == list(range(1, 51))
    assert pos.frame == 51 and len(negs) == 4
    assert all(n.frame == 51 for n in negs)


def test_rank_test_strict_inequality():
    scorer = ConstantScorer(1.0)
    hist, pos, negs = scenario_histories_and_candidates(
        ScenarioSpec(), MotionPattern("static")
    )
    assert rank_test(scorer, hist, pos, negs, pos.frame) is False  # ties fail


def test_threshold_test_boundary():
    hist, pos, negs = scenario_histories_and_candidates(
        ScenarioSpec(), MotionPattern("static")
    )
    assert threshold_test(ConstantScorer(1.0), hist, negs, 1.0, pos.frame) is True
    assert threshold_test(ConstantScorer(1.0), hist, negs, 0.999, pos.frame) is False
    assert threshold_test(ConstantScorer(0.0), hist, negs, 0.0, pos.frame) is True


def test_suite_constant_scorer_all_fail():
    suite = passfail_suite(ConstantScorer(1.0), theta=0.5, method="x")
    assert suite.rank.passed() == 0
    assert suite.threshold.passed() == 0
    assert suite.rank.total() == suite.threshold.total() == 24


def test_suite_oracle_scorer_all_pass():
    scorer = OracleScorer()
    scorer.prime()
    suite = passfail_suite(scorer, theta=0.5, method="oracle")
    assert suite.rank.passed() == 24
    assert suite.threshold.passed() == 24


def test_suite_deterministic_and_report():
    a = passfail_suite(ConstantScorer(0.3), theta=0.5)
    b = passfail_suite(ConstantScorer(0.3), theta=0.5)
    assert np.array_equal(a.rank.cells, b.rank.cells)
    assert np.array_equal(a.threshold.cells, b.threshold.cells)
    # constant 0.3 under gate 0.5: threshold passes everywhere, rank never
    assert a.threshold.passed() == 24 and a.rank.passed() == 0
    text = a.report()
    assert "rank test: 0/24" in text
    assert "threshold test: 24/24" in text
    assert "nonlinear curve" in text


def test_threshold_monotone_in_theta():
    scorer = ConstantScorer(0.4)
    passes = [passfail_suite(scorer, theta=t).threshold.passed()
              for t in (0.0, 0.39, 0.41, 1.0)]
    assert passes == [0, 0, 24, 24]


def test_rank_invariant_to_monotone_transform():
    rng = np.random.default_rng(0)

    class RandScorer:
        def __init__(self, transform):
            self.t = transform

        def __call__(self, histories, dets, frame):
            base = np.linspace(0.1, 0.9, len(dets))[None, :]
            return self.t(base)

    hist, pos, negs = scenario_histories_and_candidates(
        ScenarioSpec(), MotionPattern("linear")
    )
    for transform in (lambda x: x, lambda x: x**3, lambda x: np.exp(2 * x)):
        # positive listed first gets the LOWEST score here -> always fail
        assert rank_test(RandScorer(transform), hist, pos, negs, pos.frame) is False


def test_association_f1_and_calibration():
    # clips with separable scores: positives ~0.9, negatives ~0.2; some
    # tracks have no true continuation, so a too-low gate produces false
    # matches and the calibrated gate must clear the negatives
    rng = np.random.default_rng(1)
    outputs = []
    for k in range(6):
        n = 4
        labels = np.eye(n, dtype=np.int8)
        scores = rng.uniform(0.05, 0.3, size=(n, n))
        scores[np.diag_indices(n)] = rng.uniform(0.8, 0.95, size=n)
        if k % 2 == 0:  # last track's continuation is missing
            labels[n - 1, n - 1] = 0
            scores[n - 1, n - 1] = rng.uniform(0.05, 0.3)
        outputs.append((scores, labels))
    theta = calibrate_gate(outputs)
    assert 0.3 < theta < 0.8
    assert association_f1(outputs, theta) == 1.0
    # a gate above all scores kills recall
    assert association_f1(outputs, 0.99) == 0.0
    # without missing-positive clips the lower end is unconstrained and the
    # recall-preserving tie-break drops the gate below every score
    full = [(s, np.eye(4, dtype=np.int8)) for s, _ in outputs[1::2]]
    assert calibrate_gate(full) < 0.05


def test_greedy_associate():
    s = np.array([[0.9, 0.8], [0.85, 0.1]])
    res = greedy_associate(s, 0.0)
    assert [(i, j) for i, j, _ in res.matches] == [(0, 0), (1, 1)]  # greedy takes 0.9 first
    res2 = greedy_associate(s, 0.5)
    assert [(i, j) for i, j, _ in res2.matches] == [(0, 0)]
    assert res2.unmatched_tracks == [1] and res2.unmatched_detections == [1]


def test_iou_greedy_baseline_tracks_clean_sequence():
    frames = {}
    for f in range(1, 30):
        frames[f] = [
            DetectionRecord(f, -1, 10.0 + f, 10.0, 10.0, 10.0, 0.9),
            DetectionRecord(f, -1, 200.0 - f, 50.0, 10.0, 10.0, 0.9),
        ]
    seq = SequenceData(name="b", frames=frames)
    cfg = TrackerConfig(theta_det=0.3, theta_link=0.3, theta_new=0.5, t_init=1, t_lost=5)
    out = run_iou_greedy_baseline(seq, cfg)
    ids = {r.id for r in out.all_records()}
    assert len(ids) == 2
    scorer = LastBoxIouScorer()
    s = scorer([[frames[1][0]]], [frames[2][0]], 2)
    assert 0.5 < s[0, 0] < 1.0
