"""Scenario kinematics against hand-derived values; world generator contracts."""

import numpy as np
import pytest

from tdlp.synth import (
    CONF_FLOOR,
    MotionPattern,
    PATTERN_KINDS,
    ScenarioSpec,
    WorldSpec,
    generate_world,
    simulate_scenario,
    simulate_states,
)


def test_pattern_defaults():
    assert MotionPattern("static_conf_decay").params["dc"] == -0.02
    lin = MotionPattern("linear")
    assert (lin.params["dx"], lin.params["dy"]) == (0.01, 0.008)
    lcd = MotionPattern("linear_conf_decay")
    assert (lcd.params["dx"], lcd.params["dc"]) == (0.003, -0.01)
    acc = MotionPattern("nonlinear_accel")
    assert (acc.params["ax"], acc.params["ay"]) == (0.0001, 0.00005)
    cur = MotionPattern("nonlinear_curve")
    assert (cur.params["dx"], cur.params["ay"]) == (0.002, -0.0003)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        MotionPattern("zigzag")


def test_linear_one_step():
    states, _ = simulate_states(MotionPattern("linear"), (0.30, 0.20, 0.05, 0.10, 0.95), 1)
    assert states[1][0] == pytest.approx(0.31, abs=1e-12)
    assert states[1][1] == pytest.approx(0.208, abs=1e-12)


def test_static_history_constant():
    data = simulate_scenario(ScenarioSpec(), MotionPattern("static"))
    assert data.history.shape == (50, 5)
    assert np.all(data.history == data.history[0])
    assert np.array_equal(data.positive, data.history[-1])


def test_accel_closed_form():
    # v0 = 0, constant a: x_t = x0 + a * t(t-1)/2
    states, _ = simulate_states(
        MotionPattern("nonlinear_accel"), (0.30, 0.20, 0.05, 0.10, 0.95), 50
    )
    assert states[50][0] == pytest.approx(0.30 + 0.0001 * 50 * 49 / 2, abs=1e-12)
    assert states[50][1] == pytest.approx(0.20 + 0.00005 * 50 * 49 / 2, abs=1e-12)


def test_conf_decay_clamps_at_floor():
    states, _ = simulate_states(
        MotionPattern("static_conf_decay"), (0.30, 0.20, 0.05, 0.10, 0.95), 50
    )
    assert states[-1][4] == CONF_FLOOR
    assert np.all(states[:, 4] >= CONF_FLOOR)


def test_curve_clamps_inside_unit_square():
    data = simulate_scenario(ScenarioSpec(), MotionPattern("nonlinear_curve"))
    allb = np.vstack([data.history, data.positive[None], data.negatives])
    assert np.all(allb[:, 0] >= 0) and np.all(allb[:, 0] + allb[:, 2] <= 1 + 1e-9)
    assert np.all(allb[:, 1] >= 0) and np.all(allb[:, 1] + allb[:, 3] <= 1 + 1e-9)
    assert data.clamp_events > 0


def test_negative_offsets_applied():
    data = simulate_scenario(ScenarioSpec(), MotionPattern("static"))
    pos = data.positive
    s = 0.1
    assert np.allclose(data.negatives[0], pos + np.array([s, s, s, s, 0.0]))
    assert np.allclose(data.negatives[1], pos + np.array([s, 0, 0, 0, 0.0]))
    assert np.allclose(data.negatives[2], pos + np.array([0, s, 0, 0, 0.0]))
    exp3 = pos + np.array([s / 2, s / 2, 0, 0, -5 * s])
    assert np.allclose(data.negatives[3][:4], exp3[:4])
    assert data.negatives[3][4] == pytest.approx(0.95 - 0.5)


def test_base_box_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(base_box=(0.99, 0.2, 0.05, 0.1, 0.95))


def test_world_noise_free_limit():
    spec = WorldSpec(n_objects=4, n_frames=20, det_dropout=0.0, box_jitter=0.0, seed=3)
    gt, det = generate_world(spec)
    assert gt.num_records() == det.num_records() == 4 * 20
    for f in gt.frame_ids():
        for g, d in zip(gt.frames[f], det.frames[f]):
            assert d.id == -1
            assert (g.x, g.y, g.w, g.h, g.conf) == (d.x, d.y, d.w, d.h, d.conf)


def test_world_deterministic():
    spec = WorldSpec(n_objects=8, n_frames=300, seed=11)
    g1, d1 = generate_world(spec)
    g2, d2 = generate_world(spec)
    for f in g1.frame_ids():
        for a, b in zip(g1.frames[f], g2.frames[f]):
            assert (a.x, a.y, a.w, a.h, a.conf, a.id) == (b.x, b.y, b.w, b.h, b.conf, b.id)
    assert d1.num_records() == d2.num_records()


def test_world_dropout_fraction():
    spec = WorldSpec(
        n_objects=10, n_frames=1200, det_dropout=0.1, box_jitter=0.0,
        crossing_rate=0.0, seed=5,
    )
    gt, det = generate_world(spec)
    slots = gt.num_records()
    assert slots >= 10_000
    frac = 1.0 - det.num_records() / slots
    assert abs(frac - 0.1) < 0.02


def test_world_boxes_valid():
    gt, det = generate_world(WorldSpec(n_objects=8, n_frames=200, seed=2))
    for seq in (gt, det):
        for rec in seq.all_records():
            assert rec.w > 0 and rec.h > 0
            assert CONF_FLOOR <= rec.conf <= 1.0


def test_world_crossings_happen():
    spec = WorldSpec(n_objects=8, n_frames=200, crossing_rate=1.0, seed=7,
                     det_dropout=0.0, box_jitter=0.0)
    gt, _ = generate_world(spec)
    # some pair of distinct objects overlaps significantly at some frame
    from tdlp._kernels import iou_matrix

    best = 0.0
    for f in gt.frame_ids():
        boxes = np.array([r.box() for r in gt.frames[f]])
        iou = iou_matrix(boxes, boxes)
        np.fill_diagonal(iou, 0.0)
        best = max(best, iou.max())
    assert best > 0.3


def test_world_rejects_bad_rates():
    with pytest.raises(ValueError):
        WorldSpec(det_dropout=1.5)
    with pytest.raises(ValueError):
        WorldSpec(motion_weights={"warp": 1.0})


def test_all_pattern_kinds_simulate():
    for kind in PATTERN_KINDS:
        data = simulate_scenario(ScenarioSpec(), MotionPattern(kind))
        assert data.history.shape == (50, 5)
        assert data.negatives.shape == (4, 5)
        assert np.all(np.isfinite(data.history))
