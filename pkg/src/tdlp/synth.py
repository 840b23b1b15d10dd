"""Synthetic trajectories: controlled single-track scenarios and full worlds.

Boxes are 5-vectors ``(x, y, w, h, c)`` in normalized image coordinates.
Kinematics: ``x_{t+1} = x_t + v_t``, ``v_{t+1} = v_t + a``; confidence decays
additively and clamps at a 0.05 floor.  Coordinates are clamped so boxes stay
inside the unit square (clamp events are reported, not fatal).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mot_io import DetectionRecord, SequenceData

logger = logging.getLogger(__name__)

CONF_FLOOR = 0.05

PATTERN_KINDS = (
    "static",
    "static_conf_decay",
    "linear",
    "linear_conf_decay",
    "nonlinear_accel",
    "nonlinear_curve",
)

_PATTERN_DEFAULTS = {
    "static": {},
    "static_conf_decay": {"dc": -0.02},
    "linear": {"dx": 0.01, "dy": 0.008},
    "linear_conf_decay": {"dx": 0.003, "dc": -0.01},
    "nonlinear_accel": {"ax": 0.0001, "ay": 0.00005},
    "nonlinear_curve": {"dx": 0.002, "ay": -0.0003},
}


@dataclass
class MotionPattern:
    """One of the six motion kinds with its kinematic parameters."""

    kind: str
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown motion kind {self.kind!r}")
        merged = dict(_PATTERN_DEFAULTS[self.kind])
        merged.update(self.params)
        self.params = merged
        for v in self.params.values():
            if not math.isfinite(v):
                raise ValueError(f"non-finite pattern parameter in {self.params}")

    def initial_velocity(self) -> tuple[float, float]:
        return (self.params.get("dx", 0.0), self.params.get("dy", 0.0))

    def acceleration(self) -> tuple[float, float]:
        return (self.params.get("ax", 0.0), self.params.get("ay", 0.0))

    def conf_decay(self) -> float:
        return self.params.get("dc", 0.0)


def default_negative_offsets():
    """Unit offset templates; scale by ScenarioSpec.offset_scale."""
    return [
        (1.0, 1.0, 1.0, 1.0, 0.0),
        (1.0, 0.0, 0.0, 0.0, 0.0),
        (0.0, 1.0, 0.0, 0.0, 0.0),
        (0.5, 0.5, 0.0, 0.0, -5.0),
    ]


@dataclass
class ScenarioSpec:
    """Single-track scenario: history, one true continuation, distractors."""

    history_length: int = 50
    base_box: tuple[float, float, float, float, float] = (0.30, 0.20, 0.05, 0.10, 0.95)
    negative_offsets: list[tuple[float, ...]] = field(default_factory=default_negative_offsets)
    offset_scale: float = 0.1

    def __post_init__(self):
        x, y, w, h, c = self.base_box
        if not (0 <= x <= 1 and 0 <= y <= 1 and 0 < w and 0 < h and x + w <= 1 and y + h <= 1):
            raise ValueError(f"base box {self.base_box} must lie inside the unit square")
        if not 0 <= c <= 1:
            raise ValueError("base confidence must be in [0, 1]")


@dataclass
class ScenarioData:
    history: np.ndarray  # (L, 5)
    positive: np.ndarray  # (5,)
    negatives: np.ndarray  # (K, 5)
    clamp_events: int = 0


def _clamp_box(state: np.ndarray) -> tuple[np.ndarray, bool]:
    x, y, w, h, c = state
    clamped = False
    w = max(w, 1e-4)
    h = max(h, 1e-4)
    nx = min(max(x, 0.0), max(1.0 - w, 0.0))
    ny = min(max(y, 0.0), max(1.0 - h, 0.0))
    if nx != x or ny != y:
        clamped = True
    nc = min(max(c, CONF_FLOOR), 1.0)
    return np.array([nx, ny, w, h, nc]), clamped


def simulate_states(pattern: MotionPattern, base_box, steps: int) -> tuple[np.ndarray, int]:
    """Roll the kinematics forward; returns (steps+1, 5) states and clamp count."""
    vx, vy = pattern.initial_velocity()
    ax, ay = pattern.acceleration()
    dc = pattern.conf_decay()
    states = np.empty((steps + 1, 5), dtype=np.float64)
    clamps = 0
    state, clamped = _clamp_box(np.asarray(base_box, dtype=np.float64))
    clamps += clamped
    states[0] = state
    x, y, w, h, c = state
    for t in range(1, steps + 1):
        x += vx
        y += vy
        vx += ax
        vy += ay
        c += dc
        state, clamped = _clamp_box(np.array([x, y, w, h, c]))
        clamps += clamped
        states[t] = state
        x, y = state[0], state[1]  # keep kinematics consistent with clamping
        c = state[4]
    if clamps:
        logger.debug("pattern %s: %d clamp events", pattern.kind, clamps)
    return states, clamps


def simulate_scenario(spec: ScenarioSpec, pattern: MotionPattern) -> ScenarioData:
    """History over frames [0, L-1], positive continuation at frame L, and one
    negative per offset template (positive + scale * template, clamped)."""
    L = spec.history_length
    states, clamps = simulate_states(pattern, spec.base_box, L)
    history = states[:L]
    positive = states[L]
    negatives = []
    for tmpl in spec.negative_offsets:
        neg = positive + spec.offset_scale * np.asarray(tmpl, dtype=np.float64)
        neg, clamped = _clamp_box(neg)
        clamps += clamped
        negatives.append(neg)
    return ScenarioData(
        history=history,
        positive=positive,
        negatives=np.array(negatives) if negatives else np.zeros((0, 5)),
        clamp_events=clamps,
    )


@dataclass
class WorldSpec:
    """Multi-object world for desk-scale training/evaluation."""

    n_objects: int = 8
    n_frames: int = 300
    image_size: tuple[int, int] = (1000, 1000)
    motion_weights: dict[str, float] = field(
        default_factory=lambda: {k: 1.0 for k in PATTERN_KINDS}
    )
    det_dropout: float = 0.1
    box_jitter: float = 0.02
    crossing_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name, rate in (
            ("det_dropout", self.det_dropout),
            ("box_jitter", self.box_jitter),
            ("crossing_rate", self.crossing_rate),
        ):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if self.n_objects < 1 or self.n_frames < 1:
            raise ValueError("n_objects and n_frames must be positive")
        bad = set(self.motion_weights) - set(PATTERN_KINDS)
        if bad:
            raise ValueError(f"unknown motion kinds in weights: {sorted(bad)}")


class _WorldObject:
    def __init__(self, kind, x, y, w, h, conf, vx, vy, ax, ay, dc):
        self.kind = kind
        self.x, self.y, self.w, self.h = x, y, w, h
        self.conf = conf
        self.vx, self.vy = vx, vy
        self.ax, self.ay = ax, ay
        self.dc = dc

    def step(self):
        self.x += self.vx
        self.y += self.vy
        self.vx += self.ax
        self.vy += self.ay
        self.conf = min(max(self.conf + self.dc, CONF_FLOOR), 1.0)
        # reflect at the borders so objects stay in view
        if self.x < 0.0:
            self.x = -self.x
            self.vx = abs(self.vx)
        elif self.x > 1.0 - self.w:
            self.x = 2.0 * (1.0 - self.w) - self.x
            self.vx = -abs(self.vx)
        if self.y < 0.0:
            self.y = -self.y
            self.vy = abs(self.vy)
        elif self.y > 1.0 - self.h:
            self.y = 2.0 * (1.0 - self.h) - self.y
            self.vy = -abs(self.vy)


def _sample_kinematics(kind: str, rng: np.random.Generator):
    """Randomized per-object kinematics bracketing the default parameters."""
    sign = lambda: float(rng.choice([-1.0, 1.0]))
    vx = vy = ax = ay = dc = 0.0
    if kind in ("linear", "linear_conf_decay"):
        vx = sign() * rng.uniform(0.003, 0.014)
        vy = sign() * rng.uniform(0.002, 0.012)
    if kind == "nonlinear_accel":
        ax = sign() * rng.uniform(0.00005, 0.0002)
        ay = sign() * rng.uniform(0.00003, 0.0001)
    if kind == "nonlinear_curve":
        vx = sign() * rng.uniform(0.001, 0.003)
        ay = sign() * rng.uniform(0.0001, 0.0005)
    if kind in ("static_conf_decay", "linear_conf_decay"):
        dc = -rng.uniform(0.003, 0.02)
    return vx, vy, ax, ay, dc


def _occluded_indices(objects) -> set[int]:
    """Indices of objects hidden behind a larger overlapping object."""
    out: set[int] = set()
    boxes = [(o.x, o.y, o.w, o.h) for o in objects]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            xi, yi, wi, hi = boxes[i]
            xj, yj, wj, hj = boxes[j]
            iw = min(xi + wi, xj + wj) - max(xi, xj)
            ih = min(yi + hi, yj + hj) - max(yi, yj)
            if iw <= 0 or ih <= 0:
                continue
            inter = iw * ih
            union = wi * hi + wj * hj - inter
            if union > 0 and inter / union > 0.4:
                out.add(i if wi * hi <= wj * hj else j)
    return out


def generate_world(spec: WorldSpec) -> tuple[SequenceData, SequenceData]:
    """Generate (ground truth, noisy detections) for one synthetic world.

    Ground truth keeps persistent positive ids; detections are the same boxes
    with jitter, dropout and confidence noise, ids stripped.  A
    ``crossing_rate`` fraction of objects is arranged in converging pairs so
    trajectories actually cross mid-sequence.

    Dropout has two components, both active only when ``det_dropout > 0``:
    independent per-box misses at the configured rate, plus occlusion misses
    (probability ``min(0.9, 8 * det_dropout)`` for the smaller box of any
    pair overlapping at IoU > 0.4), so crossings produce the detection gaps
    they would in real footage.
    """
    rng = np.random.default_rng(spec.seed)
    kinds = [k for k in PATTERN_KINDS if spec.motion_weights.get(k, 0.0) > 0]
    weights = np.array([spec.motion_weights[k] for k in kinds], dtype=np.float64)
    weights /= weights.sum()

    objects: list[_WorldObject] = []
    n_crossing = int(spec.crossing_rate * spec.n_objects) // 2 * 2
    cross_time = max(spec.n_frames // 2, 1)
    i = 0
    while i < n_crossing:
        # two objects aimed at a shared point at cross_time
        px, py = rng.uniform(0.3, 0.7, size=2)
        for _ in range(2):
            kind = str(rng.choice(["linear", "nonlinear_accel"]))
            w = rng.uniform(0.04, 0.08)
            h = rng.uniform(0.08, 0.14)
            x0, y0 = rng.uniform(0.05, 0.85, size=2)
            vx = (px - x0) / cross_time
            vy = (py - y0) / cross_time
            _, _, ax, ay, dc = _sample_kinematics(kind, rng)
            if kind == "nonlinear_accel":
                # leave the meeting point roughly intact under acceleration
                vx -= ax * cross_time / 2
                vy -= ay * cross_time / 2
            objects.append(_WorldObject(kind, x0, y0, w, h, rng.uniform(0.85, 1.0),
                                        vx, vy, ax, ay, dc))
            i += 1
    while len(objects) < spec.n_objects:
        kind = str(rng.choice(kinds, p=weights))
        w = rng.uniform(0.04, 0.08)
        h = rng.uniform(0.08, 0.14)
        x0 = rng.uniform(0.0, 1.0 - w)
        y0 = rng.uniform(0.0, 1.0 - h)
        vx, vy, ax, ay, dc = _sample_kinematics(kind, rng)
        objects.append(_WorldObject(kind, x0, y0, w, h, rng.uniform(0.85, 1.0),
                                    vx, vy, ax, ay, dc))

    W, H = spec.image_size
    gt = SequenceData(name=f"world-{spec.seed}", image_size=spec.image_size)
    det = SequenceData(name=f"world-{spec.seed}-det", image_size=spec.image_size)
    p_occ = min(0.9, 8.0 * spec.det_dropout)
    for frame in range(1, spec.n_frames + 1):
        gt_rows = []
        det_rows = []
        occluded = _occluded_indices(objects) if spec.det_dropout > 0 else set()
        for oid, obj in enumerate(objects, start=1):
            rec = DetectionRecord(
                frame=frame,
                id=oid,
                x=obj.x * W,
                y=obj.y * H,
                w=obj.w * W,
                h=obj.h * H,
                conf=obj.conf,
            )
            gt_rows.append(rec)
            dropped = rng.random() < spec.det_dropout
            if (oid - 1) in occluded and rng.random() < p_occ:
                dropped = True
            if not dropped:
                j = spec.box_jitter
                if j > 0:
                    dx = rng.uniform(-j, j) * rec.w
                    dy = rng.uniform(-j, j) * rec.h
                    dw = rng.uniform(-j, j) * rec.w
                    dh = rng.uniform(-j, j) * rec.h
                    conf = min(max(rec.conf - abs(rng.normal(0.0, j)), CONF_FLOOR), 1.0)
                else:
                    dx = dy = dw = dh = 0.0
                    conf = rec.conf
                det_rows.append(
                    DetectionRecord(
                        frame=frame,
                        id=-1,
                        x=rec.x + dx,
                        y=rec.y + dy,
                        w=max(rec.w + dw, 1e-3),
                        h=max(rec.h + dh, 1e-3),
                        conf=conf,
                    )
                )
            obj.step()
        gt.frames[frame] = gt_rows
        if det_rows:
            det.frames[frame] = det_rows
    return gt, det
