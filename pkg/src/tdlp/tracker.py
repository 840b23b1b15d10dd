"""Online tracker: detection filtering, learned association, track lifecycle.

No motion prediction, camera compensation or appearance galleries; every
non-removed track (tentative, confirmed, lost) is scored against the current
detections each frame and matched by gated optimal assignment.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .assoc import associate
from .features import assemble_inputs
from .model import ModelConfig, forward, load_checkpoint
from .mot_io import ClipSample, ClipTrack, DetectionRecord, SequenceData

logger = logging.getLogger(__name__)

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
LOST = "lost"


@dataclass
class TrackerConfig:
    theta_det: float = 0.4
    theta_link: float = 0.1
    theta_new: float = 0.5
    t_init: int = 1
    t_lost: int = 30
    history_len: int = 20
    remove_tentative_on_miss: bool = True

    def __post_init__(self):
        for name in ("theta_det", "theta_link", "theta_new"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.t_init < 0:
            raise ValueError("t_init must be >= 0")
        if self.t_lost < 1:
            raise ValueError("t_lost must be >= 1")
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def preset(cls, name: str) -> "TrackerConfig":
        presets = {
            "dancetrack": cls(theta_det=0.4, theta_link=0.015, theta_new=0.9,
                              t_init=3, t_lost=50, history_len=50),
            "sportsmot": cls(theta_det=0.1, theta_link=0.01, theta_new=0.4,
                             t_init=1, t_lost=150, history_len=150),
            "bee24": cls(theta_det=0.6, theta_link=0.65, theta_new=0.6,
                         t_init=0, t_lost=50, history_len=50),
            "motchallenge": cls(theta_det=0.5, theta_link=0.05, theta_new=0.55,
                                t_init=1, t_lost=50, history_len=50),
        }
        presets["soccernet"] = presets["sportsmot"]
        if name not in presets:
            raise ValueError(f"unknown preset {name!r} (have {sorted(presets)})")
        return presets[name]


@dataclass
class Track:
    id: int
    state: str
    history: list[DetectionRecord]  # ring of up to history_len observations
    hits: int
    frames_since_update: int
    last_conf: float
    spawn_conf: float


class TdlpScorer:
    """Scores track histories against detections with a trained model."""

    def __init__(self, params, cfg: ModelConfig, stats, mode: str = "tdlp"):
        self.params = params
        self.cfg = cfg
        self.stats = stats
        self.mode = mode

    @classmethod
    def from_checkpoint(cls, path, mode: str = "tdlp") -> "TdlpScorer":
        params, cfg, stats = load_checkpoint(path)
        return cls(params, cfg, stats, mode=mode)

    def __call__(self, histories, detections, frame: int) -> np.ndarray:
        window = self.cfg.history_len
        clip = ClipSample(
            track_histories=[ClipTrack(identity=i, observations=list(obs)[-window:])
                             for i, obs in enumerate(histories)],
            final_detections=list(detections),
            labels=np.zeros((len(histories), len(detections)), dtype=np.int8),
            clip_length=self.cfg.history_len,
            frame=frame,
        )
        inputs = assemble_inputs(clip, self.stats, modalities=self.cfg.modalities,
                                 minmax_scope=self.cfg.minmax_scope,
                                 keypoint_conf=self.cfg.keypoint_conf)
        result = forward(self.params, self.cfg, inputs, mode=self.mode)
        return result.score_matrix()


class Tracker:
    """Single-sequence stateful tracker; one instance per sequence."""

    def __init__(self, scorer, config: TrackerConfig, associate_fn=None):
        self.scorer = scorer
        self.config = config
        self.associate = associate_fn or (lambda s, th: associate(s, th))
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame: int | None = None

    def _new_track(self, det: DetectionRecord) -> Track:
        cfg = self.config
        state = CONFIRMED if (cfg.t_init == 0 and det.conf >= cfg.theta_new) else TENTATIVE
        track = Track(
            id=self._next_id,
            state=state,
            history=[det],
            hits=0,
            frames_since_update=0,
            last_conf=det.conf,
            spawn_conf=det.conf,
        )
        self._next_id += 1
        return track

    def step(self, frame: int, detections) -> list[tuple[int, DetectionRecord]]:
        """Advance one frame; returns (track id, matched detection) for every
        confirmed track updated this frame."""
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(
                f"frame index must increase (got {frame} after {self._last_frame})"
            )
        self._last_frame = frame
        cfg = self.config
        dets = [d for d in detections if d.conf >= cfg.theta_det]
        matched_tracks: set[int] = set()
        matched_dets: set[int] = set()
        outputs: list[tuple[int, DetectionRecord]] = []
        if self.tracks and dets:
            scores = self.scorer([t.history for t in self.tracks], dets, frame)
            result = self.associate(np.asarray(scores), cfg.theta_link)
            for ti, dj, _ in result.matches:
                track = self.tracks[ti]
                det = dets[dj]
                track.history.append(det)
                if len(track.history) > cfg.history_len:
                    track.history = track.history[-cfg.history_len:]
                track.hits += 1
                track.frames_since_update = 0
                track.last_conf = det.conf
                if track.hits >= cfg.t_init and track.spawn_conf >= cfg.theta_new:
                    track.state = CONFIRMED
                matched_tracks.add(ti)
                matched_dets.add(dj)
        survivors: list[Track] = []
        for ti, track in enumerate(self.tracks):
            if ti in matched_tracks:
                survivors.append(track)
                continue
            track.frames_since_update += 1
            if track.state == TENTATIVE and cfg.remove_tentative_on_miss:
                continue
            if track.frames_since_update > cfg.t_lost:
                continue
            if track.state == CONFIRMED:
                track.state = LOST
            survivors.append(track)
        self.tracks = survivors
        for dj, det in enumerate(dets):
            if dj in matched_dets:
                continue
            if det.conf >= cfg.theta_new:
                self.tracks.append(self._new_track(det))
        for track in self.tracks:
            if track.state == CONFIRMED and track.frames_since_update == 0:
                outputs.append((track.id, track.history[-1]))
        return outputs


def run_sequence(detections: SequenceData, scorer, config: TrackerConfig) -> SequenceData:
    """Track a whole sequence; ids are never reused within the output."""
    out = SequenceData(name=detections.name, image_size=detections.image_size)
    frames = detections.frame_ids()
    if not frames:
        return out
    tracker = Tracker(scorer, config)
    for frame in range(frames[0], frames[-1] + 1):
        dets = detections.frames.get(frame, [])
        results = tracker.step(frame, dets)
        if results:
            out.frames[frame] = [
                dataclasses.replace(det, id=tid, frame=frame) for tid, det in results
            ]
    return out
