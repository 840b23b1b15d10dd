"""Geometric feature pipeline: min-max, temporal differences, standardization.

Transform order for geometric modalities (bbox, keypoints): frame/window
min-max -> per-track first-order differences -> standardization.  Appearance
vectors bypass all of it.  Detections receive static features only; motion
features exist only for track observations.

Min-max population scope:
  * ``"window"`` (default): one statistic per dimension over every box and
    keypoint in the clip (all history observations plus final detections).
    Needed when a clip may contain a single track, where per-frame
    populations degenerate and would erase all motion information.
  * ``"frame"``: statistics per video frame over the observations recorded
    at that frame.
Confidence is never min-maxed (already in [0, 1]); keypoint coordinates are
pooled with box x/y so all positions share one coordinate frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mot_io import ClipSample

logger = logging.getLogger(__name__)

STD_EPS = 1e-6
RANGE_EPS = 1e-9

GEOMETRIC_MODALITIES = ("bbox", "keypoints")


@dataclass
class FeatureStats:
    """Per-dimension mean and std (std clamped to STD_EPS)."""

    mean: np.ndarray
    std: np.ndarray

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(
            mean=np.asarray(obj["mean"], dtype=np.float64),
            std=np.asarray(obj["std"], dtype=np.float64),
        )


def stats_to_json(stats: dict[str, FeatureStats]):
    return {k: v.to_json() for k, v in sorted(stats.items())}


def stats_from_json(obj) -> dict[str, FeatureStats]:
    return {k: FeatureStats.from_json(v) for k, v in obj.items()}


@dataclass
class ModalityInputs:
    """Padded model inputs for one modality."""

    track_static: np.ndarray  # (N, T, Ds)
    track_motion: np.ndarray | None  # (N, T, Ds); None for appearance
    track_mask: np.ndarray  # (N, T) bool, True = real observation
    track_pos: np.ndarray  # (N, T) int64, reversed positions (latest = 0)
    det_static: np.ndarray  # (M, Ds)


@dataclass
class ClipInputs:
    modalities: dict[str, ModalityInputs]
    n_tracks: int
    n_detections: int


def apply_minmax(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """(x - lo) / (hi - lo) per dimension; degenerate dimensions map to 0.5."""
    span = hi - lo
    out = np.empty_like(values, dtype=np.float64)
    for d in range(values.shape[-1]):
        if span[d] < RANGE_EPS:
            out[..., d] = 0.5
        else:
            out[..., d] = (values[..., d] - lo[d]) / span[d]
    return out


def minmax_normalize_frame(geometry: np.ndarray) -> np.ndarray:
    """Normalize one frame's (n, 5) geometry vectors (x, y, w, h, conf).

    Min/max are taken over the n objects per dimension; the confidence
    column passes through unchanged.
    """
    geometry = np.asarray(geometry, dtype=np.float64)
    if geometry.ndim != 2 or geometry.shape[0] < 1:
        raise ValueError("expected a non-empty (n, d) array")
    geo = geometry[:, :4]
    lo = geo.min(axis=0)
    hi = geo.max(axis=0)
    out = geometry.copy()
    out[:, :4] = apply_minmax(geo, lo, hi)
    return out


def temporal_differences(values: np.ndarray, timestamps: np.ndarray) -> np.ndarray:
    """First-order differences over one track's observation sequence.

    ``delta[t] = (x[t] - x[tau]) / (t - tau)`` with ``tau`` the previous
    observation; the first observation gets zeros.  Gaps are handled by the
    division; timestamps must be strictly increasing.
    """
    values = np.asarray(values, dtype=np.float64)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if values.shape[0] != timestamps.shape[0]:
        raise ValueError("values and timestamps length mismatch")
    if np.any(np.diff(timestamps) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    out = np.zeros_like(values)
    if values.shape[0] > 1:
        dt = np.diff(timestamps)[:, None]
        out[1:] = (values[1:] - values[:-1]) / dt
    return out


def fit_standardizer_from_arrays(arrays) -> FeatureStats:
    """Population mean/std over stacked samples; zero-variance dims clamp."""
    data = np.concatenate([a.reshape(-1, a.shape[-1]) for a in arrays], axis=0)
    if data.shape[0] < 2:
        raise ValueError("standardizer needs at least 2 samples")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    clamped = std < STD_EPS
    if clamped.any():
        logger.warning("standardizer: %d zero-variance dims clamped", int(clamped.sum()))
        std = np.where(clamped, STD_EPS, std)
    return FeatureStats(mean=mean, std=std)


def apply_standardizer(values: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return (values - stats.mean) / stats.std


def _keypoint_coords(vec: np.ndarray, keypoint_conf: bool) -> tuple[np.ndarray, np.ndarray]:
    """Split a keypoint vector into (K, 2) coords and (K,) confs (may be empty)."""
    if keypoint_conf:
        if vec.size % 3 != 0:
            raise ValueError("keypoint vector with confidences must have 3K entries")
        k = vec.size // 3
        return vec[: 2 * k].reshape(k, 2), vec[2 * k:]
    if vec.size % 2 != 0:
        raise ValueError("keypoint vector must have 2K entries")
    return vec.reshape(-1, 2), np.empty(0)


def _modality_vector(rec, modality: str) -> np.ndarray:
    feats = rec.modality_features or {}
    if modality not in feats:
        raise ValueError(
            f"modality '{modality}' missing on a record at frame {rec.frame}"
        )
    return np.asarray(feats[modality], dtype=np.float64)


class _MinMaxStats:
    """Per-dimension (x, y, w, h) min/max pools, per frame or per window."""

    def __init__(self, scope: str):
        if scope not in ("window", "frame"):
            raise ValueError(f"unknown minmax scope {scope!r}")
        self.scope = scope
        self.pools: dict[object, list[np.ndarray]] = {}

    def _key(self, frame: int):
        return frame if self.scope == "frame" else "window"

    def add(self, frame: int, xs, ys, ws=None, hs=None):
        pool = self.pools.setdefault(self._key(frame), [[], [], [], []])
        pool[0].append(np.atleast_1d(np.asarray(xs, dtype=np.float64)))
        pool[1].append(np.atleast_1d(np.asarray(ys, dtype=np.float64)))
        if ws is not None:
            pool[2].append(np.atleast_1d(np.asarray(ws, dtype=np.float64)))
            pool[3].append(np.atleast_1d(np.asarray(hs, dtype=np.float64)))

    def bounds(self, frame: int) -> tuple[np.ndarray, np.ndarray]:
        pool = self.pools[self._key(frame)]
        lo = np.empty(4)
        hi = np.empty(4)
        for d in range(4):
            vals = np.concatenate(pool[d]) if pool[d] else np.zeros(1)
            lo[d] = vals.min()
            hi[d] = vals.max()
        return lo, hi


def _collect_minmax(clip: ClipSample, use_keypoints: bool, keypoint_conf: bool,
                    scope: str) -> _MinMaxStats:
    mm = _MinMaxStats(scope)

    def add_record(rec):
        mm.add(rec.frame, rec.x, rec.y, rec.w, rec.h)
        if use_keypoints:
            coords, _ = _keypoint_coords(_modality_vector(rec, "keypoints"), keypoint_conf)
            if coords.size:
                mm.add(rec.frame, coords[:, 0], coords[:, 1])

    for trk in clip.track_histories:
        for rec in trk.observations:
            add_record(rec)
    for rec in clip.final_detections:
        add_record(rec)
    return mm


def _static_vector(rec, modality: str, mm: _MinMaxStats, keypoint_conf: bool) -> np.ndarray:
    if modality == "appearance":
        return _modality_vector(rec, "appearance")
    lo, hi = mm.bounds(rec.frame)
    if modality == "bbox":
        geo = apply_minmax(np.array([rec.x, rec.y, rec.w, rec.h]), lo, hi)
        return np.concatenate([geo, [rec.conf]])
    if modality == "keypoints":
        coords, confs = _keypoint_coords(_modality_vector(rec, "keypoints"), keypoint_conf)
        norm = apply_minmax(coords, lo[:2], hi[:2])
        return np.concatenate([norm.reshape(-1), confs])
    raise ValueError(f"unknown modality {modality!r}")


def _raw_clip_features(clip: ClipSample, modalities, minmax_scope: str,
                       keypoint_conf: bool):
    """Unstandardized per-modality features.

    Returns {modality: (trk_static: list[(T_i, Ds)], trk_motion: list | None,
    det_static (M, Ds))}; motion is None for appearance.
    """
    use_kp = "keypoints" in modalities
    mm = _collect_minmax(clip, use_kp, keypoint_conf, minmax_scope)
    out = {}
    for modality in modalities:
        trk_static = []
        trk_motion = [] if modality in GEOMETRIC_MODALITIES else None
        for trk in clip.track_histories:
            frames = np.array([o.frame for o in trk.observations], dtype=np.float64)
            stat = np.stack(
                [_static_vector(o, modality, mm, keypoint_conf) for o in trk.observations]
            )
            trk_static.append(stat)
            if trk_motion is not None:
                trk_motion.append(temporal_differences(stat, frames))
        if clip.final_detections:
            det_static = np.stack(
                [_static_vector(d, modality, mm, keypoint_conf) for d in clip.final_detections]
            )
        else:
            dim = trk_static[0].shape[-1] if trk_static else 0
            det_static = np.zeros((0, dim))
        out[modality] = (trk_static, trk_motion, det_static)
    return out


def fit_standardizer(clips, modalities=("bbox",), minmax_scope: str = "window",
                     keypoint_conf: bool = False) -> dict[str, FeatureStats]:
    """Fit per-modality standardizers over a set of training clips.

    Appearance is excluded (it bypasses the geometric transforms).
    """
    pools: dict[str, list[np.ndarray]] = {}
    for clip in clips:
        raw = _raw_clip_features(clip, modalities, minmax_scope, keypoint_conf)
        for modality, (trk_static, trk_motion, det_static) in raw.items():
            if modality not in GEOMETRIC_MODALITIES:
                continue
            pools.setdefault(f"{modality}.static", []).extend(trk_static)
            if det_static.size:
                pools.setdefault(f"{modality}.static", []).append(det_static)
            if trk_motion:
                pools.setdefault(f"{modality}.motion", []).extend(trk_motion)
    return {key: fit_standardizer_from_arrays(arrays) for key, arrays in pools.items()}


def assemble_inputs(clip: ClipSample, stats: dict[str, FeatureStats],
                    modalities=("bbox",), minmax_scope: str = "window",
                    keypoint_conf: bool = False) -> ClipInputs:
    """Build padded, standardized model inputs for one clip.

    Track sequences are left-aligned and padded to the longest history in the
    clip; ``track_pos`` counts observations backward from the most recent
    (latest = 0).  Detections get static features only.
    """
    raw = _raw_clip_features(clip, modalities, minmax_scope, keypoint_conf)
    n = len(clip.track_histories)
    m = len(clip.final_detections)
    t_max = max((len(t.observations) for t in clip.track_histories), default=0)
    mods: dict[str, ModalityInputs] = {}
    for modality in modalities:
        trk_static, trk_motion, det_static = raw[modality]
        geometric = modality in GEOMETRIC_MODALITIES
        if geometric:
            s_stats = stats[f"{modality}.static"]
            m_stats = stats[f"{modality}.motion"]
            trk_static = [apply_standardizer(a, s_stats) for a in trk_static]
            trk_motion = [apply_standardizer(a, m_stats) for a in trk_motion]
            det_static = apply_standardizer(det_static, s_stats) if det_static.size else det_static
        dim = det_static.shape[-1] if m else (trk_static[0].shape[-1] if n else 0)
        static = np.zeros((n, t_max, dim))
        motion = np.zeros((n, t_max, dim)) if geometric else None
        mask = np.zeros((n, t_max), dtype=bool)
        pos = np.zeros((n, t_max), dtype=np.int64)
        for i in range(n):
            ti = trk_static[i].shape[0]
            static[i, :ti] = trk_static[i]
            if geometric:
                motion[i, :ti] = trk_motion[i]
            mask[i, :ti] = True
            pos[i, :ti] = np.arange(ti - 1, -1, -1)
        mods[modality] = ModalityInputs(
            track_static=static,
            track_motion=motion,
            track_mask=mask,
            track_pos=pos,
            det_static=det_static,
        )
    return ClipInputs(modalities=mods, n_tracks=n, n_detections=m)
