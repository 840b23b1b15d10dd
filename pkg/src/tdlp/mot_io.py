"""MOTChallenge-format parsing/writing, modality feature files, clip sampling.

File formats:
  * detections / ground truth / results: CSV lines
    ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,...`` (>= 7 fields,
    extras ignored, UTF-8, LF endings).
  * modality features: CSV lines ``frame,det_index,v0,v1,...`` where
    ``det_index`` is the 0-based position of the detection within its frame;
    one file per modality, all vectors sharing one dimension.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class MotParseError(ValueError):
    """Raised on malformed input lines; carries the 1-based line number."""


@dataclass
class DetectionRecord:
    """One detected box. ``id == -1`` means no identity."""

    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    conf: float
    modality_features: dict[str, np.ndarray] | None = None

    def box(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    def geometry(self) -> np.ndarray:
        """(x, y, w, h, conf) vector used by the feature pipeline."""
        return np.array([self.x, self.y, self.w, self.h, self.conf], dtype=np.float64)


@dataclass
class SequenceData:
    """Per-frame detection lists, frames kept in ascending order."""

    name: str
    frames: dict[int, list[DetectionRecord]] = field(default_factory=dict)
    image_size: tuple[int, int] | None = None
    fps: float | None = None

    def frame_ids(self) -> list[int]:
        return sorted(self.frames)

    def all_records(self):
        for f in self.frame_ids():
            yield from self.frames[f]

    def num_records(self) -> int:
        return sum(len(v) for v in self.frames.values())


@dataclass
class ClipTrack:
    """Observations of one identity inside a training clip window."""

    identity: int
    observations: list[DetectionRecord]


@dataclass
class ClipSample:
    """Supervised sample: histories over [t-L, t-1], detections at t, labels."""

    track_histories: list[ClipTrack]
    final_detections: list[DetectionRecord]
    labels: np.ndarray  # (N, M) int8, at most one 1 per row and per column
    clip_length: int
    frame: int


@dataclass
class AugmentSpec:
    """Box jitter (fraction of box size) and history observation dropout.

    ``ghost_prob`` optionally adds detector-style false positives to the
    final frame: offset copies of true detections (duplicate/NMS-failure
    ghosts) with no identity, so their label column is all zeros.
    """

    jitter_frac: float = 0.02
    drop_prob: float = 0.1
    ghost_prob: float = 0.0


def parse_mot_file(path, kind: str = "detections") -> SequenceData:
    """Parse a MOTChallenge CSV file into a SequenceData.

    ``kind`` is ``"ground-truth"`` or ``"detections"``; ground truth must not
    contain duplicate (frame, id) pairs for labeled ids.  Records with
    non-positive width/height are rejected (counted, warned).
    """
    if kind not in ("ground-truth", "detections"):
        raise ValueError(f"unknown kind {kind!r}")
    path = Path(path)
    frames: dict[int, list[DetectionRecord]] = {}
    rejected = 0
    seen_pairs: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise MotParseError(
                    f"{path.name}:{lineno}: expected >=7 comma-separated fields, got {len(parts)}"
                )
            try:
                frame = int(parts[0])
                obj_id = int(float(parts[1]))
                x, y, w, h, conf = (float(v) for v in parts[2:7])
            except ValueError as exc:
                raise MotParseError(f"{path.name}:{lineno}: {exc}") from None
            if frame <= 0:
                raise MotParseError(f"{path.name}:{lineno}: frame must be positive")
            if w <= 0 or h <= 0:
                rejected += 1
                continue
            if kind == "ground-truth" and obj_id >= 0:
                pair = (frame, obj_id)
                if pair in seen_pairs:
                    raise MotParseError(
                        f"{path.name}:{lineno}: duplicate (frame, id) pair {pair}"
                    )
                seen_pairs.add(pair)
            frames.setdefault(frame, []).append(
                DetectionRecord(frame=frame, id=obj_id, x=x, y=y, w=w, h=h, conf=conf)
            )
    if rejected:
        logger.warning("%s: rejected %d records with non-positive box size", path.name, rejected)
    return SequenceData(name=path.stem, frames={f: frames[f] for f in sorted(frames)})


def write_mot_results(tracks: SequenceData, path) -> None:
    """Write tracker outputs in MOT format with fixed 2-decimal numerals."""
    path = Path(path)
    lines = []
    for frame in tracks.frame_ids():
        for rec in tracks.frames[frame]:
            if rec.id <= 0:
                raise ValueError(f"track ids must be positive, got {rec.id}")
            if rec.w <= 0 or rec.h <= 0:
                raise ValueError(f"invalid box size ({rec.w}, {rec.h}) for id {rec.id}")
            lines.append(
                f"{frame},{rec.id},{rec.x:.2f},{rec.y:.2f},{rec.w:.2f},{rec.h:.2f},{rec.conf:.2f},-1,-1,-1"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        if lines:
            fh.write("\n")


def write_mot_detections(dets: SequenceData, path) -> None:
    """Write detector output (ids written as-is; -1 means unidentified)."""
    path = Path(path)
    lines = []
    for frame in dets.frame_ids():
        for r in dets.frames[frame]:
            lines.append(
                f"{frame},{r.id},{r.x:.2f},{r.y:.2f},{r.w:.2f},{r.h:.2f},{r.conf:.2f},-1,-1,-1"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        if lines:
            fh.write("\n")


def load_modality_features(path, modality: str, sequence: SequenceData):
    """Load one modality's feature CSV, validated against ``sequence``.

    Returns ``{(frame, det_index): vector}``.  Raises on dimension
    mismatches, duplicate rows and dangling references; logs a warning for
    detections that received no vector (and for an empty file).
    """
    path = Path(path)
    out: dict[tuple[int, int], np.ndarray] = {}
    dim = None
    dangling = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise MotParseError(
                    f"{path.name}:{lineno}: expected frame,det_index,v0,... fields"
                )
            try:
                frame = int(parts[0])
                det_index = int(parts[1])
                vec = np.array([float(v) for v in parts[2:]], dtype=np.float64)
            except ValueError as exc:
                raise MotParseError(f"{path.name}:{lineno}: {exc}") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(
                    f"{path.name}:{lineno}: modality '{modality}' dimension mismatch "
                    f"({vec.size} != {dim})"
                )
            if frame not in sequence.frames or det_index >= len(sequence.frames[frame]) or det_index < 0:
                dangling.append((lineno, frame, det_index))
                continue
            key = (frame, det_index)
            if key in out:
                raise ValueError(f"{path.name}:{lineno}: duplicate entry for {key}")
            out[key] = vec
    if dangling:
        head = ", ".join(f"line {ln}: ({f},{d})" for ln, f, d in dangling[:5])
        raise ValueError(
            f"{path.name}: {len(dangling)} rows reference missing detections ({head})"
        )
    if not out:
        logger.warning("%s: no feature rows for modality '%s'", path.name, modality)
        return out
    missing = sequence.num_records() - len(out)
    if missing:
        logger.warning(
            "%s: %d detections have no '%s' feature vector", path.name, missing, modality
        )
    return out


def attach_modality_features(sequence: SequenceData, modality: str, features) -> None:
    """Install loaded vectors onto the sequence's records in place."""
    for frame in sequence.frame_ids():
        for idx, rec in enumerate(sequence.frames[frame]):
            vec = features.get((frame, idx))
            if vec is None:
                continue
            if rec.modality_features is None:
                rec.modality_features = {}
            rec.modality_features[modality] = vec


def _jitter_record(rec: DetectionRecord, frac: float, rng: np.random.Generator) -> DetectionRecord:
    dx = rng.uniform(-frac, frac) * rec.w
    dy = rng.uniform(-frac, frac) * rec.h
    dw = rng.uniform(-frac, frac) * rec.w
    dh = rng.uniform(-frac, frac) * rec.h
    return replace(
        rec,
        x=rec.x + dx,
        y=rec.y + dy,
        w=max(rec.w + dw, 1e-6),
        h=max(rec.h + dh, 1e-6),
    )


def sample_clip(
    gt: SequenceData,
    t: int,
    clip_length: int,
    augment: AugmentSpec | None = None,
    rng_seed: int = 0,
) -> ClipSample:
    """Build one supervised clip ending at frame ``t``.

    Histories hold ground-truth observations per identity over
    ``[t - clip_length, t - 1]``; labels pair histories with same-identity
    detections at ``t``.  Unlabeled records (id == -1) are excluded.
    Augmentation jitters boxes (history and final frame) and drops history
    observations; identities and labels are never altered by augmentation.
    """
    if clip_length < 1:
        raise ValueError("clip_length must be >= 1")
    if t not in gt.frames or not any(r.id >= 0 for r in gt.frames[t]):
        raise ValueError(f"frame {t} has no labeled ground-truth detections")
    rng = np.random.default_rng(rng_seed)
    lo = t - clip_length
    per_identity: dict[int, list[DetectionRecord]] = {}
    for f in gt.frame_ids():
        if f < lo or f >= t:
            continue
        for rec in gt.frames[f]:
            if rec.id < 0:
                continue
            per_identity.setdefault(rec.id, []).append(rec)

    histories: list[ClipTrack] = []
    for identity in sorted(per_identity):
        obs = []
        for rec in per_identity[identity]:
            if augment is not None and augment.drop_prob > 0 and rng.random() < augment.drop_prob:
                continue
            r = dataclasses.replace(rec)
            if augment is not None and augment.jitter_frac > 0:
                r = _jitter_record(r, augment.jitter_frac, rng)
            obs.append(r)
        if obs:
            histories.append(ClipTrack(identity=identity, observations=obs))

    finals = []
    for rec in gt.frames[t]:
        if rec.id < 0:
            continue
        r = dataclasses.replace(rec)
        if augment is not None and augment.jitter_frac > 0:
            r = _jitter_record(r, augment.jitter_frac, rng)
        finals.append(r)
    if augment is not None and augment.ghost_prob > 0:
        ghosts = []
        for rec in finals:
            if rng.random() >= augment.ghost_prob:
                continue
            angle = rng.uniform(0.0, 2.0 * np.pi)
            dist = rng.uniform(0.4, 2.5)
            # purely positional artifacts: confidence matches the source so
            # the model cannot use it as a shortcut for "ghost"
            ghosts.append(replace(
                rec,
                id=-1,
                x=rec.x + dist * np.cos(angle) * rec.w,
                y=rec.y + dist * np.sin(angle) * rec.h,
            ))
        finals.extend(ghosts)

    labels = np.zeros((len(histories), len(finals)), dtype=np.int8)
    for i, trk in enumerate(histories):
        for j, det in enumerate(finals):
            if det.id == trk.identity:
                labels[i, j] = 1
    return ClipSample(
        track_histories=histories,
        final_detections=finals,
        labels=labels,
        clip_length=clip_length,
        frame=t,
    )


def clip_frames(gt: SequenceData, clip_length: int, stride: int = 1) -> list[int]:
    """Frames usable as clip endpoints: labeled detections at t and at least
    one labeled observation in the preceding window."""
    out = []
    frames = gt.frame_ids()
    have_label = {
        f: any(r.id >= 0 for r in gt.frames[f]) for f in frames
    }
    labeled = [f for f in frames if have_label[f]]
    if not labeled:
        return out
    first = labeled[0]
    for t in labeled:
        if t - clip_length < first:
            continue
        out.append(t)
    return out[::stride]
