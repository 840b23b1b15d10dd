"""Objectives, optimizer, schedules, the training loop, gradient checking."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .assoc import associate
from .features import assemble_inputs, fit_standardizer
from .model import ModelConfig, forward, init_parameters, parameter_names

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase: str = "pretrain"  # "pretrain" | "finetune"
    learning_rate: float = 5e-2
    weight_decay: float = 1e-2
    warmup_epochs: int = 2
    epochs: int = 30
    clip_norm: float = 1.0
    positive_weight: float = 10.0
    clips_per_step: int = 1
    seed: int = 0
    temperature: float = 0.1  # contrastive mode only

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.positive_weight < 1:
            raise ValueError("positive_weight must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.clips_per_step < 1:
            raise ValueError("clips_per_step must be >= 1")

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def finetune_defaults(**overrides) -> TrainConfig:
    """Multi-modal fine-tuning recipe: 10 epochs, 1 warmup, lr 1e-5, wd 1e-3."""
    base = dict(phase="finetune", learning_rate=1e-5, weight_decay=1e-3,
                warmup_epochs=1, epochs=10)
    base.update(overrides)
    return TrainConfig(**base)


# -- objectives ---------------------------------------------------------------


def bce_link_loss(logits: Tensor, labels: np.ndarray, positive_weight: float) -> Tensor:
    """Weighted binary cross-entropy over all track-detection pairs (sum).

    Computed from pre-sigmoid logits in the numerically stable form
    ``w+ * Y * softplus(-z) + (1 - Y) * softplus(z)``.
    """
    if logits.shape != labels.shape:
        raise ValueError(f"logits {logits.shape} vs labels {labels.shape}")
    y = np.asarray(labels, dtype=logits.dtype)
    pos = ad.mul(ad.mul(ad.softplus(ad.mul(logits, -1.0)), y), positive_weight)
    neg = ad.mul(ad.softplus(logits), 1.0 - y)
    return ad.tensor_sum(ad.add(pos, neg))


def bce_link_loss_naive(scores: np.ndarray, labels: np.ndarray,
                        positive_weight: float) -> float:
    """Direct evaluation from probabilities; reference for the stable path."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.sum(positive_weight * y * np.log(s) + (1 - y) * np.log(1 - s)))


def infonce_loss(trk_emb: Tensor, det_emb: Tensor, labels: np.ndarray,
                 temperature: float) -> Tensor:
    """Cross-entropy of each positive detection against all clip detections.

    Embeddings must be unit-normalized; similarity is cosine divided by the
    temperature.  Tracks without a positive contribute nothing; a clip with
    no positive pairs yields zero loss (warned).
    """
    rows = np.where(np.asarray(labels).sum(axis=1) > 0)[0]
    if rows.size == 0:
        logger.warning("contrastive loss: clip has no positive pairs")
        return Tensor(np.zeros((), dtype=trk_emb.dtype))
    sim = ad.mul(ad.matmul(trk_emb, ad.swapaxes(det_emb, 0, 1)), 1.0 / temperature)
    sim_rows = sim[rows]
    y = np.asarray(labels, dtype=sim.dtype)[rows]
    pos = ad.tensor_sum(ad.mul(sim_rows, y), axis=1)
    shift = np.max(sim_rows.data, axis=1, keepdims=True)
    lse = ad.add(ad.log(ad.tensor_sum(ad.exp(ad.sub(sim_rows, shift)), axis=1)),
                 shift[:, 0])
    return ad.mean(ad.sub(lse, pos))


# -- schedule and optimizer ---------------------------------------------------


@dataclass
class LrSchedule:
    lr_max: float
    warmup_steps: int
    total_steps: int


def lr_at(step: int, schedule: LrSchedule) -> float:
    """Linear warmup 0 -> lr_max, then cosine decay lr_max -> 0."""
    if step < 0 or step > schedule.total_steps:
        raise ValueError(f"step {step} outside horizon {schedule.total_steps}")
    if schedule.warmup_steps > 0 and step <= schedule.warmup_steps:
        return schedule.lr_max * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span <= 0:
        return schedule.lr_max
    frac = (step - schedule.warmup_steps) / span
    return schedule.lr_max * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def optimize_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                  state: AdamWState, lr: float, weight_decay: float,
                  clip_norm: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """Global-norm clip, then AdamW with decoupled weight decay (in place)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter '{name}'")
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    scale = 1.0 if total <= clip_norm else clip_norm / total
    state.step += 1
    b1, b2 = betas
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name in sorted(grads):
        p = params[name]
        dtype = p.data.dtype
        g = (grads[name] * scale).astype(dtype)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / np.asarray(bc1, dtype=dtype)
        v_hat = v / np.asarray(bc2, dtype=dtype)
        update = m_hat / (np.sqrt(v_hat) + np.asarray(eps, dtype=dtype))
        p.data = p.data - np.asarray(lr, dtype=dtype) * (update + np.asarray(weight_decay, dtype=dtype) * p.data)


# -- training loop ------------------------------------------------------------


def clip_loss(params, cfg: ModelConfig, inputs, labels, tcfg: TrainConfig,
              mode: str, train: bool, rng) -> Tensor:
    result = forward(params, cfg, inputs, mode=mode, train=train, rng=rng)
    if mode == "tdlp":
        return bce_link_loss(result.logits, labels, tcfg.positive_weight)
    return infonce_loss(result.trk_emb, result.det_emb, labels, tcfg.temperature)


def association_accuracy(params, cfg: ModelConfig, clips_inputs, theta: float = 0.0) -> float:
    """Fraction of labeled pairs recovered by gated Hungarian matching."""
    hit = 0
    total = 0
    for inputs, labels in clips_inputs:
        total += int(labels.sum())
        if labels.size == 0 or labels.sum() == 0:
            continue
        scores = forward(params, cfg, inputs, mode="tdlp").scores.data
        res = associate(scores, theta)
        hit += sum(1 for i, j, _ in res.matches if labels[i, j] == 1)
    return hit / total if total else 0.0


def contrastive_association_accuracy(params, cfg, clips_inputs, theta: float = -1.0) -> float:
    hit = 0
    total = 0
    for inputs, labels in clips_inputs:
        total += int(labels.sum())
        if labels.size == 0 or labels.sum() == 0:
            continue
        r = forward(params, cfg, inputs, mode="ctdp")
        res = associate(r.score_matrix(), theta)
        hit += sum(1 for i, j, _ in res.matches if labels[i, j] == 1)
    return hit / total if total else 0.0


FINETUNE_PREFIXES = ("fuse.", "joint.", "head.", "ctdp.")


def trainable_names(cfg: ModelConfig, phase: str) -> set[str]:
    names = parameter_names(cfg)
    if phase == "pretrain":
        return set(names)
    return {n for n in names if n.startswith(FINETUNE_PREFIXES)}


@dataclass
class TrainResult:
    epoch_losses: list[float]
    val_accuracy: list[float]
    log_rows: list[tuple]  # (epoch, step, loss, val_assoc_acc, lr)


def write_metrics_log(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,step,loss,val_assoc_acc,lr\n")
        for epoch, step, loss, acc, lr in rows:
            acc_s = "" if acc is None else f"{acc:.6f}"
            fh.write(f"{epoch},{step},{loss:.8f},{acc_s},{lr:.8g}\n")


def train(params: dict[str, Tensor], cfg: ModelConfig, train_clips, val_clips,
          tcfg: TrainConfig, mode: str = "tdlp", stats=None,
          log_path=None) -> TrainResult:
    """Optimize ``params`` in place over assembled clips.

    ``train_clips``/``val_clips`` are lists of (ClipInputs, labels) pairs;
    only the clip's final frame is supervised (the labels pair histories
    with final-frame detections by construction).  ``phase`` selects the
    trainable subset: pretraining updates everything reachable, fine-tuning
    only fusion, joint interaction and the heads.
    """
    del stats  # carried by callers for checkpointing; unused here
    allowed = trainable_names(cfg, tcfg.phase)
    n_clips = len(train_clips)
    if n_clips == 0:
        raise ValueError("no training clips")
    steps_per_epoch = math.ceil(n_clips / tcfg.clips_per_step)
    schedule = LrSchedule(
        lr_max=tcfg.learning_rate,
        warmup_steps=tcfg.warmup_epochs * steps_per_epoch,
        total_steps=tcfg.epochs * steps_per_epoch,
    )
    state = AdamWState()
    rng = np.random.default_rng(tcfg.seed)
    rows = []
    epoch_losses = []
    val_accs = []
    step = 0
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n_clips)
        epoch_loss = 0.0
        for start in range(0, n_clips, tcfg.clips_per_step):
            group = order[start:start + tcfg.clips_per_step]
            grads: dict[str, np.ndarray] = {}
            group_loss = 0.0
            for idx in group:
                inputs, labels = train_clips[idx]
                ad.zero_grads(params.values())
                loss = clip_loss(params, cfg, inputs, labels, tcfg, mode, True, rng)
                loss_val = float(loss.data)
                if not math.isfinite(loss_val):
                    raise TrainingDiverged(
                        f"loss became non-finite at epoch {epoch} step {step} "
                        f"(clip {int(idx)})"
                    )
                loss.backward()
                group_loss += loss_val
                for name, p in params.items():
                    if p.grad is None or name not in allowed:
                        continue
                    acc = grads.get(name)
                    grads[name] = p.grad.copy() if acc is None else acc + p.grad
            if grads:
                for name in grads:
                    grads[name] /= len(group)
                step += 1
                lr = lr_at(step, schedule)
                optimize_step(params, grads, state, lr, tcfg.weight_decay, tcfg.clip_norm)
            epoch_loss += group_loss
        epoch_loss /= n_clips
        epoch_losses.append(epoch_loss)
        acc = None
        if val_clips:
            if mode == "tdlp":
                acc = association_accuracy(params, cfg, val_clips)
            else:
                acc = contrastive_association_accuracy(params, cfg, val_clips)
        val_accs.append(acc)
        lr_now = lr_at(step, schedule)
        rows.append((epoch, step, epoch_loss, acc, lr_now))
        logger.info("epoch %d: loss %.5f, val acc %s, lr %.2e",
                    epoch, epoch_loss, "-" if acc is None else f"{acc:.3f}", lr_now)
    ad.zero_grads(params.values())
    if log_path is not None:
        write_metrics_log(rows, log_path)
    return TrainResult(epoch_losses=epoch_losses, val_accuracy=val_accs, log_rows=rows)


def sparsify_clip(clip, rng: np.random.Generator, keep_track_p: float = 0.4,
                  keep_det_p: float = 0.7, drop_matched_p: float = 0.0):
    """Random sub-clip with fewer tracks/detections, labels rebuilt.

    Covers the sparse regimes the tracker actually visits: lone tracks,
    detections whose track is gone (all-zero label column) and tracks whose
    continuation is missing (all-zero row) - the case gating must reject.
    ``drop_matched_p`` removes a kept track's own continuation outright,
    producing pure missed-detection supervision.  Always keeps at least one
    track and one detection.
    """
    from .mot_io import ClipSample

    tracks = [t for t in clip.track_histories if rng.random() < keep_track_p]
    if not tracks and clip.track_histories:
        tracks = [clip.track_histories[int(rng.integers(len(clip.track_histories)))]]
    kept_ids = {t.identity for t in tracks}
    dets = []
    for d in clip.final_detections:
        if d.id in kept_ids and rng.random() < drop_matched_p:
            continue
        if rng.random() < keep_det_p:
            dets.append(d)
    if not dets and clip.final_detections:
        dets = [clip.final_detections[int(rng.integers(len(clip.final_detections)))]]
    labels = np.zeros((len(tracks), len(dets)), dtype=np.int8)
    for i, trk in enumerate(tracks):
        for j, det in enumerate(dets):
            if det.id == trk.identity:
                labels[i, j] = 1
    return ClipSample(track_histories=tracks, final_detections=dets, labels=labels,
                      clip_length=clip.clip_length, frame=clip.frame)


def build_training_clips(clips, cfg: ModelConfig, stats):
    """Assemble (inputs, labels) pairs once so epochs reuse them."""
    out = []
    for clip in clips:
        inputs = assemble_inputs(clip, stats, modalities=cfg.modalities,
                                 minmax_scope=cfg.minmax_scope,
                                 keypoint_conf=cfg.keypoint_conf)
        out.append((inputs, clip.labels))
    return out


def fit_stats_for_config(clips, cfg: ModelConfig):
    return fit_standardizer(clips, modalities=cfg.modalities,
                            minmax_scope=cfg.minmax_scope,
                            keypoint_conf=cfg.keypoint_conf)


def train_two_phase(cfg: ModelConfig, clips, val_clips, pre_cfg: TrainConfig,
                    fine_cfg: TrainConfig | None = None, mode: str = "tdlp",
                    init_seed: int = 0, log_path=None):
    """Per-modality pretraining, then multi-modal fine-tuning.

    Each modality branch is pretrained as a single-modality model; the fused
    model starts from the trained branches (fusion projections from each
    branch, joint encoder and heads from the first branch) and fine-tunes
    fusion + joint interaction + heads.  With a single modality the
    pretrained branch model is returned directly.
    """
    stats = fit_stats_for_config(clips, cfg)
    branch_params = {}
    for modality in cfg.modalities:
        sub_cfg = dataclasses.replace(cfg, modalities=(modality,))
        sub_train = build_training_clips(clips, sub_cfg, stats)
        sub_val = build_training_clips(val_clips, sub_cfg, stats)
        params = init_parameters(sub_cfg, seed=init_seed)
        train(params, sub_cfg, sub_train, sub_val, pre_cfg, mode=mode,
              log_path=log_path if len(cfg.modalities) == 1 else None)
        branch_params[modality] = params
    if len(cfg.modalities) == 1:
        return branch_params[cfg.modalities[0]], stats
    params = init_parameters(cfg, seed=init_seed)
    first = cfg.modalities[0]
    for name in params:
        head, _, _ = name.partition(".")
        if head in cfg.modalities:
            params[name].data = branch_params[head][name].data.copy()
        elif name.startswith("fuse."):
            modality = name.split(".")[1]
            params[name].data = branch_params[modality][name].data.copy()
        elif name.startswith(("joint.", "head.", "ctdp.")):
            params[name].data = branch_params[first][name].data.copy()
    fine_cfg = fine_cfg or finetune_defaults()
    full_train = build_training_clips(clips, cfg, stats)
    full_val = build_training_clips(val_clips, cfg, stats)
    train(params, cfg, full_train, full_val, fine_cfg, mode=mode, log_path=log_path)
    return params, stats


# -- gradient verification ----------------------------------------------------


@dataclass
class GradientCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def failures(self) -> list[str]:
        return sorted(n for n, e in self.max_rel_error.items() if e > self.tolerance)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values()) if self.max_rel_error else 0.0

    def summary(self) -> str:
        status = "PASS" if self.passed else f"FAIL ({len(self.failures)} tensors)"
        return f"gradient check {status}: worst rel err {self.worst:.3e} (tol {self.tolerance:.1e})"


def gradient_report(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
                    tolerance: float) -> GradientCheckReport:
    """Relative error per tensor: |a - n| / max(|a|, |n|, 1)."""
    errors = {}
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
        errors[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    return GradientCheckReport(max_rel_error=errors, tolerance=tolerance)


def check_gradients(params: dict[str, Tensor], cfg: ModelConfig, inputs, labels,
                    positive_weight: float = 10.0, tolerance: float = 1e-5,
                    h_scale: float = 1e-3, param_scale: float = 0.1,
                    mode: str = "tdlp", temperature: float = 0.1) -> GradientCheckReport:
    """Analytic gradients vs central finite differences, all tensors, all entries.

    Requires float64 parameters and dropout disabled.  The step is
    ``h = h_scale * param_scale`` where ``param_scale`` is the characteristic
    parameter magnitude (0.1 for this model family); scaling h by each
    entry's own value would blow up truncation error on the unit-magnitude
    layer-norm gains, whose loss curvature is highest at initialization.
    """
    if cfg.dropout != 0.0:
        raise ValueError("disable dropout for gradient checking")
    if next(iter(params.values())).dtype != np.float64:
        raise ValueError("gradient checking requires float64 parameters")

    def loss_value() -> float:
        r = forward(params, cfg, inputs, mode=mode)
        if mode == "tdlp":
            return float(bce_link_loss(r.logits, labels, positive_weight).data)
        return float(infonce_loss(r.trk_emb, r.det_emb, labels, temperature).data)

    ad.zero_grads(params.values())
    r = forward(params, cfg, inputs, mode=mode)
    if mode == "tdlp":
        loss = bce_link_loss(r.logits, labels, positive_weight)
    else:
        loss = infonce_loss(r.trk_emb, r.det_emb, labels, temperature)
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }
    numeric = {}
    h = h_scale * param_scale
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_value()
            flat[i] = orig - h
            lo = loss_value()
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * h)
        numeric[name] = grad.reshape(p.data.shape)
    ad.zero_grads(params.values())
    report = gradient_report(analytic, numeric, tolerance)
    if not report.passed:
        logger.warning("gradient check failures: %s", report.failures)
    return report
