"""The link-prediction network and its contrastive twin.

Pipeline per clip: per-modality input embedding (static + motion MLPs) ->
temporal transformer over each track history with reversed positional
encoding -> per-modality object-interaction encoder over the combined
track/detection token set -> linear fusion into a shared space -> joint
interaction encoder -> pairwise link head (sigmoid scores) or, in
contrastive mode, a projection head with cosine-similarity scoring.

Parameters live in a flat ``{name: Tensor}`` map; every forward is a pure
function of (parameters, inputs, rng-for-dropout), so gradients are
available for all parameters through the autodiff tape.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import ClipInputs, FeatureStats, stats_from_json, stats_to_json

CHECKPOINT_MAGIC = b"TDLP\x00"
CHECKPOINT_VERSION = 1
ATTN_MASK_BIAS = -1e9


class CheckpointError(ValueError):
    """Bad magic, version, or truncated payload."""


@dataclass
class ModelConfig:
    embed_dim: int = 64
    fused_dim: int = 128
    temporal_layers: int = 2
    temporal_heads: int = 4
    interaction_layers: int = 2
    interaction_heads: int = 4
    dropout: float = 0.1
    modalities: tuple[str, ...] = ("bbox",)
    head_hidden: int = 128
    history_len: int = 20
    ffn_mult: int = 4
    readout: str = "last"  # "last" | "mean"
    role_embeddings: bool = True
    minmax_scope: str = "window"  # "window" | "frame"
    keypoint_points: int = 0
    keypoint_conf: bool = False
    appearance_dim: int = 0

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        if not self.modalities:
            raise ValueError("modality list must be non-empty")
        for m in self.modalities:
            if m not in ("bbox", "keypoints", "appearance"):
                raise ValueError(f"unknown modality {m!r}")
        if self.embed_dim <= 0 or self.fused_dim <= 0:
            raise ValueError("embed_dim and fused_dim must be positive")
        if self.embed_dim % self.temporal_heads or self.embed_dim % self.interaction_heads:
            raise ValueError("heads must divide embed_dim")
        if self.fused_dim % self.interaction_heads:
            raise ValueError("interaction heads must divide fused_dim")
        if self.embed_dim % 2:
            raise ValueError("embed_dim must be even (positional codes)")
        if self.readout not in ("last", "mean"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if "keypoints" in self.modalities and self.keypoint_points <= 0:
            raise ValueError("keypoints modality needs keypoint_points > 0")
        if "appearance" in self.modalities and self.appearance_dim <= 0:
            raise ValueError("appearance modality needs appearance_dim > 0")

    def static_dim(self, modality: str) -> int:
        if modality == "bbox":
            return 5
        if modality == "keypoints":
            return 2 * self.keypoint_points + (self.keypoint_points if self.keypoint_conf else 0)
        return self.appearance_dim

    def is_geometric(self, modality: str) -> bool:
        return modality in ("bbox", "keypoints")

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj) -> "ModelConfig":
        return cls(**obj)


def paper_scale_config(**overrides) -> ModelConfig:
    """Full-scale configuration (large embeddings, deep encoders)."""
    base = dict(
        embed_dim=512, fused_dim=1024,
        temporal_layers=4, temporal_heads=8,
        interaction_layers=4, interaction_heads=8,
        head_hidden=1024, history_len=50,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_config(**overrides) -> ModelConfig:
    """Smallest useful configuration; used by the gradient checker."""
    base = dict(
        embed_dim=8, fused_dim=16,
        temporal_layers=1, temporal_heads=1,
        interaction_layers=1, interaction_heads=1,
        head_hidden=16, history_len=6, ffn_mult=2, dropout=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


# -- parameters ---------------------------------------------------------------


def _shape_plan(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init-kind) for every parameter, in construction order."""
    d = cfg.embed_dim
    df = cfg.fused_dim
    plan: list[tuple[str, tuple[int, ...], str]] = []

    def mlp2(prefix, in_dim, out_dim):
        plan.append((f"{prefix}.lin1.w", (in_dim, out_dim), "xavier"))
        plan.append((f"{prefix}.lin1.b", (out_dim,), "zero"))
        plan.append((f"{prefix}.ln.g", (out_dim,), "one"))
        plan.append((f"{prefix}.ln.b", (out_dim,), "zero"))
        plan.append((f"{prefix}.lin2.w", (out_dim, out_dim), "xavier"))
        plan.append((f"{prefix}.lin2.b", (out_dim,), "zero"))

    def encoder(prefix, dim, layers):
        for i in range(layers):
            p = f"{prefix}.layer{i}"
            for nm in ("wq", "wk", "wv", "wo"):
                plan.append((f"{p}.attn.{nm}", (dim, dim), "xavier"))
            for nm in ("bq", "bk", "bv", "bo"):
                plan.append((f"{p}.attn.{nm}", (dim,), "zero"))
            plan.append((f"{p}.ln1.g", (dim,), "one"))
            plan.append((f"{p}.ln1.b", (dim,), "zero"))
            plan.append((f"{p}.ln2.g", (dim,), "one"))
            plan.append((f"{p}.ln2.b", (dim,), "zero"))
            plan.append((f"{p}.ffn.lin1.w", (dim, cfg.ffn_mult * dim), "xavier"))
            plan.append((f"{p}.ffn.lin1.b", (cfg.ffn_mult * dim,), "zero"))
            plan.append((f"{p}.ffn.lin2.w", (cfg.ffn_mult * dim, dim), "xavier"))
            plan.append((f"{p}.ffn.lin2.b", (dim,), "zero"))
        plan.append((f"{prefix}.ln_out.g", (dim,), "one"))
        plan.append((f"{prefix}.ln_out.b", (dim,), "zero"))

    for m in cfg.modalities:
        ds = cfg.static_dim(m)
        mlp2(f"{m}.stat", ds, d)
        if cfg.is_geometric(m):
            mlp2(f"{m}.mot", ds, d)
        encoder(f"{m}.temporal", d, cfg.temporal_layers)
        encoder(f"{m}.inter", d, cfg.interaction_layers)
        if cfg.role_embeddings:
            plan.append((f"{m}.inter.role_track", (d,), "role"))
            plan.append((f"{m}.inter.role_det", (d,), "role"))
        plan.append((f"fuse.{m}.w", (d, df), "xavier"))
    encoder("joint", df, cfg.interaction_layers)
    if cfg.role_embeddings:
        plan.append(("joint.role_track", (df,), "role"))
        plan.append(("joint.role_det", (df,), "role"))
    mlp2_head = [
        ("head.lin1.w", (3 * df, cfg.head_hidden), "xavier"),
        ("head.lin1.b", (cfg.head_hidden,), "zero"),
        ("head.ln.g", (cfg.head_hidden,), "one"),
        ("head.ln.b", (cfg.head_hidden,), "zero"),
        ("head.lin2.w", (cfg.head_hidden, 1), "xavier"),
        ("head.lin2.b", (1,), "zero"),
        ("ctdp.lin1.w", (df, cfg.head_hidden), "xavier"),
        ("ctdp.lin1.b", (cfg.head_hidden,), "zero"),
        ("ctdp.ln.g", (cfg.head_hidden,), "one"),
        ("ctdp.ln.b", (cfg.head_hidden,), "zero"),
        ("ctdp.lin2.w", (cfg.head_hidden, df), "xavier"),
        ("ctdp.lin2.b", (df,), "zero"),
    ]
    plan.extend(mlp2_head)
    return plan


def parameter_names(cfg: ModelConfig) -> list[str]:
    return [name for name, _, _ in _shape_plan(cfg)]


def init_parameters(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, kind in _shape_plan(cfg):
        if kind == "xavier":
            fan_in, fan_out = shape[0], shape[-1]
            limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
            data = rng.uniform(-limit, limit, size=shape)
        elif kind == "one":
            data = np.ones(shape)
        elif kind == "role":
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def cast_parameters(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in params.items()}


# -- building blocks ----------------------------------------------------------


def _linear(x: Tensor, params, prefix: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _mlp2(x: Tensor, params, prefix: str, drop: float, rng) -> Tensor:
    h = _linear(x, params, f"{prefix}.lin1")
    h = ad.layer_norm(h, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
    h = ad.silu(h)
    h = ad.dropout(h, drop, rng)
    return _linear(h, params, f"{prefix}.lin2")


def _encoder_layer(x: Tensor, params, prefix: str, heads: int, key_bias,
                   drop: float, rng) -> Tensor:
    h = ad.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    attn = _attention(h, params, f"{prefix}.attn", heads, key_bias)
    x = ad.add(x, ad.dropout(attn, drop, rng))
    h = ad.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    f = _linear(h, params, f"{prefix}.ffn.lin1")
    f = ad.silu(f)
    f = _linear(f, params, f"{prefix}.ffn.lin2")
    return ad.add(x, ad.dropout(f, drop, rng))


def _attention(x: Tensor, params, prefix: str, heads: int, key_bias) -> Tensor:
    b, t, d = x.shape
    dh = d // heads
    dtype = x.dtype

    def proj(w, bias):
        return ad.add(ad.matmul(x, params[w]), params[bias])

    def split(y):
        return ad.swapaxes(ad.reshape(y, (b, t, heads, dh)), 1, 2)

    q = split(proj(f"{prefix}.wq", f"{prefix}.bq"))
    k = split(proj(f"{prefix}.wk", f"{prefix}.bk"))
    v = split(proj(f"{prefix}.wv", f"{prefix}.bv"))
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)),
                    np.asarray(1.0 / np.sqrt(dh), dtype=dtype))
    if key_bias is not None:
        scores = ad.add(scores, key_bias.astype(dtype))
    attn = ad.softmax(scores, axis=-1)
    out = ad.matmul(attn, v)
    out = ad.reshape(ad.swapaxes(out, 1, 2), (b, t, d))
    return ad.add(ad.matmul(out, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _encoder(x: Tensor, params, prefix: str, layers: int, heads: int, key_bias,
             drop: float, rng) -> Tensor:
    for i in range(layers):
        x = _encoder_layer(x, params, f"{prefix}.layer{i}", heads, key_bias, drop, rng)
    return ad.layer_norm(x, params[f"{prefix}.ln_out.g"], params[f"{prefix}.ln_out.b"])


def reversed_positional_codes(positions: np.ndarray, dim: int, dtype) -> np.ndarray:
    """Sinusoidal codes indexed by observations-back-from-latest.

    Two histories sharing their last k observations share the codes of those
    k tokens by construction, whatever their total lengths.
    """
    half = dim // 2
    freq = 1.0 / (10000.0 ** (np.arange(half) / half))
    ang = positions[..., None].astype(np.float64) * freq
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(dtype)


def input_embed(params, cfg: ModelConfig, modality: str, static: np.ndarray,
                motion: np.ndarray | None, train: bool = False, rng=None) -> Tensor:
    """Token = static MLP (+ motion MLP for track observations)."""
    dtype = params[f"{modality}.stat.lin1.w"].dtype
    drop = cfg.dropout if train else 0.0
    x = Tensor(static.astype(dtype))
    h = _mlp2(x, params, f"{modality}.stat", drop, rng if train else None)
    if motion is not None:
        dx = Tensor(motion.astype(dtype))
        h = ad.add(h, _mlp2(dx, params, f"{modality}.mot", drop, rng if train else None))
    return h


def temporal_encode(params, cfg: ModelConfig, modality: str, tokens: Tensor,
                    mask: np.ndarray, positions: np.ndarray,
                    train: bool = False, rng=None) -> Tensor:
    """Encode track histories; returns one embedding per track.

    ``tokens`` is (N, T, d) left-aligned with boolean ``mask`` (N, T); the
    readout takes the most recent observation's output (or a masked mean).
    """
    n, t, d = tokens.shape
    if n == 0 or t == 0:
        raise ValueError("temporal encoder needs at least one observation")
    if not mask.any(axis=1).all():
        raise ValueError("every track needs at least one observation")
    dtype = tokens.dtype
    pe = reversed_positional_codes(positions, d, dtype) * mask[..., None].astype(dtype)
    x = ad.add(tokens, pe)
    key_bias = np.where(mask[:, None, None, :], 0.0, ATTN_MASK_BIAS)
    drop = cfg.dropout if train else 0.0
    enc = _encoder(x, params, f"{modality}.temporal", cfg.temporal_layers,
                   cfg.temporal_heads, key_bias, drop, rng if train else None)
    if cfg.readout == "last":
        last = mask.sum(axis=1).astype(np.int64) - 1
        return ad.select_positions(enc, last)
    m = mask[..., None].astype(dtype)
    summed = ad.tensor_sum(ad.mul(enc, m), axis=1)
    return ad.div(summed, mask.sum(axis=1, keepdims=True).astype(dtype))


def interaction_encode(params, cfg: ModelConfig, prefix: str, trk: Tensor | None,
                       det: Tensor | None, heads: int, train: bool = False,
                       rng=None) -> tuple[Tensor | None, Tensor | None]:
    """Refine the combined track/detection token set (order preserved).

    No positional encoding; learned role embeddings mark which side each
    token came from when enabled.
    """
    parts = []
    n = trk.shape[0] if trk is not None else 0
    m = det.shape[0] if det is not None else 0
    if n:
        parts.append(trk)
    if m:
        parts.append(det)
    if not parts:
        return trk, det
    tokens = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    d = tokens.shape[-1]
    if cfg.role_embeddings:
        roles = []
        if n:
            roles.append(ad.broadcast_to(ad.reshape(params[f"{prefix}.role_track"], (1, d)), (n, d)))
        if m:
            roles.append(ad.broadcast_to(ad.reshape(params[f"{prefix}.role_det"], (1, d)), (m, d)))
        tokens = ad.add(tokens, roles[0] if len(roles) == 1 else ad.concat(roles, axis=0))
    drop = cfg.dropout if train else 0.0
    enc = _encoder(ad.reshape(tokens, (1, n + m, d)), params, prefix,
                   cfg.interaction_layers, heads, None, drop, rng if train else None)
    enc = ad.reshape(enc, (n + m, d))
    out_trk = enc[:n] if n else None
    out_det = enc[n:] if m else None
    return out_trk, out_det


def fuse_modalities(params, cfg: ModelConfig, per_modality: dict[str, Tensor]) -> Tensor:
    """u = sum_m W_m z_m (bias-free projections into the fused space)."""
    missing = [m for m in cfg.modalities if m not in per_modality]
    if missing:
        raise ValueError(f"missing modalities for fusion: {missing}")
    out = None
    for m in cfg.modalities:
        proj = ad.matmul(per_modality[m], params[f"fuse.{m}.w"])
        out = proj if out is None else ad.add(out, proj)
    return out


def link_scores(params, cfg: ModelConfig, trk: Tensor, det: Tensor,
                train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Pairwise head over [z_t, z_d, |z_t - z_d|]; returns (logits, scores)."""
    n, df = trk.shape
    m = det.shape[0]
    a = ad.broadcast_to(ad.reshape(trk, (n, 1, df)), (n, m, df))
    b = ad.broadcast_to(ad.reshape(det, (1, m, df)), (n, m, df))
    v = ad.concat([a, b, ad.absolute(ad.sub(a, b))], axis=-1)
    drop = cfg.dropout if train else 0.0
    h = _mlp2(v, params, "head", drop, rng if train else None)
    logits = ad.reshape(h, (n, m))
    return logits, ad.sigmoid(logits)


@dataclass
class ForwardResult:
    """Model outputs for one clip; tensors retain the autodiff tape."""

    logits: Tensor | None = None  # (N, M), link mode
    scores: Tensor | None = None  # (N, M) in (0, 1), link mode
    trk_emb: Tensor | None = None  # (N, D) unit vectors, contrastive mode
    det_emb: Tensor | None = None  # (M, D) unit vectors, contrastive mode

    def score_matrix(self) -> np.ndarray:
        """(N, M) numpy scores: probabilities or cosine similarities."""
        if self.scores is not None:
            return self.scores.data
        return self.trk_emb.data @ self.det_emb.data.T


@dataclass
class LinkMatrix:
    """Predicted link probabilities, every entry strictly inside (0, 1)."""

    scores: np.ndarray

    def __post_init__(self):
        if self.scores.size and not ((self.scores > 0) & (self.scores < 1)).all():
            raise ValueError("link scores must lie strictly in (0, 1)")


def forward(params, cfg: ModelConfig, inputs: ClipInputs, mode: str = "tdlp",
            train: bool = False, rng=None) -> ForwardResult:
    """Run the full pipeline on one clip's assembled inputs."""
    if mode not in ("tdlp", "ctdp"):
        raise ValueError(f"unknown mode {mode!r}")
    n, m = inputs.n_tracks, inputs.n_detections
    dtype = next(iter(params.values())).dtype
    if n == 0 or m == 0:
        empty = Tensor(np.zeros((n, m), dtype=dtype))
        if mode == "tdlp":
            return ForwardResult(logits=empty, scores=empty)
        df = cfg.fused_dim
        return ForwardResult(trk_emb=Tensor(np.zeros((n, df), dtype=dtype)),
                             det_emb=Tensor(np.zeros((m, df), dtype=dtype)))

    fused_inputs: dict[str, Tensor] = {}
    fused_dets: dict[str, Tensor] = {}
    for modality in cfg.modalities:
        mi = inputs.modalities[modality]
        trk_tokens = input_embed(params, cfg, modality, mi.track_static,
                                 mi.track_motion, train, rng)
        z_trk = temporal_encode(params, cfg, modality, trk_tokens, mi.track_mask,
                                mi.track_pos, train, rng)
        z_det = input_embed(params, cfg, modality, mi.det_static, None, train, rng)
        z_trk, z_det = interaction_encode(params, cfg, f"{modality}.inter", z_trk,
                                          z_det, cfg.interaction_heads, train, rng)
        fused_inputs[modality] = z_trk
        fused_dets[modality] = z_det
    u_trk = fuse_modalities(params, cfg, fused_inputs)
    u_det = fuse_modalities(params, cfg, fused_dets)
    z_trk, z_det = interaction_encode(params, cfg, "joint", u_trk, u_det,
                                      cfg.interaction_heads, train, rng)
    if mode == "tdlp":
        logits, scores = link_scores(params, cfg, z_trk, z_det, train, rng)
        return ForwardResult(logits=logits, scores=scores)
    drop = cfg.dropout if train else 0.0
    e_trk = ad.l2_normalize(_mlp2(z_trk, params, "ctdp", drop, rng if train else None))
    e_det = ad.l2_normalize(_mlp2(z_det, params, "ctdp", drop, rng if train else None))
    return ForwardResult(trk_emb=e_trk, det_emb=e_det)


# -- checkpoint io ------------------------------------------------------------


def save_checkpoint(params: dict[str, Tensor], cfg: ModelConfig,
                    stats: dict[str, FeatureStats], path) -> None:
    """Binary checkpoint: magic, version, JSON header, float32 blobs.

    Blob order is sorted by name and the header JSON is key-sorted, so
    save -> load -> save is byte-identical.  Parameters are stored as
    little-endian float32 regardless of compute dtype.
    """
    header = json.dumps(
        {"config": cfg.to_json(), "stats": stats_to_json(stats)},
        sort_keys=True,
    ).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
        buf.write(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Load (params, config, stats); params are float32 with grads enabled."""
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    off = 0

    def read(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError("truncated checkpoint")
        out = view[off:off + n]
        off += n
        return out

    if bytes(read(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<I", read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", read(4))
    header = json.loads(bytes(read(hlen)).decode("utf-8"))
    cfg = ModelConfig.from_json(header["config"])
    stats = stats_from_json(header["stats"])
    params: dict[str, Tensor] = {}
    while off < len(raw):
        (nlen,) = struct.unpack("<I", read(4))
        name = bytes(read(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<I", read(4))
        shape = struct.unpack(f"<{ndim}I", read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(read(4 * count), dtype="<f4").reshape(shape)
        params[name] = Tensor(np.array(data, dtype=np.float32), requires_grad=True)
    expected = set(parameter_names(cfg))
    got = set(params)
    if expected != got:
        missing = sorted(expected - got)[:3]
        extra = sorted(got - expected)[:3]
        raise CheckpointError(
            f"parameter names do not match the declared architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    return params, cfg, stats
