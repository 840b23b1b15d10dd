"""Session fixtures for the acceptance suite.

The end-to-end criteria share one training session: a desk-scale link model
and its contrastive twin trained on the same generated world with the same
seeds.  Training runs once per pytest session.
"""

import logging
import time

import numpy as np
import pytest

from tdlp.mot_io import AugmentSpec, clip_frames, sample_clip
from tdlp.model import ModelConfig, init_parameters
from tdlp.synth import WorldSpec, generate_world
from tdlp.training import (
    TrainConfig,
    build_training_clips,
    fit_stats_for_config,
    sparsify_clip,
    train,
)

# Desk-scale end-to-end configuration: one world, ~250 clips, two models.
CLIP_LEN = 20
WORLD_SEED = 42
TRAIN_WORLD = dict(n_objects=8, n_frames=2400, det_dropout=0.1, box_jitter=0.02,
                   crossing_rate=0.5, seed=WORLD_SEED)
EVAL_WORLD_SEEDS = (101, 102, 103)
EVAL_MOTION = {"linear": 1.0, "nonlinear_accel": 1.0, "nonlinear_curve": 1.0}
TRAIN_RECIPE = dict(learning_rate=1e-3, epochs=32, warmup_epochs=2, seed=0,
                    clips_per_step=4)


def build_world_clips():
    gt, det = generate_world(WorldSpec(**TRAIN_WORLD))
    augment = AugmentSpec(ghost_prob=0.3)  # detector-style duplicate ghosts
    base = [sample_clip(gt, t, CLIP_LEN, augment, rng_seed=1000 + k)
            for k, t in enumerate(clip_frames(gt, CLIP_LEN, stride=14))]
    rng = np.random.default_rng(7)
    # alternate generic sparse sub-clips with pure missed-detection clips;
    # the latter supervise gating (reject everything when the true
    # continuation is absent)
    sparse = []
    for k, clip in enumerate(base[::2]):
        if k % 2 == 0:
            sparse.append(sparsify_clip(clip, rng))
        else:
            sparse.append(sparsify_clip(clip, rng, keep_track_p=0.3,
                                        keep_det_p=0.8, drop_matched_p=1.0))
    return gt, det, base + sparse


def eval_worlds():
    out = []
    for seed in EVAL_WORLD_SEEDS:
        spec = WorldSpec(n_objects=8, n_frames=150, det_dropout=0.05,
                         box_jitter=0.02, crossing_rate=0.8, seed=seed,
                         motion_weights=dict(EVAL_MOTION))
        out.append((f"world-{seed}", *generate_world(spec)))
    return out


@pytest.fixture(scope="session")
def trained_models():
    """Train the link model and the contrastive baseline once per session."""
    logging.getLogger("tdlp.training").setLevel(logging.ERROR)
    t0 = time.monotonic()
    _, _, clips = build_world_clips()
    cfg = ModelConfig()
    stats = fit_stats_for_config(clips, cfg)
    data = build_training_clips(clips, cfg, stats)
    val_idx = set(range(4, len(data), 5))
    train_set = [d for i, d in enumerate(data) if i not in val_idx]
    val_set = [d for i, d in enumerate(data) if i in val_idx]
    tcfg = TrainConfig(**TRAIN_RECIPE)

    params = init_parameters(cfg, seed=0)
    result = train(params, cfg, train_set, val_set, tcfg, mode="tdlp")
    params_c = init_parameters(cfg, seed=0)
    result_c = train(params_c, cfg, train_set, val_set, tcfg, mode="ctdp")
    return {
        "cfg": cfg,
        "stats": stats,
        "tdlp": params,
        "ctdp": params_c,
        "tdlp_result": result,
        "ctdp_result": result_c,
        "val_set": val_set,
        "n_clips": len(clips),
        "train_seconds": time.monotonic() - t0,
    }
