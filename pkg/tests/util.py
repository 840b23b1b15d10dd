"""Shared fixtures-as-functions and oracles for the test suite."""

import numpy as np

from tdlp.features import ClipInputs, ModalityInputs


def brute_force_assignment(cost, forbidden=None):
    """All partial matchings by recursion: max cardinality, then min cost,
    then lexicographically smallest sorted pair list."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if forbidden is None:
        forbidden = np.zeros((n, m), dtype=bool)
    best = None

    def rec(row, used, pairs, total):
        nonlocal best
        if row == n:
            key = (-len(pairs), total, pairs)
            if best is None or key < best:
                best = key
            return
        rec(row + 1, used, pairs, total)
        for j in range(m):
            if j not in used and not forbidden[row, j]:
                rec(row + 1, used | {j}, pairs + [(row, j)], total + cost[row, j])

    rec(0, frozenset(), [], 0.0)
    return -best[0], best[1], best[2]


def random_modality_inputs(dim, n, m, t_max, rng, lengths=None, geometric=True):
    if lengths is None:
        lengths = rng.integers(1, t_max + 1, size=n)
    static = np.zeros((n, t_max, dim))
    motion = np.zeros((n, t_max, dim)) if geometric else None
    mask = np.zeros((n, t_max), dtype=bool)
    pos = np.zeros((n, t_max), dtype=np.int64)
    for i, ti in enumerate(lengths):
        static[i, :ti] = rng.normal(size=(ti, dim))
        if geometric:
            motion[i, :ti] = rng.normal(size=(ti, dim))
        mask[i, :ti] = True
        pos[i, :ti] = np.arange(ti - 1, -1, -1)
    det = rng.normal(size=(m, dim))
    return ModalityInputs(static, motion, mask, pos, det), lengths


def random_clip_inputs(cfg, n, m, t_max, seed, lengths=None):
    rng = np.random.default_rng(seed)
    mods = {}
    for modality in cfg.modalities:
        mods[modality], lengths = random_modality_inputs(
            cfg.static_dim(modality), n, m, t_max, rng,
            lengths=lengths, geometric=cfg.is_geometric(modality),
        )
    return ClipInputs(modalities=mods, n_tracks=n, n_detections=m)


def permute_clip_inputs(inputs, perm_tracks, perm_dets):
    mods = {}
    for name, mi in inputs.modalities.items():
        mods[name] = ModalityInputs(
            track_static=mi.track_static[perm_tracks],
            track_motion=None if mi.track_motion is None else mi.track_motion[perm_tracks],
            track_mask=mi.track_mask[perm_tracks],
            track_pos=mi.track_pos[perm_tracks],
            det_static=mi.det_static[perm_dets],
        )
    return ClipInputs(modalities=mods, n_tracks=inputs.n_tracks,
                      n_detections=inputs.n_detections)
