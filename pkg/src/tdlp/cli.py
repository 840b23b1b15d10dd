"""Command line interface.

Subcommands: gen-data, train, track, eval, synth (controlled suite), ablate.
Global flags: --seed, --deterministic, --config; any error exits nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import evaluate_sequences, write_report_csv
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .mot_io import (
    AugmentSpec,
    attach_modality_features,
    clip_frames,
    load_modality_features,
    parse_mot_file,
    sample_clip,
    write_mot_detections,
    write_mot_results,
)
from .synth import WorldSpec, generate_world
from .tracker import TdlpScorer, TrackerConfig, run_sequence
from .training import TrainConfig, finetune_defaults, train_two_phase

logger = logging.getLogger("tdlp")


def _parse_modalities(values):
    """--modality name=path pairs."""
    out = {}
    for item in values or []:
        if "=" not in item:
            raise SystemExit(f"--modality expects name=path, got {item!r}")
        name, path = item.split("=", 1)
        out[name] = Path(path)
    return out


def _attach_all(seq, modality_paths):
    for name, path in modality_paths.items():
        feats = load_modality_features(path, name, seq)
        attach_modality_features(seq, name, feats)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdlp",
        description="Track-detection link prediction: train, track, evaluate, analyze.",
    )
    parser.add_argument("--version", action="version", version=f"tdlp {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="pin the seed (default 0) for bit-reproducible runs")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config for the chosen subcommand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic world in MOT format")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n-objects", type=int, default=8)
    p.add_argument("--n-frames", type=int, default=300)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--jitter", type=float, default=0.02)
    p.add_argument("--crossing", type=float, default=0.5)

    p = sub.add_parser("train", help="train a model on a MOT ground-truth file")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--modality", action="append", metavar="NAME=PATH")
    p.add_argument("--mode", choices=("tdlp", "ctdp"), default="tdlp")
    p.add_argument("--model-config", type=Path, default=None)
    p.add_argument("--clip-length", type=int, default=20)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--jitter", type=float, default=0.02)
    p.add_argument("--drop", type=float, default=0.1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--log", type=Path, default=None, help="metrics CSV path")

    p = sub.add_parser("track", help="run the tracker over a detection file")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--dets", type=Path, required=True)
    p.add_argument("--modality", action="append", metavar="NAME=PATH")
    p.add_argument("--preset", type=str, default=None,
                   help="tracker preset (dancetrack, sportsmot, bee24, motchallenge)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate tracking output against ground truth")
    p.add_argument("--gt", type=Path, required=True, help="gt file or directory")
    p.add_argument("--pred", type=Path, required=True, help="result file or directory")
    p.add_argument("--metrics", type=str, default="hota,idf1,mota")
    p.add_argument("--out", type=Path, required=True, help="report CSV path")

    p = sub.add_parser("synth", help="controlled single-track analysis suites")
    p.add_argument("--suite", choices=("appendix-b",), required=True)
    p.add_argument("--method", choices=("tdlp", "ctdp"), required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--theta", type=float, default=None,
                   help="association gate; defaults to --calibrate-gt or 0.5")
    p.add_argument("--calibrate-gt", type=Path, default=None,
                   help="MOT gt file used to calibrate the gate on held-out clips")
    p.add_argument("--clip-length", type=int, default=20)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ablate", help="train/evaluate modality subsets")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--dets", type=Path, required=True)
    p.add_argument("--modality", action="append", metavar="NAME=PATH")
    p.add_argument("--features", type=str, required=True,
                   help="subsets like 'bbox;bbox,appearance'")
    p.add_argument("--model-config", type=Path, default=None)
    p.add_argument("--clip-length", type=int, default=20)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _seed_of(args) -> int:
    if args.seed is not None:
        return args.seed
    return 0 if args.deterministic else int(np.random.SeedSequence().entropy % 2**31)


def cmd_gen_data(args) -> int:
    spec_kwargs = dict(n_objects=args.n_objects, n_frames=args.n_frames,
                       det_dropout=args.dropout, box_jitter=args.jitter,
                       crossing_rate=args.crossing, seed=_seed_of(args))
    if args.config:
        spec_kwargs = {**_load_json(args.config), **{"seed": _seed_of(args)}}
    spec = WorldSpec(**spec_kwargs)
    gt, det = generate_world(spec)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_mot_results(gt, args.out_dir / "gt.txt")
    write_mot_detections(det, args.out_dir / "det.txt")
    manifest = dataclasses.asdict(spec)
    manifest["image_size"] = list(spec.image_size)
    (args.out_dir / "world.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    print(f"wrote {args.out_dir}/gt.txt ({gt.num_records()} boxes), "
          f"det.txt ({det.num_records()} boxes), world.json")
    return 0


def _sample_clips(gt, clip_length, stride, augment, seed):
    clips = []
    for k, t in enumerate(clip_frames(gt, clip_length, stride)):
        clips.append(sample_clip(gt, t, clip_length, augment, rng_seed=seed * 100003 + k))
    return clips


def _split_val(clips, val_fraction):
    if val_fraction <= 0 or len(clips) < 5:
        return clips, []
    step = max(int(round(1 / val_fraction)), 2)
    val = [c for i, c in enumerate(clips) if i % step == step - 1]
    tr = [c for i, c in enumerate(clips) if i % step != step - 1]
    return tr, val


def _model_config_for(args, modality_paths, gt) -> ModelConfig:
    if args.model_config:
        return ModelConfig.from_json(_load_json(args.model_config))
    modalities = ["bbox"] + sorted(modality_paths)
    kwargs = dict(modalities=tuple(modalities), history_len=args.clip_length)
    for name in modality_paths:
        some = next(
            (r.modality_features[name] for r in gt.all_records()
             if r.modality_features and name in r.modality_features),
            None,
        )
        if some is None:
            raise SystemExit(f"no '{name}' vectors attached to any record")
        if name == "appearance":
            kwargs["appearance_dim"] = int(some.size)
        elif name == "keypoints":
            kwargs["keypoint_points"] = int(some.size // 2)
    return ModelConfig(**kwargs)


def cmd_train(args) -> int:
    seed = _seed_of(args)
    gt = parse_mot_file(args.gt, kind="ground-truth")
    modality_paths = _parse_modalities(args.modality)
    _attach_all(gt, modality_paths)
    cfg = _model_config_for(args, modality_paths, gt)
    augment = AugmentSpec(jitter_frac=args.jitter, drop_prob=args.drop)
    clips = _sample_clips(gt, args.clip_length, args.stride, augment, seed)
    if not clips:
        raise SystemExit("no training clips could be sampled (sequence too short?)")
    train_clips, val_clips = _split_val(clips, args.val_fraction)
    pre_cfg = TrainConfig.load(args.config) if args.config else TrainConfig(seed=seed)
    params, stats = train_two_phase(cfg, train_clips, val_clips, pre_cfg,
                                    finetune_defaults(seed=seed), mode=args.mode,
                                    init_seed=seed, log_path=args.log)
    save_checkpoint(params, cfg, stats, args.out)
    print(f"saved checkpoint to {args.out} "
          f"({len(train_clips)} train / {len(val_clips)} val clips, mode {args.mode})")
    return 0


def cmd_track(args) -> int:
    scorer = TdlpScorer.from_checkpoint(args.ckpt)
    dets = parse_mot_file(args.dets, kind="detections")
    _attach_all(dets, _parse_modalities(args.modality))
    if args.config:
        tracker_cfg = TrackerConfig.load(args.config)
    elif args.preset:
        tracker_cfg = TrackerConfig.preset(args.preset)
    else:
        tracker_cfg = TrackerConfig()
    out = run_sequence(dets, scorer, tracker_cfg)
    write_mot_results(out, args.out)
    n_ids = len({r.id for r in out.all_records()})
    print(f"tracked {dets.num_records()} detections -> "
          f"{out.num_records()} outputs, {n_ids} identities -> {args.out}")
    return 0


def _sequence_pairs(gt_path: Path, pred_path: Path):
    if gt_path.is_dir():
        pairs = []
        for gt_file in sorted(gt_path.glob("*.txt")):
            pred_file = pred_path / gt_file.name
            if not pred_file.exists():
                raise SystemExit(f"missing prediction file for sequence {gt_file.stem}")
            pairs.append((gt_file.stem,
                          parse_mot_file(gt_file, kind="ground-truth"),
                          parse_mot_file(pred_file, kind="detections")))
        if not pairs:
            raise SystemExit(f"no *.txt sequences under {gt_path}")
        return pairs
    return [(gt_path.stem,
             parse_mot_file(gt_path, kind="ground-truth"),
             parse_mot_file(pred_path, kind="detections"))]


def cmd_eval(args) -> int:
    wanted = [m.strip().lower() for m in args.metrics.split(",") if m.strip()]
    known = {"hota", "idf1", "mota"}
    bad = set(wanted) - known
    if bad:
        raise SystemExit(f"unknown metrics {sorted(bad)}; choose from {sorted(known)}")
    reports = evaluate_sequences(_sequence_pairs(args.gt, args.pred))
    write_report_csv(reports, args.out)
    for r in reports:
        cells = []
        for m in wanted:
            v = getattr(r, m)
            cells.append(f"{m.upper()} " + ("n/a" if v is None else f"{v:.4f}"))
        print(f"{r.name}: " + ", ".join(cells))
    print(f"report written to {args.out}")
    return 0


def cmd_synth(args) -> int:
    from .experiments import calibrate_gate, passfail_suite
    from .model import forward
    from .training import build_training_clips

    scorer = TdlpScorer.from_checkpoint(args.ckpt, mode=args.method)
    theta = args.theta
    if theta is None and args.calibrate_gt is not None:
        gt = parse_mot_file(args.calibrate_gt, kind="ground-truth")
        clips = _sample_clips(gt, args.clip_length, 1, None, _seed_of(args))
        pairs = []
        for inputs, labels in build_training_clips(clips, scorer.cfg, scorer.stats):
            result = forward(scorer.params, scorer.cfg, inputs, mode=args.method)
            pairs.append((result.score_matrix(), labels))
        theta = calibrate_gate(pairs)
    if theta is None:
        theta = 0.5
    suite = passfail_suite(scorer, theta, method=args.method)
    text = suite.report()
    args.out.write_text(text, encoding="utf-8")
    print(text)
    print(f"report written to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    from .experiments import feature_ablation, write_ablation_csv

    seed = _seed_of(args)
    gt = parse_mot_file(args.gt, kind="ground-truth")
    dets = parse_mot_file(args.dets, kind="detections")
    modality_paths = _parse_modalities(args.modality)
    _attach_all(gt, modality_paths)
    _attach_all(dets, modality_paths)
    subsets = [tuple(s.strip() for s in chunk.split(",") if s.strip())
               for chunk in args.features.split(";") if chunk.strip()]
    if not subsets:
        raise SystemExit("--features must name at least one subset")
    cfg = _model_config_for(args, modality_paths, gt)
    clips = _sample_clips(gt, args.clip_length, 1, AugmentSpec(), seed)
    train_clips, val_clips = _split_val(clips, 0.2)
    pre_cfg = TrainConfig.load(args.config) if args.config else TrainConfig(seed=seed)
    tracker_cfg = TrackerConfig(history_len=args.clip_length)
    rows = feature_ablation(cfg, train_clips, val_clips, [("train-world", gt, dets)],
                            subsets, pre_cfg, tracker_cfg, init_seed=seed)
    write_ablation_csv(rows, args.out)
    for r in rows:
        print(f"{r.dataset} [{'+'.join(r.subset)}]: "
              f"HOTA {r.hota:.4f} IDF1 {r.idf1:.4f}")
    print(f"ablation table written to {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        return 1
    except SystemExit:
        raise
    except Exception as exc:  # surface a clean error, nonzero exit
        logger.error("%s", exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
