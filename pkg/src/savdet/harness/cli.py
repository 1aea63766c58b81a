"""Command-line entry points wiring generate -> train -> score -> calibrate ->
fuse -> evaluate -> report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .. import avsync, fusion, visual_branch
from ..errors import ManifestError, SavdetError
from ..masks import RegionTag
from ..pseudo_forgery import PairConfig, make_pair
from . import config as config_mod
from . import formats, pipeline
from .manifest import ingest

REGION_FLAG = {"face": RegionTag.FACE, "lip": RegionTag.LIP,
               "lower-face": RegionTag.LOWER_FACE}
BRANCH_FLAG = {"fb": ("FB", RegionTag.FACE), "lb": ("LB", RegionTag.LIP),
               "lfb": ("LFB", RegionTag.LOWER_FACE), "av": ("AV", None)}


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    if args.seed is not None:
        cfg = config_mod.RunConfig(**{**cfg.__dict__, "seed": args.seed})
    return cfg


def _save_img(path, img):
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def cmd_ingest_check(args):
    manifest = ingest(args.manifest)
    train, evl = manifest.split("train"), manifest.split("eval")
    print(f"manifest OK: {len(manifest.records)} records "
          f"({len(train)} train, {len(evl)} eval)")
    return 0


def cmd_gen_pairs(args):
    manifest = ingest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    region = REGION_FLAG[args.region]
    cfg = PairConfig()
    records = [r for r in manifest.split("train") if r.frames_dir]
    entries = []
    count = 0
    for rec in records:
        frames = formats.read_frames(rec.frames_dir)
        h, w = frames[0].shape[:2]
        lms = formats.read_landmarks(rec.landmarks, w, h)
        for fi, (frame, lm) in enumerate(zip(frames, lms)):
            if count >= args.count:
                break
            seed = (args.seed or 0) * 100003 + count
            base_id = f"{rec.video_id}:{fi}"
            try:
                pair = make_pair(frame, lm, region, seed, cfg, base_id=base_id)
            except SavdetError:
                continue
            _save_img(out / f"pair_{count:04d}_real.png", pair.real_view)
            _save_img(out / f"pair_{count:04d}_fake.png", pair.fake_view)
            entries.append({"base_id": base_id, "region": region.value,
                            "seed": seed, "labels": {"real": 0, "fake": 1},
                            "degenerate": pair.degenerate_pair})
            count += 1
        if count >= args.count:
            break
    (out / "pairs.json").write_text(json.dumps(entries, indent=2) + "\n")
    print(f"wrote {count} pairs to {out}")
    return 0


def cmd_train_visual(args):
    cfg = _load_config(args)
    manifest = ingest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    region = REGION_FLAG[args.region]
    name = {v: k for k, v in REGION_FLAG.items()}[region].replace("-", "")
    spec = visual_branch.EncoderSpec(kind=cfg.encoder_kind,
                                     input_size=cfg.input_size,
                                     feature_dim=cfg.feature_dim, seed=cfg.seed)
    tc = visual_branch.TrainConfig(learning_rate=cfg.visual_lr,
                                   batch_size=cfg.visual_batch,
                                   steps=cfg.visual_steps, seed=cfg.seed)
    data = list(pipeline._train_stream(
        [r for r in manifest.split("train") if r.frames_dir]))
    model = visual_branch.train_branch(data, region, spec, tc)
    branch = {"face": "fb", "lip": "lb", "lower-face": "lfb"}[args.region]
    path = out / f"branch_{branch}.savb"
    formats.write_branch_checkpoint(path, model)
    print(f"trained {args.region} branch -> {path} "
          f"(final loss {model.meta.get('final_loss', float('nan')):.4f})")
    return 0


def cmd_train_avsync(args):
    cfg = _load_config(args)
    manifest = ingest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clips = [(formats.read_fseq(r.audio_features), formats.read_fseq(r.visual_features))
             for r in manifest.split("train")
             if r.audio_features and r.visual_features]
    sspec = avsync.ScorerSpec(audio_dim=clips[0][0].dim,
                              visual_dim=clips[0][1].dim,
                              hidden=cfg.sync_hidden, seed=cfg.seed)
    scfg = avsync.SyncConfig(window_radius=cfg.window_radius,
                             learning_rate=cfg.sync_lr,
                             clips_per_step=cfg.sync_clips,
                             steps=cfg.sync_steps, seed=cfg.seed)
    scorer = avsync.train_avsync(clips, scfg, sspec)
    path = out / "scorer_av.savb"
    formats.write_scorer_checkpoint(path, scorer)
    print(f"trained sync scorer -> {path}")
    return 0


def cmd_score(args):
    cfg = _load_config(args)
    manifest = ingest(args.manifest)
    out = Path(args.out)
    name, region = BRANCH_FLAG[args.branch]
    cfg_hash = config_mod.config_hash(cfg)
    rows = []
    for rec in sorted(manifest.split("eval"), key=lambda r: r.video_id):
        if name == "AV":
            if not (rec.audio_features and rec.visual_features):
                continue
            scorer = formats.read_scorer_checkpoint(out / "scorer_av.savb")
            a = formats.read_fseq(rec.audio_features)
            v = formats.read_fseq(rec.visual_features)
            s = avsync.misalignment_score(a, v, scorer, cfg.window_radius).aggregate
        else:
            if not rec.frames_dir:
                continue
            model = formats.read_branch_checkpoint(out / f"branch_{args.branch}.savb")
            frames, lms = pipeline._load_video_frames(rec)
            s = visual_branch.score_video(frames, model, landmarks=lms,
                                          max_frames=cfg.max_frames)
        rows.append((rec.video_id, name, s))
    path = out / f"scores_{args.branch}.csv"
    formats.write_scores_csv(path, rows, cfg_hash)
    print(f"wrote {len(rows)} scores -> {path}")
    return 0


def _read_all_scores(out: Path):
    rows, hashes = [], set()
    for branch in ("fb", "lb", "lfb", "av"):
        p = out / f"scores_{branch}.csv"
        if p.exists():
            r, h = formats.read_scores_csv(p)
            rows.extend(r)
            hashes.add(h)
    combined = out / "scores.csv"
    if not rows and combined.exists():
        rows, h = formats.read_scores_csv(combined)
        hashes.add(h)
    if len(hashes) > 1:
        raise ManifestError(f"mixed config hashes in score files: {sorted(hashes)}")
    return rows, (hashes.pop() if hashes else "")


def cmd_calibrate(args):
    cfg = _load_config(args)
    out = Path(args.out)
    rows, cfg_hash = _read_all_scores(out)
    pop = [s for _, b, s in rows if b == "AV"]
    calib = fusion.fit_minmax(pop, cfg.epsilon)
    (out / "calibration.txt").write_text(
        f"# config_hash: {cfg_hash}\n"
        f"score_min = {format(calib.score_min, '.12g')}\n"
        f"score_max = {format(calib.score_max, '.12g')}\n"
        f"epsilon = {format(calib.epsilon, '.12g')}\n")
    print(f"calibration: min {calib.score_min:.4f} max {calib.score_max:.4f}"
          + (" (degenerate)" if calib.degenerate else ""))
    return 0


def _read_calibration(out: Path):
    vals, cfg_hash = {}, ""
    for line in (out / "calibration.txt").read_text().splitlines():
        if line.startswith("# config_hash:"):
            cfg_hash = line.split(":", 1)[1].strip()
        elif "=" in line:
            k, _, v = line.partition("=")
            vals[k.strip()] = float(v)
    return fusion.CalibrationParams(vals["score_min"], vals["score_max"],
                                    vals["epsilon"]), cfg_hash


def cmd_fuse(args):
    cfg = _load_config(args)
    out = Path(args.out)
    rows, h1 = _read_all_scores(out)
    calib, h2 = _read_calibration(out)
    if h1 and h2 and h1 != h2:
        raise ManifestError(f"config hash mismatch: scores {h1} vs calibration {h2}")
    table = pipeline._by_video(rows)
    fused = fusion.fuse_table(table, calib, cfg.threshold)
    formats.write_fused_csv(out / "fused.csv", fused, h1 or h2)
    print(f"fused {len(fused)} videos -> {out / 'fused.csv'}")
    return 0


def cmd_evaluate(args):
    manifest = ingest(args.manifest)
    out = Path(args.out)
    rows, cfg_hash = _read_all_scores(out)
    fused_lines = (out / "fused.csv").read_text().splitlines()
    fused = []
    for line in fused_lines:
        if line.startswith("#") or line.startswith("video_id") or not line:
            continue
        vid, p, label = line.split(",")
        fused.append(fusion.FusedPrediction(vid, float(p), label, 0.5))
    results = pipeline.evaluate_scores(rows, fused, manifest.split("eval"))
    report = pipeline.render_report(results, cfg_hash)
    (out / "report.txt").write_text(report)
    print(report)
    return 0


def cmd_report(args):
    print((Path(args.out) / "report.txt").read_text())
    return 0


def cmd_selftest(args):
    cfg = _load_config(args)
    out = Path(args.out)
    corpus = out / "corpus"
    manifest_path = pipeline.build_selftest_corpus(corpus, seed=cfg.seed)
    manifest = ingest(manifest_path)
    results = pipeline.run_pipeline(cfg, manifest, out / "run")
    print((out / "run" / "report.txt").read_text())
    print("selftest completed")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="savdet",
                                     description="self-supervised audio-visual "
                                                 "forgery detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--seed", type=int, default=None)
        if manifest:
            p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("ingest-check", help="validate a dataset manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.set_defaults(fn=cmd_ingest_check)

    p = sub.add_parser("gen-pairs", help="dump blend pairs for inspection")
    common(p)
    p.add_argument("--region", choices=sorted(REGION_FLAG), default="face")
    p.add_argument("--count", type=int, default=16)
    p.set_defaults(fn=cmd_gen_pairs)

    p = sub.add_parser("train-visual", help="train one region branch")
    common(p)
    p.add_argument("--region", choices=sorted(REGION_FLAG), required=True)
    p.set_defaults(fn=cmd_train_visual)

    p = sub.add_parser("train-avsync", help="train the sync scorer")
    common(p)
    p.set_defaults(fn=cmd_train_avsync)

    p = sub.add_parser("score", help="score the eval split with one branch")
    common(p)
    p.add_argument("--branch", choices=sorted(BRANCH_FLAG), required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("calibrate", help="fit min-max calibration on AV scores")
    common(p, manifest=False)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("fuse", help="average-logit fusion of branch scores")
    common(p, manifest=False)
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("evaluate", help="AUC/AP report from score files")
    common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="print the last report")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("selftest", help="synthetic end-to-end run")
    common(p, manifest=False)
    p.set_defaults(fn=cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SavdetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
