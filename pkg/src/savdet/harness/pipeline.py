"""End-to-end wiring: train all branches on the manifest's (real-only) train
split, score the eval split, calibrate, fuse, evaluate, and emit reports.
Reruns with identical inputs produce byte-identical outputs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import avsync, fusion, metrics, visual_branch
from ..errors import DataError, ManifestError
from ..masks import RegionTag
from ..pseudo_forgery import PairConfig, make_pair
from . import config as config_mod
from . import formats, synth
from .manifest import DatasetManifest, VideoRecord, write_manifest

REGIONS = ((RegionTag.FACE, "FB"), (RegionTag.LIP, "LB"),
           (RegionTag.LOWER_FACE, "LFB"))
BRANCH_NAMES = ("FB", "LB", "LFB", "AV")


def _load_video_frames(rec: VideoRecord):
    frames = formats.read_frames(rec.frames_dir)
    h, w = frames[0].shape[:2]
    lms = formats.read_landmarks(rec.landmarks, w, h)
    if len(lms) != len(frames):
        raise ManifestError(f"{rec.video_id}: {len(frames)} frames but "
                            f"{len(lms)} landmark records")
    return frames, lms


def _train_stream(records: list[VideoRecord]):
    for rec in records:
        frames, lms = _load_video_frames(rec)
        yield from zip(frames, lms)


def train_all(cfg: config_mod.RunConfig, manifest: DatasetManifest, out_dir: Path):
    """Train three visual branches and the sync scorer; write checkpoints."""
    train = manifest.split("train")
    if not train:
        raise ManifestError("train split is empty")

    spec = visual_branch.EncoderSpec(kind=cfg.encoder_kind,
                                     input_size=cfg.input_size,
                                     feature_dim=cfg.feature_dim,
                                     seed=cfg.seed)
    pair_cfg = PairConfig()
    frame_data = list(_train_stream([r for r in train if r.frames_dir]))
    branch_models = {}
    for region, name in REGIONS:
        tc = visual_branch.TrainConfig(learning_rate=cfg.visual_lr,
                                       batch_size=cfg.visual_batch,
                                       steps=cfg.visual_steps,
                                       seed=cfg.seed)
        model = visual_branch.train_branch(frame_data, region, spec, tc, pair_cfg)
        formats.write_branch_checkpoint(out_dir / f"branch_{name.lower()}.savb",
                                        model)
        branch_models[name] = model

    clips = []
    for rec in train:
        if rec.audio_features and rec.visual_features:
            clips.append((formats.read_fseq(rec.audio_features),
                          formats.read_fseq(rec.visual_features)))
    if not clips:
        raise DataError("train split has no paired audio/visual features")
    sspec = avsync.ScorerSpec(audio_dim=clips[0][0].dim,
                              visual_dim=clips[0][1].dim,
                              hidden=cfg.sync_hidden, seed=cfg.seed)
    scfg = avsync.SyncConfig(window_radius=cfg.window_radius,
                             learning_rate=cfg.sync_lr,
                             clips_per_step=cfg.sync_clips,
                             steps=cfg.sync_steps, seed=cfg.seed)
    scorer = avsync.train_avsync(clips, scfg, sspec)
    formats.write_scorer_checkpoint(out_dir / "scorer_av.savb", scorer)
    return branch_models, scorer


def score_split(cfg: config_mod.RunConfig, records: list[VideoRecord],
                branch_models, scorer) -> list[tuple[str, str, float]]:
    rows = []
    for rec in sorted(records, key=lambda r: r.video_id):
        if rec.frames_dir:
            frames, lms = _load_video_frames(rec)
            for _, name in REGIONS:
                s = visual_branch.score_video(frames, branch_models[name],
                                              landmarks=lms,
                                              max_frames=cfg.max_frames)
                rows.append((rec.video_id, name, s))
        if rec.audio_features and rec.visual_features:
            a = formats.read_fseq(rec.audio_features)
            v = formats.read_fseq(rec.visual_features)
            sync = avsync.misalignment_score(a, v, scorer, cfg.window_radius)
            rows.append((rec.video_id, "AV", sync.aggregate))
    return rows


def _by_video(rows) -> dict[str, dict[str, float]]:
    table: dict[str, dict[str, float]] = {}
    for vid, branch, score in rows:
        table.setdefault(vid, {})[branch] = score
    return table


def evaluate_scores(rows, fused, records: list[VideoRecord]):
    """(per-branch and fused AUC/AP overall, plus per-manipulation breakdown)."""
    label_of = {r.video_id: r.label for r in records}
    group_of = {r.video_id: (r.manipulation or "none") for r in records}
    table = _by_video(rows)
    fused_p = {f.video_id: f.p_final for f in fused}

    results = {}
    vids = sorted(v for v in table if v in label_of)
    labels = np.array([1 if label_of[v] == "fake" else 0 for v in vids])
    groups = tuple(group_of[v] for v in vids)
    for name in BRANCH_NAMES + ("FUSED",):
        if name == "FUSED":
            scores = np.array([fused_p[v] for v in vids])
        else:
            if any(name not in table[v] for v in vids):
                continue
            scores = np.array([table[v][name] for v in vids])
        data = metrics.LabeledScores(labels, scores, groups)
        results[name] = {
            "auc": metrics.auc(data),
            "ap": metrics.average_precision(data),
            "breakdown": metrics.breakdown(data),
        }
    return results


def render_report(results, cfg_hash: str) -> str:
    lines = [f"# config_hash: {cfg_hash}", ""]
    names = [n for n in BRANCH_NAMES + ("FUSED",) if n in results]
    lines.append("overall:")
    lines.append("  branch   AUC      AP")
    for n in names:
        r = results[n]
        lines.append(f"  {n:<7s} {r['auc']:.4f}   {r['ap']:.4f}")
    groups = []
    for n in names:
        for g, _, _ in results[n]["breakdown"]:
            if g not in groups:
                groups.append(g)
    if groups:
        lines.append("")
        lines.append("per-manipulation:")
        header = "  group        " + "  ".join(f"{n}:AUC  {n}:AP " for n in names)
        lines.append(header.rstrip())
        for g in sorted(groups):
            cells = []
            for n in names:
                row = {gg: (a, p) for gg, a, p in results[n]["breakdown"]}
                if g in row:
                    cells.append(f"{row[g][0]:.4f}  {row[g][1]:.4f}")
                else:
                    cells.append("   -       -  ")
            lines.append(f"  {g:<12s} " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def run_pipeline(cfg: config_mod.RunConfig, manifest: DatasetManifest,
                 out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_mod.config_hash(cfg)

    eval_records = manifest.split("eval")
    if not eval_records:
        raise ManifestError("eval split is empty")

    branch_models, scorer = train_all(cfg, manifest, out)
    rows = score_split(cfg, eval_records, branch_models, scorer)
    formats.write_scores_csv(out / "scores.csv", rows, cfg_hash)

    av_rows = [(v, b, s) for v, b, s in rows if b == "AV"]
    if cfg.calibration_mode == "frozen":
        train_rows = score_split(cfg, manifest.split("train"), branch_models,
                                 scorer)
        pop = [s for _, b, s in train_rows if b == "AV"]
    else:
        pop = [s for _, _, s in av_rows]
    calib = fusion.fit_minmax(pop, cfg.epsilon)

    table = _by_video(rows)
    fused = fusion.fuse_table(table, calib, cfg.threshold)
    formats.write_fused_csv(out / "fused.csv", fused, cfg_hash)

    results = evaluate_scores(rows, fused, eval_records)
    report = render_report(results, cfg_hash)
    (out / "report.txt").write_text(report)
    config_mod.save(cfg, out / "run_config.txt")
    return results


# ---------------------------------------------------------------------------
# synthetic self-test corpus

def build_selftest_corpus(root, seed: int = 0, n_train: int = 12,
                          n_eval_real: int = 6, n_eval_fake: int = 6,
                          frames_per_video: int = 3, canvas: int = 64,
                          clip_len: int = 48) -> Path:
    """Write a fully synthetic dataset (frames, landmarks, features, manifest).

    Eval fakes cover three surrogate manipulations: blended frames
    ("selfblend"), shifted visual features ("avshift"), and audio-only swaps
    that reuse a real video's frames verbatim ("rtvc").
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    rng = np.random.default_rng(seed)
    pair_cfg = PairConfig()

    def make_video(vid: str, face_seed: int, av_seed: int, blend: bool,
                   av_shift: int, av_mismatch: bool,
                   reuse_frames_of: str | None = None):
        vdir = root / vid
        vdir.mkdir(exist_ok=True)
        if reuse_frames_of is None:
            frames, lms_list = [], []
            for f in range(frames_per_video):
                spec = synth.random_face_spec(face_seed * 1000 + f, canvas)
                img, lms = synth.synth_face(spec)
                if blend:
                    region = (RegionTag.FACE, RegionTag.LIP,
                              RegionTag.LOWER_FACE)[f % 3]
                    pair = make_pair(img, lms, region,
                                     seed=face_seed * 1000 + f + 7,
                                     config=pair_cfg)
                    img = pair.fake_view
                frames.append(img)
                lms_list.append(lms)
            formats.write_frames(vdir / "frames", frames)
            formats.write_landmarks(vdir / "landmarks.txt", lms_list)
            frames_dir = f"{vid}/frames"
            lms_path = f"{vid}/landmarks.txt"
        else:
            frames_dir = f"{reuse_frames_of}/frames"
            lms_path = f"{reuse_frames_of}/landmarks.txt"

        av_spec = synth.SynthAVSpec(T=clip_len, visual_shift=av_shift,
                                    mismatched=av_mismatch, seed=av_seed)
        audio, visual, _ = synth.synth_av(av_spec)
        formats.write_fseq(vdir / "audio.fseq", audio)
        formats.write_fseq(vdir / "visual.fseq", visual)
        return frames_dir, lms_path, f"{vid}/audio.fseq", f"{vid}/visual.fseq"

    for i in range(n_train):
        vid = f"train_{i:03d}"
        fd, lp, af, vf = make_video(vid, face_seed=int(rng.integers(1 << 30)),
                                    av_seed=int(rng.integers(1 << 30)),
                                    blend=False, av_shift=0, av_mismatch=False)
        rows.append(dict(video_id=vid, split="train", label="real",
                         manipulation="", frames_dir=fd, landmarks=lp,
                         audio_features=af, visual_features=vf))

    real_ids = []
    for i in range(n_eval_real):
        vid = f"eval_real_{i:03d}"
        fd, lp, af, vf = make_video(vid, face_seed=int(rng.integers(1 << 30)),
                                    av_seed=int(rng.integers(1 << 30)),
                                    blend=False, av_shift=0, av_mismatch=False)
        rows.append(dict(video_id=vid, split="eval", label="real",
                         manipulation="", frames_dir=fd, landmarks=lp,
                         audio_features=af, visual_features=vf))
        real_ids.append(vid)

    kinds = ("selfblend", "avshift", "rtvc")
    for i in range(n_eval_fake):
        kind = kinds[i % 3]
        vid = f"eval_fake_{kind}_{i:03d}"
        if kind == "selfblend":
            fd, lp, af, vf = make_video(vid, face_seed=int(rng.integers(1 << 30)),
                                        av_seed=int(rng.integers(1 << 30)),
                                        blend=True, av_shift=0,
                                        av_mismatch=False)
        elif kind == "avshift":
            fd, lp, af, vf = make_video(vid, face_seed=int(rng.integers(1 << 30)),
                                        av_seed=int(rng.integers(1 << 30)),
                                        blend=False, av_shift=5,
                                        av_mismatch=False)
        else:  # rtvc surrogate: authentic visual, unrelated audio
            fd, lp, af, vf = make_video(vid, face_seed=0,
                                        av_seed=int(rng.integers(1 << 30)),
                                        blend=False, av_shift=0,
                                        av_mismatch=True,
                                        reuse_frames_of=real_ids[i % len(real_ids)])
        rows.append(dict(video_id=vid, split="eval", label="fake",
                         manipulation=kind, frames_dir=fd, landmarks=lp,
                         audio_features=af, visual_features=vf))

    manifest_path = root / "manifest.csv"
    write_manifest(manifest_path, rows)
    return manifest_path
