import numpy as np
import pytest

from savdet.avsync import FeatureSequence, ScorerSpec, init_scorer
from savdet.errors import ConfigError, ManifestError
from savdet.harness import config as config_mod
from savdet.harness import formats, manifest, pipeline, synth
from savdet.harness.cli import main as cli_main
from savdet.masks import LandmarkSet, RegionTag
from savdet.visual_branch import EncoderSpec, new_model


class TestSynthFace:
    @pytest.mark.parametrize("seed", range(25))
    def test_landmark_consistency(self, seed):
        spec = synth.random_face_spec(seed)
        img, lms = synth.synth_face(spec)
        assert synth.landmark_consistency_check(spec, lms)
        assert img.shape == (128, 128, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_closed_mouth_valid(self):
        spec = synth.SynthFaceSpec(mouth_openness=0.0)
        img, lms = synth.synth_face(spec)
        assert synth.landmark_consistency_check(spec, lms)

    def test_deterministic(self):
        spec = synth.random_face_spec(7)
        a, _ = synth.synth_face(spec)
        b, _ = synth.synth_face(spec)
        assert np.array_equal(a, b)

    def test_small_canvas_supported(self):
        spec = synth.random_face_spec(3, canvas=48)
        img, lms = synth.synth_face(spec)
        assert img.shape == (48, 48, 3)
        assert synth.landmark_consistency_check(spec, lms, tolerance=1.5)

    def test_canvas_too_small_rejected(self):
        with pytest.raises(ConfigError):
            synth.SynthFaceSpec(canvas=32)

    def test_bad_openness_rejected(self):
        with pytest.raises(ConfigError):
            synth.SynthFaceSpec(mouth_openness=1.5)


class TestSynthAV:
    def test_shapes_and_label(self):
        a, v, label = synth.synth_av(synth.SynthAVSpec(T=32, D_a=8, D_v=6))
        assert a.values.shape == (32, 8) and v.values.shape == (32, 6)
        assert label == "real"

    def test_fake_labels(self):
        _, _, l1 = synth.synth_av(synth.SynthAVSpec(visual_shift=5))
        _, _, l2 = synth.synth_av(synth.SynthAVSpec(mismatched=True))
        assert l1 == "fake" and l2 == "fake"

    def test_shift_is_exact_roll_of_aligned_clip(self):
        # the shifted clip shares the aligned clip's audio and its visual is a
        # circular roll of the aligned visual -- exact by construction
        base = synth.SynthAVSpec(T=40, seed=11)
        shifted = synth.SynthAVSpec(T=40, seed=11, visual_shift=5)
        a0, v0, _ = synth.synth_av(base)
        a1, v1, _ = synth.synth_av(shifted)
        assert np.array_equal(a0.values, a1.values)
        assert np.array_equal(v1.values, np.roll(v0.values, 5, axis=0))

    def test_aligned_more_correlated_than_mismatched(self):
        # Monte Carlo: latent sharing makes |corr(audio_i, visual_j)| larger
        # on average for aligned clips than mismatched ones
        def mean_abs_corr(a, v):
            total = 0.0
            for i in range(a.shape[1]):
                for j in range(v.shape[1]):
                    total += abs(np.corrcoef(a[:, i], v[:, j])[0, 1])
            return total / (a.shape[1] * v.shape[1])

        aligned, mismatched = [], []
        for s in range(20):
            a, v, _ = synth.synth_av(synth.SynthAVSpec(T=64, D_a=4, D_v=4,
                                                       seed=s))
            aligned.append(mean_abs_corr(a.values, v.values))
            a, v, _ = synth.synth_av(synth.SynthAVSpec(T=64, D_a=4, D_v=4,
                                                       seed=s, mismatched=True))
            mismatched.append(mean_abs_corr(a.values, v.values))
        assert np.mean(aligned) > np.mean(mismatched) + 0.1

    def test_mixing_shared_across_seeds(self):
        # two clips with different per-clip seeds use the same latent->feature
        # mixing, so a noiseless single-latent clip exposes the mixing rows
        s1 = synth.SynthAVSpec(T=16, D_a=4, D_v=4, latent_dim=1,
                               noise_sigma=0.0, seed=1)
        s2 = synth.SynthAVSpec(T=16, D_a=4, D_v=4, latent_dim=1,
                               noise_sigma=0.0, seed=2)
        a1, _, _ = synth.synth_av(s1)
        a2, _, _ = synth.synth_av(s2)
        # each row of audio is latent[t] * mix_row, so row ratios across dims
        # are identical between the two clips
        r1 = a1.values[3] / a1.values[3, 0]
        r2 = a2.values[3] / a2.values[3, 0]
        assert np.allclose(r1, r2, atol=1e-9)

    def test_invalid_dims_rejected(self):
        with pytest.raises(ConfigError):
            synth.SynthAVSpec(T=1)
        with pytest.raises(ConfigError):
            synth.SynthAVSpec(noise_sigma=-0.5)


class TestFseq:
    def test_round_trip(self, tmp_path, rng):
        vals = rng.standard_normal((20, 6)).astype(np.float32).astype(np.float64)
        seq = FeatureSequence("audio", vals, 25.0)
        p = tmp_path / "a.fseq"
        formats.write_fseq(p, seq)
        back = formats.read_fseq(p)
        assert back.modality == "audio"
        assert back.frame_rate == 25.0
        assert np.array_equal(back.values, vals)

    def test_f32_quantization_on_write(self, tmp_path):
        vals = np.array([[np.pi]])
        formats.write_fseq(tmp_path / "x.fseq",
                           FeatureSequence("visual", vals, 25.0))
        back = formats.read_fseq(tmp_path / "x.fseq")
        assert back.values[0, 0] == np.float32(np.pi)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.fseq"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ManifestError, match="magic"):
            formats.read_fseq(p)

    def test_truncated_rejected(self, tmp_path, rng):
        p = tmp_path / "t.fseq"
        formats.write_fseq(p, FeatureSequence("audio",
                                              rng.standard_normal((8, 4))))
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(ManifestError, match="truncated"):
            formats.read_fseq(p)


class TestCheckpoints:
    def test_branch_round_trip(self, tmp_path):
        spec = EncoderSpec(kind="tiny_conv", input_size=16, feature_dim=8,
                           channels=(4, 4, 8, 8), seed=5)
        model = new_model(RegionTag.LIP, spec, 3)
        # write/read casts through f32; pre-cast so the round trip is exact
        for k in model.params:
            model.params[k] = model.params[k].astype(np.float32).astype(np.float64)
        p = tmp_path / "b.savb"
        formats.write_branch_checkpoint(p, model)
        back = formats.read_branch_checkpoint(p)
        assert back.region == RegionTag.LIP
        assert back.spec == spec
        assert sorted(back.params) == sorted(model.params)
        for k in model.params:
            assert np.array_equal(back.params[k], model.params[k])

    def test_scorer_round_trip(self, tmp_path):
        spec = ScorerSpec(audio_dim=6, visual_dim=4, hidden=12, seed=9)
        model = init_scorer(spec)
        for k in model.params:
            model.params[k] = model.params[k].astype(np.float32).astype(np.float64)
        p = tmp_path / "s.savb"
        formats.write_scorer_checkpoint(p, model)
        back = formats.read_scorer_checkpoint(p)
        assert back.spec == spec
        for k in model.params:
            assert np.array_equal(back.params[k], model.params[k])

    def test_kind_mixup_rejected(self, tmp_path):
        model = init_scorer(ScorerSpec(4, 4, hidden=12))
        p = tmp_path / "s.savb"
        formats.write_scorer_checkpoint(p, model)
        with pytest.raises(ManifestError):
            formats.read_branch_checkpoint(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.savb"
        p.write_bytes(b"JUNK" + b"\x00" * 16)
        with pytest.raises(ManifestError, match="magic"):
            formats.read_scorer_checkpoint(p)


class TestLandmarkFiles:
    def test_round_trip_six_decimals(self, tmp_path, face):
        _, lms = face
        p = tmp_path / "lms.txt"
        formats.write_landmarks(p, [lms, lms])
        back = formats.read_landmarks(p, lms.image_width, lms.image_height)
        assert len(back) == 2
        assert np.allclose(back[0].points, lms.points, atol=5e-7)

    def test_malformed_line_rejected(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("0 1.0 2.0 3.0\n")
        with pytest.raises(ManifestError, match="136"):
            formats.read_landmarks(p, 64, 64)


class TestFrames:
    def test_round_trip_quantized(self, tmp_path, rng):
        frames = [rng.uniform(0, 1, (16, 16, 3)) for _ in range(3)]
        formats.write_frames(tmp_path / "fr", frames)
        back = formats.read_frames(tmp_path / "fr")
        assert len(back) == 3
        for orig, rb in zip(frames, back):
            assert np.abs(orig - rb).max() <= 0.5 / 255.0 + 1e-12

    def test_empty_dir_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ManifestError):
            formats.read_frames(tmp_path / "empty")


class TestScoreCsv:
    def test_round_trip_with_hash(self, tmp_path):
        rows = [("vid_a", "FB", 0.123456789012), ("vid_b", "AV", 3.25)]
        p = tmp_path / "scores.csv"
        formats.write_scores_csv(p, rows, "abc123def456")
        back, h = formats.read_scores_csv(p)
        assert h == "abc123def456"
        assert back == [("vid_a", "FB", pytest.approx(0.123456789012, rel=1e-11)),
                        ("vid_b", "AV", 3.25)]

    def test_missing_header_rejected(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("vid,FB,0.5\n")
        with pytest.raises(ManifestError, match="header"):
            formats.read_scores_csv(p)


class TestManifest:
    def _write_corpus(self, root, rows_patch=None):
        (root / "v1" / "frames").mkdir(parents=True)
        formats.write_frames(root / "v1" / "frames",
                             [np.zeros((16, 16, 3))])
        pts = np.clip(np.random.default_rng(0).uniform(2, 13, (68, 2)), 2, 13)
        formats.write_landmarks(root / "v1" / "landmarks.txt",
                                [LandmarkSet(pts, 16, 16)])
        formats.write_fseq(root / "v1" / "a.fseq",
                           FeatureSequence("audio", np.zeros((8, 4))))
        formats.write_fseq(root / "v1" / "v.fseq",
                           FeatureSequence("visual", np.zeros((8, 4))))
        rows = [dict(video_id="v1", split="train", label="real", manipulation="",
                     frames_dir="v1/frames", landmarks="v1/landmarks.txt",
                     audio_features="v1/a.fseq", visual_features="v1/v.fseq"),
                dict(video_id="v2", split="eval", label="fake",
                     manipulation="wav2lip", frames_dir="", landmarks="",
                     audio_features="v1/a.fseq", visual_features="v1/v.fseq")]
        if rows_patch:
            rows_patch(rows)
        manifest.write_manifest(root / "manifest.csv", rows)
        return root / "manifest.csv"

    def test_valid_manifest_ingests(self, tmp_path):
        mpath = self._write_corpus(tmp_path)
        m = manifest.ingest(mpath)
        assert len(m.records) == 2
        assert m.split("train")[0].video_id == "v1"
        assert m.split("eval")[0].frames_dir is None

    def test_all_violations_reported_at_once(self, tmp_path):
        def patch(rows):
            rows[0]["label"] = "fake"            # fake in train
            rows[1]["video_id"] = "v1"           # duplicate id
            rows[1]["audio_features"] = "nope.fseq"  # missing path
        mpath = self._write_corpus(tmp_path, patch)
        with pytest.raises(ManifestError) as exc:
            manifest.ingest(mpath)
        msg = str(exc.value)
        assert "train split" in msg
        assert "duplicate" in msg
        assert "missing audio_features" in msg

    def test_bad_fseq_magic_reported(self, tmp_path):
        mpath = self._write_corpus(tmp_path)
        (tmp_path / "v1" / "a.fseq").write_bytes(b"XXXX" + b"\x00" * 30)
        with pytest.raises(ManifestError, match="magic"):
            manifest.ingest(mpath)

    def test_wrong_header_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id,split\nx,train\n")
        with pytest.raises(ManifestError, match="header"):
            manifest.ingest(p)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            manifest.ingest(tmp_path / "absent.csv")


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = config_mod.RunConfig(seed=3, visual_lr=0.02, encoder_kind="patch_stats")
        p = tmp_path / "cfg.txt"
        config_mod.save(cfg, p)
        assert config_mod.load(p) == cfg

    def test_hash_sensitive_to_values(self):
        h1 = config_mod.config_hash(config_mod.RunConfig(seed=0))
        h2 = config_mod.config_hash(config_mod.RunConfig(seed=1))
        assert h1 != h2
        assert len(h1) == 12

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("bogus = 1\n")
        with pytest.raises(ConfigError, match="unknown key"):
            config_mod.load(p)

    def test_bad_calibration_mode_rejected(self):
        with pytest.raises(ConfigError):
            config_mod.RunConfig(calibration_mode="oracle")


def tiny_config(seed=0):
    return config_mod.RunConfig(seed=seed, encoder_kind="patch_stats",
                                input_size=32, feature_dim=8, visual_steps=3,
                                visual_batch=4, sync_hidden=12, sync_steps=3,
                                sync_clips=2, window_radius=3)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return pipeline.build_selftest_corpus(root, seed=0, n_train=4,
                                          n_eval_real=3, n_eval_fake=3,
                                          frames_per_video=2, clip_len=24)


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "cfg.txt"
    config_mod.save(tiny_config(), p)
    return p


class TestPipeline:
    def test_corpus_ingests(self, corpus):
        m = manifest.ingest(corpus)
        assert len(m.split("train")) == 4
        assert len(m.split("eval")) == 6
        kinds = {r.manipulation for r in m.split("eval") if r.label == "fake"}
        assert kinds == {"selfblend", "avshift", "rtvc"}

    def test_run_pipeline_outputs(self, corpus, tmp_path):
        m = manifest.ingest(corpus)
        results = pipeline.run_pipeline(tiny_config(), m, tmp_path / "run")
        for name in ("FB", "LB", "LFB", "AV", "FUSED"):
            assert name in results
            assert 0.0 <= results[name]["auc"] <= 1.0
        for fname in ("scores.csv", "fused.csv", "report.txt",
                      "run_config.txt", "branch_fb.savb", "scorer_av.savb"):
            assert (tmp_path / "run" / fname).exists()

    def test_rtvc_visual_scores_tie_with_reused_real(self, corpus, tmp_path):
        # an audio-only fake reuses a real video's frames verbatim, so its
        # visual-branch scores must exactly equal the donor's
        m = manifest.ingest(corpus)
        pipeline.run_pipeline(tiny_config(), m, tmp_path / "run")
        rows, _ = formats.read_scores_csv(tmp_path / "run" / "scores.csv")
        table = pipeline._by_video(rows)
        rtvc = [v for v in table if "rtvc" in v]
        assert rtvc
        donors = {r.video_id: r for r in m.split("eval")}
        for vid in rtvc:
            frames_dir = donors[vid].frames_dir
            donor = next(v for v in table
                         if v != vid and donors[v].frames_dir == frames_dir)
            for b in ("FB", "LB", "LFB"):
                assert table[vid][b] == table[donor][b]

    def test_determinism_byte_identical(self, corpus, tmp_path):
        m = manifest.ingest(corpus)
        pipeline.run_pipeline(tiny_config(), m, tmp_path / "r1")
        pipeline.run_pipeline(tiny_config(), m, tmp_path / "r2")
        for fname in ("scores.csv", "fused.csv", "report.txt"):
            assert (tmp_path / "r1" / fname).read_bytes() == \
                (tmp_path / "r2" / fname).read_bytes()


class TestCli:
    def test_ingest_check(self, corpus, capsys):
        assert cli_main(["ingest-check", "--manifest", str(corpus)]) == 0
        assert "manifest OK" in capsys.readouterr().out

    def test_ingest_check_failure_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "m.csv"
        bad.write_text(",".join(manifest.COLUMNS) +
                       "\nv1,train,fake,,,,,\n")
        assert cli_main(["ingest-check", "--manifest", str(bad)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_gen_pairs(self, corpus, cfg_file, tmp_path, capsys):
        out = tmp_path / "pairs"
        rc = cli_main(["gen-pairs", "--manifest", str(corpus), "--out",
                       str(out), "--config", str(cfg_file), "--region", "lip",
                       "--count", "2"])
        assert rc == 0
        assert (out / "pairs.json").exists()
        assert (out / "pair_0000_real.png").exists()
        assert (out / "pair_0000_fake.png").exists()

    def test_stagewise_matches_pipeline(self, corpus, cfg_file, tmp_path):
        out = tmp_path / "stage"
        out.mkdir()
        args = ["--manifest", str(corpus), "--out", str(out),
                "--config", str(cfg_file)]
        for region in ("face", "lip", "lower-face"):
            assert cli_main(["train-visual", *args, "--region", region]) == 0
        assert cli_main(["train-avsync", *args]) == 0
        for branch in ("fb", "lb", "lfb", "av"):
            assert cli_main(["score", *args, "--branch", branch]) == 0
        noman = ["--out", str(out), "--config", str(cfg_file)]
        assert cli_main(["calibrate", *noman]) == 0
        assert cli_main(["fuse", *noman]) == 0
        assert cli_main(["evaluate", *args]) == 0
        assert (out / "report.txt").exists()

        # the monolithic pipeline on the same corpus and config agrees up to
        # the f32 quantization the stagewise path incurs by round-tripping
        # checkpoints through disk
        m = manifest.ingest(corpus)
        pipeline.run_pipeline(tiny_config(), m, tmp_path / "mono")
        stage_rows = []
        for b in ("fb", "lb", "lfb", "av"):
            r, _ = formats.read_scores_csv(out / f"scores_{b}.csv")
            stage_rows.extend(r)
        mono_rows, _ = formats.read_scores_csv(tmp_path / "mono" / "scores.csv")
        assert len(stage_rows) == len(mono_rows)
        for (v1, b1, s1), (v2, b2, s2) in zip(sorted(stage_rows),
                                              sorted(mono_rows)):
            assert (v1, b1) == (v2, b2)
            assert s1 == pytest.approx(s2, rel=1e-4, abs=1e-5)

    def test_hash_mismatch_rejected(self, corpus, cfg_file, tmp_path, capsys):
        out = tmp_path / "mix"
        out.mkdir()
        formats.write_scores_csv(out / "scores_fb.csv",
                                 [("v", "FB", 0.5)], "aaaaaaaaaaaa")
        formats.write_scores_csv(out / "scores_av.csv",
                                 [("v", "AV", 1.0)], "bbbbbbbbbbbb")
        rc = cli_main(["fuse", "--out", str(out), "--config", str(cfg_file)])
        assert rc == 1
        assert "mixed config hashes" in capsys.readouterr().err
