import json
import os

import numpy as np
import pytest

from stressvoice.cli import dispatch
from stressvoice import audio, features, sessions
from stressvoice.synthcorpus import SynthSpec, synth_audio_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    spec = SynthSpec(n_speakers=4, duration_s=2.0, seed=21)
    synth_audio_corpus(spec, out)
    return out


@pytest.fixture(scope="module")
def extracted(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_feats")
    rc = dispatch(["extract", "--sessions", str(corpus / "sessions.csv"),
                   "--out", str(out)])
    assert rc == 0
    return out


class TestDispatchBasics:
    def test_help_exits_zero(self, capsys):
        assert dispatch(["--help"]) == 0
        assert "synth" in capsys.readouterr().out

    def test_version(self, capsys):
        assert dispatch(["--version"]) == 0

    def test_unknown_subcommand(self, capsys):
        assert dispatch(["frobnicate"]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_required_flag(self):
        assert dispatch(["extract", "--out", "/tmp/x"]) == 1

    def test_bad_sessions_csv_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "sessions.csv"
        bad.write_text("speaker_id,nope\n1,2\n")
        rc = dispatch(["extract", "--sessions", str(bad),
                       "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "error" in capsys.readouterr().err


class TestSynth:
    def test_writes_corpus_and_manifest(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_speakers": 3, "duration_s": 1.0}))
        out = tmp_path / "corpus"
        rc = dispatch(["synth", "--spec", str(spec), "--out", str(out),
                       "--seed", "5"])
        assert rc == 0
        records = sessions.load_sessions(out / "sessions.csv")
        assert len(records) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 5

    def test_deterministic_wavs(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_speakers": 2, "duration_s": 1.0}))
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert dispatch(["synth", "--spec", str(spec), "--out", str(out),
                             "--seed", "3"]) == 0
        assert (a / "spk001.wav").read_bytes() == (b / "spk001.wav").read_bytes()


class TestCanonicalize:
    def test_resamples_and_normalizes(self, tmp_path):
        sr = 44100
        t = np.arange(sr) / sr
        buf = audio.AudioBuffer(samples=0.25 * np.sin(2 * np.pi * 220 * t),
                                sample_rate=sr)
        src = tmp_path / "in.wav"
        dst = tmp_path / "out.wav"
        audio.write_wav(buf, src)
        assert dispatch(["canonicalize", "--in", str(src),
                         "--out", str(dst)]) == 0
        out = audio.read_wav(dst)
        assert out.sample_rate == audio.CANONICAL_RATE
        assert np.abs(out.samples).max() == pytest.approx(0.89125, abs=1e-3)


class TestExtract:
    def test_feature_files(self, corpus, extracted):
        records = sessions.load_sessions(corpus / "sessions.csv")
        reg = features.build_registry()
        for r in records:
            seq = features.load_features(extracted / f"{r.speaker_id}.ftr")
            assert seq.data.shape[1] == len(reg.entries)
        meta = json.loads((extracted / "registry.json").read_text())
        assert len(meta["names"]) == 88


class TestBuildTargets:
    def test_scaled_targets_csv(self, corpus, tmp_path):
        out = tmp_path / "targets"
        rc = dispatch(["build-targets",
                       "--sessions", str(corpus / "sessions.csv"),
                       "--out", str(out)])
        assert rc == 0
        lines = (out / "targets.csv").read_text().splitlines()
        assert len(lines) == 5
        assert (out / "scaling.json").exists()
        # train rows scaled into [0, 1]
        for line in lines[1:]:
            cells = line.split(",")
            if cells[1] == "train":
                vals = [float(v) for v in cells[5:]]
                assert all(-1e-12 <= v <= 1 + 1e-12 for v in vals)


class TestTrainAndEvaluate:
    def test_round_trip(self, corpus, extracted, tmp_path, capsys):
        cfg = {"sessions": str(corpus / "sessions.csv"),
               "features_dir": str(extracted),
               "max_epochs": 2, "patience": 2, "hidden": 4,
               "model": "agru", "task": "mtl"}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "run"
        rc = dispatch(["train", "--config", str(cfg_path),
                       "--out", str(out), "--seed", "1"])
        assert rc == 0
        assert (out / "checkpoint.ckpt").exists()
        assert (out / "history.csv").exists()
        capsys.readouterr()
        rc = dispatch(["evaluate",
                       "--checkpoint", str(out / "checkpoint.ckpt"),
                       "--sessions", str(corpus / "sessions.csv"),
                       "--features", str(extracted), "--split", "dev"])
        assert rc == 0
        assert "dev MAE" in capsys.readouterr().out


class TestGridAndAttention:
    def test_grid_then_attention(self, corpus, extracted, tmp_path):
        cfg = {"sessions": str(corpus / "sessions.csv"),
               "features_dir": str(extracted),
               "max_epochs": 2, "patience": 2, "hidden": 4, "seed": 2}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "grid"
        rc = dispatch(["grid", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        lines = (out / "results.csv").read_text().splitlines()
        assert len(lines) == 9
        ckpts = [f for f in os.listdir(out) if f.endswith(".ckpt")]
        assert len(ckpts) == 3

        # attention report needs an attention checkpoint; find one or skip
        from stressvoice.model import load_checkpoint
        attn = [c for c in ckpts
                if load_checkpoint(out / c)[1]["pooling"] == "attention"]
        if not attn:
            pytest.skip("no attention model selected on this tiny corpus")
        rep_dir = tmp_path / "attn"
        rc = dispatch(["attention", "--checkpoint", str(out / attn[0]),
                       "--sessions", str(corpus / "sessions.csv"),
                       "--features", str(extracted), "--out", str(rep_dir)])
        assert rc == 0
        assert (rep_dir / "attention_curves.csv").exists()


class TestHistograms:
    def test_csv_written(self, corpus, tmp_path):
        out = tmp_path / "hist.csv"
        rc = dispatch(["histograms",
                       "--sessions", str(corpus / "sessions.csv"),
                       "--out", str(out), "--bins", "4"])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 3 * 4
