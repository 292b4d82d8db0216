"""End-to-end command-line behavior: outputs, warnings, and exit codes."""

import json

import numpy as np
import pytest

from videodms.cli import main
from videodms.model import ModelConfig, param_count
from videodms.sampleio import FrameStream, write_frame_dir, write_landmark_csv

TINY_RUN = {
    "model": {"features": ["stmap", "landmarks"], "d": 8,
              "stmap_channels": [4, 8], "landmark_channels": 4,
              "expert_hidden": 16, "temporal_expert_hidden": 16,
              "router_hidden": 8, "gate_hidden": 8},
    "synth": {"n_samples": 3, "seed": 4},
    "train": {"batch_size": 2, "max_iters": 3, "lr": 0.001, "seed": 1,
              "eval_every": 10},
}


def write_config(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def face_landmarks(t, cx=32.0, cy=32.0):
    marks = np.zeros((t, 106, 2))
    ang = np.linspace(0, 2 * np.pi, 106, endpoint=False)
    marks[..., 0] = cx + 20 * np.cos(ang)
    marks[..., 1] = cy + 25 * np.sin(ang)
    return marks


def write_stream_inputs(tmp_path, t, rng, marks=None):
    frames = rng.integers(0, 256, (t, 64, 64, 3), dtype=np.uint8)
    manifest = write_frame_dir(FrameStream(frames=frames), tmp_path / "frames")
    if marks is None:
        marks = face_landmarks(t)
    write_landmark_csv(marks, tmp_path / "lm.csv")
    rows = "\n".join(f"{70 + i % 5}.0,15.0,{i % 2},0" for i in range(t))
    (tmp_path / "lab.csv").write_text(rows + "\n")
    return [str(manifest), str(tmp_path / "lm.csv"), str(tmp_path / "lab.csv")]


class TestInfo:
    def test_matches_param_oracle(self, capsys):
        assert main(["info"]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["total"]["params"] == param_count(ModelConfig())
        assert 2_000_000 <= info["total"]["params"] <= 8_000_000
        assert info["total"]["flops"] > 0

    def test_unknown_config_key_is_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"model": {"depth": 3}})
        assert main(["info", "--config", cfg]) == 2
        assert "depth" in capsys.readouterr().err

    def test_missing_config_file_is_exit_3(self, tmp_path):
        assert main(["info", "--config", str(tmp_path / "nope.json")]) == 3


class TestGenSynth:
    def test_writes_samples_manifest_and_echo(self, tmp_path, capsys):
        out = tmp_path / "ds"
        assert main(["gen-synth", "--out", str(out), "--n", "3",
                     "--seed", "4"]) == 0
        assert "wrote 3 samples" in capsys.readouterr().out
        assert sorted(p.name for p in out.glob("*.vdms")) == [
            "sample_00000.vdms", "sample_00001.vdms", "sample_00002.vdms"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["samples"]) == 3
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["synth"]["n_samples"] == 3
        assert resolved["synth"]["seed"] == 4

    def test_same_seed_byte_identical(self, tmp_path):
        for tag in ("a", "b"):
            assert main(["gen-synth", "--out", str(tmp_path / tag),
                         "--n", "2", "--seed", "6"]) == 0
        for name in ("sample_00000.vdms", "sample_00001.vdms"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_infeasible_phi_is_exit_2_with_interval(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"synth": {"phi": -0.9}})
        assert main(["gen-synth", "--out", str(tmp_path / "ds"),
                     "--n", "1", "--config", cfg]) == 2
        assert "feasible interval" in capsys.readouterr().err


class TestPreprocess:
    def test_600_frames_yield_11_samples(self, tmp_path, rng, capsys):
        args = write_stream_inputs(tmp_path, 600, rng)
        out = tmp_path / "pp"
        assert main(["preprocess", "--frames", args[0], "--landmarks", args[1],
                     "--labels", args[2], "--out", str(out)]) == 0
        assert "wrote 11 samples, skipped 0 windows" in capsys.readouterr().out
        assert len(list(out.glob("*.vdms"))) == 11
        manifest = json.loads((out / "manifest.json").read_text())
        assert [s["window"] for s in manifest["samples"]] == \
               [[a, a + 300] for a in range(0, 301, 30)]

    def test_short_stream_warns_and_exits_zero(self, tmp_path, rng, capsys):
        args = write_stream_inputs(tmp_path, 299, rng)
        out = tmp_path / "pp"
        assert main(["preprocess", "--frames", args[0], "--landmarks", args[1],
                     "--labels", args[2], "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert "wrote 0 samples" in captured.out
        assert "shorter than one window" in captured.err
        assert list(out.glob("*.vdms")) == []

    def test_degenerate_window_skipped_and_counted(self, tmp_path, rng, capsys):
        marks = face_landmarks(600)
        marks[580:] = 32.0  # collapse landmarks near the end of the stream
        args = write_stream_inputs(tmp_path, 600, rng, marks=marks)
        out = tmp_path / "pp"
        assert main(["preprocess", "--frames", args[0], "--landmarks", args[1],
                     "--labels", args[2], "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert "wrote 10 samples, skipped 1 windows" in captured.out
        assert "skipping window [300, 600)" in captured.err

    def test_misaligned_streams_exit_2(self, tmp_path, rng, capsys):
        args = write_stream_inputs(tmp_path, 320, rng)
        write_landmark_csv(face_landmarks(300), tmp_path / "lm.csv")
        assert main(["preprocess", "--frames", args[0], "--landmarks", args[1],
                     "--labels", args[2], "--out", str(tmp_path / "pp")]) == 2
        assert "disagree" in capsys.readouterr().err


class TestTrainEval:
    def test_train_then_eval_round_trip(self, tmp_path, capsys):
        cfg = write_config(tmp_path, TINY_RUN)
        ds = tmp_path / "ds"
        assert main(["gen-synth", "--out", str(ds), "--config", cfg]) == 0
        run = tmp_path / "run"
        assert main(["train", "--config", cfg, "--data", str(ds),
                     "--out", str(run)]) == 0
        out = capsys.readouterr().out
        assert "final checkpoint" in out
        assert (run / "final.vdck").exists()
        assert (run / "resolved_config.json").exists()
        lines = (run / "loss_curve.csv").read_text().strip().splitlines()
        assert lines[0] == "iter,total,l_drow,l_cog,l_hr,l_rr,l_align,lambda"
        assert len(lines) == 4

        assert main(["eval", "--ckpt", str(run / "final.vdck"),
                     "--data", str(ds), "--config", cfg]) == 0
        captured = capsys.readouterr()
        report = json.loads(captured.out)
        assert report["n_samples"] == 3
        assert set(report["regression"]) == {"hr", "rr"}
        assert "pearson" in captured.err

    def test_eval_missing_checkpoint_exit_3(self, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path / "none.vdck"),
                     "--data", str(tmp_path)]) == 3

    def test_train_empty_dataset_exit_3(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main(["train", "--data", str(tmp_path / "empty"),
                     "--out", str(tmp_path / "run")]) == 3
