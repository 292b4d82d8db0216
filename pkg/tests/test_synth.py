"""Generator oracles: label statistics, embedded signals, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from videodms.preprocess import ConfigurationError
from videodms.synth import (BlinkModel, GroundTruth, SynthConfig, _joint_table,
                            gen_dataset, generate_sample, render_stream,
                            sample_labels)


class TestJointTable:
    def test_rows_sum_to_marginals(self):
        t = _joint_table(0.24, 0.30, -0.2)
        np.testing.assert_allclose(t.sum(), 1.0, atol=1e-12)
        np.testing.assert_allclose(t[1].sum(), 0.24, atol=1e-12)
        np.testing.assert_allclose(t[:, 1].sum(), 0.30, atol=1e-12)

    def test_infeasible_phi_reports_interval(self):
        with pytest.raises(ConfigurationError, match=r"feasible interval.*-0\.36"):
            _joint_table(0.24, 0.30, -0.9)

    def test_configured_correlation_achieved(self):
        for p_d, p_c, phi in [(0.5, 0.5, -0.4), (0.24, 0.30, -0.35),
                              (0.24, 0.30, 0.0), (0.3, 0.6, 0.5)]:
            t = _joint_table(p_d, p_c, phi)
            d = np.array([0, 0, 1, 1])
            c = np.array([0, 1, 0, 1])
            w = t.ravel()
            ed, ec = (d * w).sum(), (c * w).sum()
            cov = (d * c * w).sum() - ed * ec
            corr = cov / np.sqrt(ed * (1 - ed) * ec * (1 - ec))
            np.testing.assert_allclose(corr, phi, atol=1e-12)


class TestLabelSampling:
    def draw(self, config, n=10000, seed=0):
        rng = np.random.default_rng(seed)
        gts = [sample_labels(rng, config) for _ in range(n)]
        return (np.array([g.d for g in gts]), np.array([g.c for g in gts]),
                np.array([g.h for g in gts]), np.array([g.r for g in gts]))

    def test_marginals_and_ranges(self):
        cfg = SynthConfig()
        d, c, h, r = self.draw(cfg)
        assert abs(d.mean() - 0.24) < 0.02
        assert abs(c.mean() - 0.30) < 0.02
        assert h.min() >= cfg.hr_range[0] and h.max() <= cfg.hr_range[1]
        assert r.min() >= cfg.rr_range[0] and r.max() <= cfg.rr_range[1]

    def test_independent_when_phi_zero(self):
        d, c, _, _ = self.draw(SynthConfig(phi=0.0))
        assert abs(np.corrcoef(d, c)[0, 1]) < 0.03

    def test_negative_correlation_default(self):
        cfg = SynthConfig()
        d, c, _, _ = self.draw(cfg)
        assert abs(np.corrcoef(d, c)[0, 1] - cfg.phi) < 0.05

    def test_symmetric_marginals_support_minus_point_four(self):
        d, c, _, _ = self.draw(SynthConfig(phi=-0.4, p_drowsy=0.5, p_high_load=0.5))
        assert abs(np.corrcoef(d, c)[0, 1] + 0.4) < 0.05


class TestRenderedSignals:
    def test_face_mean_green_fft_peak_at_pulse(self):
        cfg = SynthConfig(noise_sigma=0.0, pulse_amplitude=4.0,
                          blink=BlinkModel(rate_per_min=0.0))
        gt = GroundTruth(h=72.0, r=15.0, d=0, c=0)
        stream, _ = render_stream(gt, cfg, np.random.default_rng(0))
        g = stream.frames[..., 1].mean(axis=(1, 2))
        g = g - g.mean()
        freqs = np.fft.rfftfreq(len(g), 1 / cfg.fps)
        peak = freqs[1 + np.argmax(np.abs(np.fft.rfft(g))[1:])]
        assert abs(peak - 1.2) <= cfg.fps / len(g)

    def test_landmarks_oscillate_at_respiration_rate(self):
        cfg = SynthConfig(noise_sigma=0.0)
        gt = GroundTruth(h=90.0, r=18.0, d=0, c=0)
        _, marks = render_stream(gt, cfg, np.random.default_rng(1))
        y = marks[:, 0, 1] - marks[:, 0, 1].mean()
        freqs = np.fft.rfftfreq(len(y), 1 / cfg.fps)
        peak = freqs[1 + np.argmax(np.abs(np.fft.rfft(y))[1:])]
        assert abs(peak - 18.0 / 60.0) <= cfg.fps / len(y)

    def test_stmap_dominant_frequency_matches_hr(self):
        # recoverability: the pulse survives the full preprocessing chain
        cfg = SynthConfig(noise_sigma=1.0, pulse_amplitude=2.0)
        for sample_seed in (11, 12):
            gt, bundle = generate_sample(cfg, sample_seed)
            sig = bundle.stmap[:, :, 0].mean(axis=1)
            sig = sig - sig.mean()
            spec = np.abs(np.fft.rfft(sig))
            freqs = np.fft.rfftfreq(len(sig), 1 / cfg.fps)
            in_band = freqs >= 0.4
            peak = freqs[in_band][np.argmax(spec[in_band])]
            assert abs(peak - gt.h / 60.0) <= 1.5 * cfg.fps / len(sig)

    def test_blinks_darken_eye_patches_longer_when_drowsy(self):
        cfg = SynthConfig(noise_sigma=0.0)
        lows = []
        for d in (0, 1):
            gt = GroundTruth(h=70.0, r=15.0, d=d, c=0)
            stream, marks = render_stream(gt, cfg, np.random.default_rng(7))
            eye = stream.frames[:, 40:60, 30:50, :].mean(axis=(1, 2, 3))
            lows.append((eye < eye.mean() - 3).sum())
        assert lows[1] > lows[0]  # slow blinks occupy more frames


class TestDataset:
    def test_dataset_writes_samples_and_manifest(self, tmp_path):
        cfg = SynthConfig(n_samples=3, seed=9)
        manifest = gen_dataset(cfg, tmp_path)
        files = sorted(p.name for p in Path(tmp_path).glob("*.vdms"))
        assert len(files) == 3
        assert [s["file"] for s in manifest["samples"]] == files
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk["seed"] == 9
        assert [s["seed_i"] for s in on_disk["samples"]] == [9 ^ 0, 9 ^ 1, 9 ^ 2]

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_samples=2, seed=5)
        gen_dataset(cfg, tmp_path / "a")
        gen_dataset(cfg, tmp_path / "b")
        for name in ("sample_00000.vdms", "sample_00001.vdms", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_samples_are_pairwise_distinct(self, tmp_path):
        cfg = SynthConfig(n_samples=3, seed=1)
        gen_dataset(cfg, tmp_path)
        blobs = [p.read_bytes() for p in sorted(Path(tmp_path).glob("*.vdms"))]
        assert len({hash(b) for b in blobs}) == 3

    def test_invalid_noise_rejected(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(noise_sigma=-1.0)

    def test_infeasible_phi_rejected_at_generation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigurationError, match="feasible"):
            sample_labels(rng, SynthConfig(phi=-0.9))
