"""Serialization round trips and corruption handling for every format."""

import struct

import numpy as np
import pytest

from conftest import random_bundle
from videodms.sampleio import (FormatError, FrameStream, Labels, read_bmp,
                               read_frame_dir, read_label_csv,
                               read_landmark_csv, read_sample, write_bmp,
                               write_frame_dir, write_landmark_csv,
                               write_sample)


class TestVdms:
    def test_round_trip_bitwise(self, tmp_path, rng):
        bundle = random_bundle(rng, t=12, labels=Labels(82.5, 17.25, 1, 0))
        p1, p2 = tmp_path / "a.vdms", tmp_path / "b.vdms"
        write_sample(bundle, p1)
        loaded = read_sample(p1)
        for name, arr in bundle.arrays().items():
            np.testing.assert_array_equal(getattr(loaded, name), arr)
        assert loaded.labels == bundle.labels
        write_sample(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_offset_zero(self, tmp_path, rng):
        p = tmp_path / "a.vdms"
        write_sample(random_bundle(rng), p)
        blob = bytearray(p.read_bytes())
        blob[:4] = b"XXXX"
        p.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic") as e:
            read_sample(p)
        assert e.value.offset == 0

    def test_bad_version(self, tmp_path, rng):
        p = tmp_path / "a.vdms"
        write_sample(random_bundle(rng), p)
        blob = bytearray(p.read_bytes())
        blob[4:8] = struct.pack("<I", 7)
        p.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version 7"):
            read_sample(p)

    def test_truncation_reports_offset(self, tmp_path, rng):
        p = tmp_path / "a.vdms"
        write_sample(random_bundle(rng), p)
        blob = p.read_bytes()[:100]
        p.write_bytes(blob)
        with pytest.raises(FormatError, match="truncated"):
            read_sample(p)

    def test_label_validation(self, rng):
        bundle = random_bundle(rng, labels=Labels(300.0, 15.0, 0, 0))
        with pytest.raises(ValueError, match="heart rate"):
            bundle.validate()


class TestCsv:
    def test_landmark_round_trip(self, tmp_path, rng):
        pts = np.round(rng.uniform(0, 128, (9, 106, 2)), 3)
        p = tmp_path / "lm.csv"
        write_landmark_csv(pts, p)
        np.testing.assert_allclose(read_landmark_csv(p), pts, atol=1e-3)

    def test_landmark_wrong_columns(self, tmp_path):
        p = tmp_path / "lm.csv"
        p.write_text("1.0,2.0,3.0\n")
        with pytest.raises(ValueError, match="212"):
            read_landmark_csv(p)

    def test_label_csv(self, tmp_path):
        p = tmp_path / "lab.csv"
        p.write_text("72.0,15.0,0,1\n80.0,12.0,1,0\n")
        labels = read_label_csv(p)
        assert labels.shape == (2, 4)
        np.testing.assert_allclose(labels[1], [80.0, 12.0, 1, 0])

    def test_label_csv_wrong_columns(self, tmp_path):
        p = tmp_path / "lab.csv"
        p.write_text("72.0,15.0\n")
        with pytest.raises(ValueError, match="4 columns"):
            read_label_csv(p)


class TestBmp:
    def test_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (65, 67, 3), dtype=np.uint8)
        p = tmp_path / "f.bmp"
        write_bmp(img, p)
        np.testing.assert_array_equal(read_bmp(p), img)

    def test_rejects_non_bmp(self, tmp_path):
        p = tmp_path / "f.bmp"
        p.write_bytes(b"not a bitmap")
        with pytest.raises(FormatError):
            read_bmp(p)


class TestFrameDir:
    @pytest.mark.parametrize("fmt", ["raw", "bmp"])
    def test_round_trip(self, tmp_path, rng, fmt):
        frames = rng.integers(0, 256, (5, 64, 70, 3), dtype=np.uint8)
        stream = FrameStream(frames=frames, fps=25.0)
        manifest = write_frame_dir(stream, tmp_path / fmt, fmt=fmt)
        loaded = read_frame_dir(manifest)
        np.testing.assert_array_equal(loaded.frames, frames)
        assert loaded.fps == 25.0

    def test_stream_validation(self, rng):
        with pytest.raises(ValueError, match="64x64"):
            FrameStream(frames=np.zeros((2, 32, 32, 3), dtype=np.uint8))
        with pytest.raises(ValueError, match="fps"):
            FrameStream(frames=np.zeros((2, 64, 64, 3), dtype=np.uint8), fps=10.0)
