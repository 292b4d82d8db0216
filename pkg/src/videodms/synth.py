"""Synthetic frame/landmark streams with known ground truth.

The generator embeds a cardiac pulse in the face's green channel, a
respiration component in both pixel intensity and landmark motion, and a
blink pattern whose closure duration separates drowsy from awake samples.
That gives every downstream estimation task a recoverable signal with an
exactly known label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .preprocess import (RegionIndices, FilterSpec, WindowSpec, assemble_sample,
                         ConfigurationError)
from .sampleio import FrameStream, Labels, write_sample


@dataclass
class BlinkModel:
    rate_per_min: float = 12.0        # awake blink rate
    drowsy_rate_multiplier: float = 0.7
    awake_closure_s: float = 0.150
    drowsy_closure_s: float = 0.500


@dataclass
class SynthConfig:
    n_samples: int = 10
    seed: int = 0
    hr_range: tuple[float, float] = (45.0, 150.0)
    rr_range: tuple[float, float] = (8.0, 25.0)
    pulse_amplitude: float = 2.0      # channel units
    noise_sigma: float = 1.0
    blink: BlinkModel = field(default_factory=BlinkModel)
    # corr(drowsy, high-load); most negative value representable with the
    # default marginals is -0.3679, so the default sits just inside it
    phi: float = -0.35
    p_drowsy: float = 0.24
    p_high_load: float = 0.30
    frame_size: int = 128
    fps: float = 30.0
    frames_per_sample: int = 300

    def __post_init__(self):
        if isinstance(self.blink, dict):
            self.blink = BlinkModel(**self.blink)
        self.hr_range = tuple(self.hr_range)
        self.rr_range = tuple(self.rr_range)
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")
        if not abs(self.phi) < 1.0:
            raise ConfigurationError("|phi| must be < 1")


@dataclass
class GroundTruth:
    h: float
    r: float
    d: int
    c: int

    def labels(self) -> Labels:
        return Labels(self.h, self.r, self.d, self.c)


def _joint_table(p_d: float, p_c: float, phi: float) -> np.ndarray:
    """Joint P(d, c) for Bernoulli marginals with correlation phi.

    Returns a 2x2 table indexed [d, c].  Raises when (phi, marginals) is
    infeasible, reporting the feasible phi interval.
    """
    sd = np.sqrt(p_d * (1 - p_d))
    sc = np.sqrt(p_c * (1 - p_c))
    p11 = p_d * p_c + phi * sd * sc
    lo_p11 = max(0.0, p_d + p_c - 1.0)
    hi_p11 = min(p_d, p_c)
    if not lo_p11 <= p11 <= hi_p11:
        phi_lo = (lo_p11 - p_d * p_c) / (sd * sc)
        phi_hi = (hi_p11 - p_d * p_c) / (sd * sc)
        raise ConfigurationError(
            f"phi={phi} infeasible for marginals ({p_d}, {p_c}); "
            f"feasible interval is [{phi_lo:.4f}, {phi_hi:.4f}]")
    return np.array([[1 - p_d - p_c + p11, p_c - p11],
                     [p_d - p11, p11]])


def sample_labels(rng: np.random.Generator, config: SynthConfig) -> GroundTruth:
    """Draw one ground-truth tuple from the configured joint distribution."""
    table = _joint_table(config.p_drowsy, config.p_high_load, config.phi)
    flat = rng.choice(4, p=table.ravel())
    d, c = divmod(int(flat), 2)
    h = rng.uniform(*config.hr_range)
    r = rng.uniform(*config.rr_range)
    return GroundTruth(h=h, r=r, d=d, c=c)


def _blink_mask(t: np.ndarray, gt: GroundTruth, config: SynthConfig,
                rng: np.random.Generator) -> np.ndarray:
    """1.0 while eyes are open, dipping to 0.2 during blink closures."""
    blink = config.blink
    rate = blink.rate_per_min * (blink.drowsy_rate_multiplier if gt.d else 1.0)
    closure = blink.drowsy_closure_s if gt.d else blink.awake_closure_s
    mask = np.ones_like(t)
    if rate <= 0.0:
        return mask
    period = 60.0 / rate
    start = rng.uniform(0.0, period)
    while start < t[-1]:
        mask[(t >= start) & (t < start + closure)] = 0.2
        start += period * rng.uniform(0.8, 1.2)
    return mask


def render_stream(gt: GroundTruth, config: SynthConfig,
                  rng: np.random.Generator) -> tuple[FrameStream, np.ndarray]:
    """Render (FrameStream, landmarks) for one sample.

    The face is an ellipse with a baseline skin tone; the G channel of the
    face region carries the pulse at h/60 Hz plus a weaker respiration
    component at r/60 Hz.  Landmark y-coordinates oscillate at the
    respiration frequency with 1 px amplitude.
    """
    size = config.frame_size
    t_total = config.frames_per_sample
    t = np.arange(t_total) / config.fps

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = size / 2.0, size / 2.0
    rx, ry = size * 0.32, size * 0.42
    face = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0

    base = np.empty((size, size, 3), dtype=np.float64)
    base[..., 0] = 60.0
    base[..., 1] = 70.0
    base[..., 2] = 90.0
    base[face] = (190.0, 140.0, 120.0)

    phase_h = rng.uniform(0.0, 2 * np.pi)
    phase_r = rng.uniform(0.0, 2 * np.pi)
    pulse = config.pulse_amplitude * np.sin(2 * np.pi * (gt.h / 60.0) * t + phase_h)
    breath = 0.5 * config.pulse_amplitude * np.sin(2 * np.pi * (gt.r / 60.0) * t + phase_r)

    frames = np.broadcast_to(base, (t_total, size, size, 3)).copy()
    frames[:, face, 1] += (pulse + breath)[:, None]

    # landmark layout: 0-32 face contour, 33-42 left eye, 43-52 right eye,
    # 53-72 mouth, 73-105 nose and brow filler
    marks = np.empty((106, 2), dtype=np.float64)
    ang = np.linspace(0, 2 * np.pi, 33, endpoint=False)
    marks[0:33, 0] = cx + rx * np.cos(ang)
    marks[0:33, 1] = cy + ry * np.sin(ang)

    def ellipse(idx, ecx, ecy, erx, ery):
        a = np.linspace(0, 2 * np.pi, len(idx), endpoint=False)
        marks[idx, 0] = ecx + erx * np.cos(a)
        marks[idx, 1] = ecy + ery * np.sin(a)
        return ecx, ecy, erx, ery

    le = ellipse(range(33, 43), cx - 0.45 * rx, cy - 0.30 * ry, 0.22 * rx, 0.14 * ry)
    re = ellipse(range(43, 53), cx + 0.45 * rx, cy - 0.30 * ry, 0.22 * rx, 0.14 * ry)
    ellipse(range(53, 73), cx, cy + 0.45 * ry, 0.34 * rx, 0.18 * ry)
    ellipse(range(73, 106), cx, cy - 0.05 * ry, 0.5 * rx, 0.3 * ry)

    # darken the eye regions; modulate with the blink mask
    blink = _blink_mask(t, gt, config, rng)
    for ecx, ecy, erx, ery in (le, re):
        region = ((xx - ecx) / erx) ** 2 + ((yy - ecy) / ery) ** 2 <= 1.0
        frames[:, region, :] = (base[region] * (0.35 + 0.65 * blink[:, None, None]))

    if config.noise_sigma > 0:
        frames += rng.normal(0.0, config.noise_sigma, frames.shape)

    landmarks = np.broadcast_to(marks, (t_total, 106, 2)).copy()
    landmarks[..., 1] += np.sin(2 * np.pi * (gt.r / 60.0) * t + phase_r)[:, None]
    landmarks[..., 0] = np.clip(landmarks[..., 0], 0, size - 1)
    landmarks[..., 1] = np.clip(landmarks[..., 1], 0, size - 1)

    frames = np.clip(frames, 0.0, 255.0).astype(np.uint8)
    return FrameStream(frames=frames, fps=config.fps), landmarks


def generate_sample(config: SynthConfig, sample_seed: int) -> tuple:
    """(GroundTruth, SampleBundle) for one per-sample seed."""
    rng = np.random.default_rng(sample_seed)
    gt = sample_labels(rng, config)
    stream, landmarks = render_stream(gt, config, rng)
    window = (0, config.frames_per_sample)
    bundle = assemble_sample(stream, landmarks, window, gt.labels(),
                             RegionIndices(), FilterSpec())
    return gt, bundle


def gen_dataset(config: SynthConfig, out_dir) -> dict:
    """Write n_samples .vdms files plus a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(config.n_samples):
        seed_i = config.seed ^ i
        gt, bundle = generate_sample(config, seed_i)
        name = f"sample_{i:05d}.vdms"
        write_sample(bundle, out / name)
        entries.append({"file": name, "h": gt.h, "r": gt.r, "d": gt.d,
                        "c": gt.c, "seed_i": seed_i})
    manifest = {"version": 1, "seed": config.seed, "samples": entries,
                "config": {k: v for k, v in asdict(config).items()}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest
