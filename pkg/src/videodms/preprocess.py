"""Facial-feature preprocessing: windows, region crops, STMap construction.

Converts a frame + landmark stream into the five model inputs: left eye,
right eye and mouth patches, the raw landmark matrix, and a band-pass
filtered spatial-temporal color map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import butter, filtfilt

from .sampleio import FrameStream, Labels, SampleBundle


class ConfigurationError(ValueError):
    pass


class WindowSkip(Exception):
    """Raised when one window cannot be preprocessed (degenerate geometry)."""


# Default landmark index subsets for the 106-point convention used by the
# synthetic generator.  Real detectors may order points differently; the
# subsets are configurable for that reason.
LEFT_EYE_IDX = tuple(range(33, 43))
RIGHT_EYE_IDX = tuple(range(43, 53))
MOUTH_IDX = tuple(range(53, 73))

EYE_SIZE = (25, 25)    # (H, W)
MOUTH_SIZE = (35, 15)
STMAP_GRID = 5         # 5x5 grid -> 25 ROIs
BBOX_MARGIN = 0.10     # expansion per side


@dataclass
class WindowSpec:
    f: int = 300  # window length in frames
    s: int = 30   # step in frames

    def __post_init__(self):
        if not 1 <= self.s <= self.f:
            raise ConfigurationError(f"window step must satisfy 1 <= S <= F, got {self}")


@dataclass
class RegionIndices:
    left_eye: Sequence[int] = field(default_factory=lambda: list(LEFT_EYE_IDX))
    right_eye: Sequence[int] = field(default_factory=lambda: list(RIGHT_EYE_IDX))
    mouth: Sequence[int] = field(default_factory=lambda: list(MOUTH_IDX))


@dataclass
class FilterSpec:
    low_hz: float = 0.4
    high_hz: float = 10.0
    order: int = 4


def segment_windows(t_total: int, spec: WindowSpec) -> list[tuple[int, int]]:
    """All [start, start+F) intervals with stride S that fit in the stream."""
    out = []
    start = 0
    while start + spec.f <= t_total:
        out.append((start, start + spec.f))
        start += spec.s
    return out


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """RGB [0,255] -> YUV, no offset.  Works on any (..., 3) array."""
    m = np.array([[0.299, 0.587, 0.114],
                  [-0.147, -0.289, 0.436],
                  [0.615, -0.515, -0.100]])
    return np.asarray(rgb, dtype=np.float64) @ m.T


def butterworth_bandpass(signal: np.ndarray, low_hz: float = 0.4,
                         high_hz: float = 10.0, fs: float = 30.0,
                         order: int = 4, axis: int = -1) -> np.ndarray:
    """Zero-phase (forward-backward) Butterworth band-pass along ``axis``."""
    if high_hz >= fs / 2.0:
        raise ConfigurationError(
            f"band edge {high_hz} Hz must lie below the Nyquist rate {fs / 2.0} Hz")
    n = signal.shape[axis]
    if n <= 6 * order:
        raise ConfigurationError(
            f"signal length {n} too short for order-{order} edge transients")
    b, a = butter(order, [low_hz, high_hz], btype="bandpass", fs=fs)
    return filtfilt(b, a, signal, axis=axis)


def _expanded_bbox(points: np.ndarray, frame_h: int, frame_w: int) -> np.ndarray:
    """Axis-aligned bbox over (..., P, 2) points, expanded 10% per side and
    clamped to the frame.  Returns (..., 4) as (x0, y0, x1, y1) floats."""
    x0 = points[..., 0].min(axis=-1)
    x1 = points[..., 0].max(axis=-1)
    y0 = points[..., 1].min(axis=-1)
    y1 = points[..., 1].max(axis=-1)
    bw, bh = x1 - x0, y1 - y0
    x0 = np.clip(x0 - BBOX_MARGIN * bw, 0, frame_w - 1)
    x1 = np.clip(x1 + BBOX_MARGIN * bw, 0, frame_w - 1)
    y0 = np.clip(y0 - BBOX_MARGIN * bh, 0, frame_h - 1)
    y1 = np.clip(y1 + BBOX_MARGIN * bh, 0, frame_h - 1)
    return np.stack([x0, y0, x1, y1], axis=-1)


def _bilinear_crop(frames: np.ndarray, boxes: np.ndarray, out_h: int,
                   out_w: int) -> np.ndarray:
    """Resize a per-frame box of (T,H,W,3) frames to (T,out_h,out_w,3).

    Each box is continuous pixel coords (x0,y0,x1,y1); sampling uses the
    half-pixel-center convention, so constant images stay constant.
    """
    t, h, w, _ = frames.shape
    x0, y0, x1, y1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    bw = (x1 - x0 + 1.0)[:, None]
    bh = (y1 - y0 + 1.0)[:, None]
    sx = x0[:, None] + (np.arange(out_w) + 0.5) * bw / out_w - 0.5   # (T, out_w)
    sy = y0[:, None] + (np.arange(out_h) + 0.5) * bh / out_h - 0.5   # (T, out_h)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x_lo = np.floor(sx).astype(np.intp)
    y_lo = np.floor(sy).astype(np.intp)
    x_hi = np.minimum(x_lo + 1, w - 1)
    y_hi = np.minimum(y_lo + 1, h - 1)
    fx = (sx - x_lo)[:, None, :, None]          # (T, 1, out_w, 1)
    fy = (sy - y_lo)[:, :, None, None]          # (T, out_h, 1, 1)
    ti = np.arange(t)[:, None, None]
    f = frames.astype(np.float64)

    def gather(yi, xi):
        return f[ti, yi[:, :, None], xi[:, None, :]]

    top = gather(y_lo, x_lo) * (1 - fx) + gather(y_lo, x_hi) * fx
    bot = gather(y_hi, x_lo) * (1 - fx) + gather(y_hi, x_hi) * fx
    return top * (1 - fy) + bot * fy


def crop_region(frames: np.ndarray, landmarks: np.ndarray,
                indices: Sequence[int], out_hw: tuple[int, int]) -> np.ndarray:
    """Crop one facial region from every frame and rescale to [0, 1].

    ``frames`` is (T,H,W,3) uint8, ``landmarks`` (T,106,2).  Raises
    WindowSkip when the landmark subset is degenerate in any frame.
    """
    t, h, w, _ = frames.shape
    pts = landmarks[:, list(indices), :]
    boxes = _expanded_bbox(pts, h, w)
    if np.any(boxes[:, 2] <= boxes[:, 0]) or np.any(boxes[:, 3] <= boxes[:, 1]):
        raise WindowSkip("degenerate region bounding box")
    patch = _bilinear_crop(frames, boxes, out_hw[0], out_hw[1])
    return (patch / 255.0).astype(np.float32)


def _grid_cell_means(frames: np.ndarray, boxes: np.ndarray, grid: int) -> np.ndarray:
    """Mean RGB of each cell of a per-frame grid over the face box.

    Returns (T, grid*grid, 3) float64.  Uses per-frame integral images so
    the whole window is computed without a per-cell loop.
    """
    t, h, w, _ = frames.shape
    ii = np.zeros((t, h + 1, w + 1, 3), dtype=np.float64)
    ii[:, 1:, 1:] = frames.astype(np.float64).cumsum(axis=1).cumsum(axis=2)

    x0, y0, x1, y1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    # integer cell edges; a cell must contain at least one pixel
    xe = np.rint(x0[:, None] + (x1 - x0 + 1)[:, None] * np.arange(grid + 1) / grid).astype(np.intp)
    ye = np.rint(y0[:, None] + (y1 - y0 + 1)[:, None] * np.arange(grid + 1) / grid).astype(np.intp)
    if np.any(np.diff(xe, axis=1) < 1) or np.any(np.diff(ye, axis=1) < 1):
        raise WindowSkip("face bounding box too small for the ROI grid")

    ti = np.arange(t)[:, None, None]
    ya, yb = ye[:, :-1][:, :, None], ye[:, 1:][:, :, None]   # (T, grid, 1)
    xa, xb = xe[:, :-1][:, None, :], xe[:, 1:][:, None, :]   # (T, 1, grid)
    sums = (ii[ti, yb, xb] - ii[ti, ya, xb] - ii[ti, yb, xa] + ii[ti, ya, xa])
    areas = ((yb - ya) * (xb - xa))[..., None]
    return (sums / areas).reshape(t, grid * grid, 3)


def build_stmap(frames: np.ndarray, landmarks: np.ndarray,
                filt: FilterSpec | None = None, fps: float = 30.0) -> np.ndarray:
    """Spatial-temporal map for one window: (T, 25, 3) float32 in [0, 1].

    Per ROI and channel: grid-cell mean RGB over the whole-face box,
    RGB->YUV, first-order temporal difference, zero-phase band-pass,
    then min-max normalization per (ROI, channel) row.  Rows with zero
    range come out exactly zero.
    """
    filt = filt or FilterSpec()
    t, h, w, _ = frames.shape
    boxes = _expanded_bbox(landmarks, h, w)
    if np.any(boxes[:, 2] <= boxes[:, 0]) or np.any(boxes[:, 3] <= boxes[:, 1]):
        raise WindowSkip("degenerate face bounding box")
    cell_rgb = _grid_cell_means(frames, boxes, STMAP_GRID)   # (T, 25, 3)
    yuv = rgb_to_yuv(cell_rgb)
    diff = np.zeros_like(yuv)
    diff[1:] = yuv[1:] - yuv[:-1]
    filtered = butterworth_bandpass(diff, filt.low_hz, filt.high_hz, fps,
                                    filt.order, axis=0)
    lo = filtered.min(axis=0)
    hi = filtered.max(axis=0)
    span = hi - lo
    degenerate = span == 0.0
    span = np.where(degenerate, 1.0, span)
    normed = (filtered - lo) / span
    normed[:, degenerate] = 0.0
    return normed.astype(np.float32)


def assemble_sample(stream: FrameStream, landmarks: np.ndarray,
                    window: tuple[int, int], labels: Labels,
                    regions: RegionIndices | None = None,
                    filt: FilterSpec | None = None) -> SampleBundle:
    """Build one SampleBundle from a [start, stop) window of the streams."""
    regions = regions or RegionIndices()
    start, stop = window
    if start < 0 or stop > stream.frames.shape[0] or stop > landmarks.shape[0]:
        raise ConfigurationError(f"window {window} out of stream bounds")
    frames = stream.frames[start:stop]
    marks = landmarks[start:stop]
    bundle = SampleBundle(
        left_eye=crop_region(frames, marks, regions.left_eye, EYE_SIZE),
        right_eye=crop_region(frames, marks, regions.right_eye, EYE_SIZE),
        mouth=crop_region(frames, marks, regions.mouth, MOUTH_SIZE),
        landmarks=marks.astype(np.float32),
        stmap=build_stmap(frames, marks, filt, stream.fps),
        labels=labels,
    )
    bundle.validate()
    return bundle
