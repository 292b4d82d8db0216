"""On-disk formats: .vdms sample files, landmark CSV, frame manifests, BMP.

The .vdms layout (all little-endian):

    magic  "VDMS" (4 bytes)
    version u32 = 1
    array count u32
    per array: name length u16, UTF-8 name, ndim u8, dims u32 each,
               dtype code u8 (0 = float32), raw row-major payload
    label block: four float64 (h, r, d, c)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VDMS"
VERSION = 1
DTYPE_F32 = 0

ARRAY_NAMES = ("left_eye", "right_eye", "mouth", "landmarks", "stmap")


class FormatError(ValueError):
    """Malformed sample or checkpoint file; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Labels:
    h: float  # heart rate, beats/min
    r: float  # respiration rate, breaths/min
    d: int    # drowsiness class, 0/1
    c: int    # cognitive load class, 0/1


@dataclass
class SampleBundle:
    """One fixed-length training sample: five input arrays plus labels."""

    left_eye: np.ndarray   # (T, 25, 25, 3) float32 in [0, 1]
    right_eye: np.ndarray  # (T, 25, 25, 3)
    mouth: np.ndarray      # (T, 35, 15, 3)
    landmarks: np.ndarray  # (T, 106, 2) raw pixel coordinates
    stmap: np.ndarray      # (T, 25, 3) in [0, 1]
    labels: Labels = field(default_factory=lambda: Labels(60.0, 15.0, 0, 0))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in ARRAY_NAMES}

    def validate(self):
        t = self.left_eye.shape[0]
        expected = {
            "left_eye": (t, 25, 25, 3),
            "right_eye": (t, 25, 25, 3),
            "mouth": (t, 35, 15, 3),
            "landmarks": (t, 106, 2),
            "stmap": (t, 25, 3),
        }
        for name, shape in expected.items():
            a = getattr(self, name)
            if a.shape != shape:
                raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
            if not np.isfinite(a).all():
                raise ValueError(f"{name} contains non-finite values")
        if self.stmap.min() < 0.0 or self.stmap.max() > 1.0:
            raise ValueError("stmap values must lie in [0, 1]")
        if self.labels.d not in (0, 1) or self.labels.c not in (0, 1):
            raise ValueError("class labels must be binary")
        if not 30.0 <= self.labels.h <= 220.0:
            raise ValueError(f"heart rate {self.labels.h} outside [30, 220]")
        if not 4.0 <= self.labels.r <= 40.0:
            raise ValueError(f"respiration rate {self.labels.r} outside [4, 40]")


def write_sample(bundle: SampleBundle, path) -> None:
    """Serialize a bundle; the round trip through read_sample is bit-exact."""
    arrays = bundle.arrays()
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=np.float32)
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(struct.pack("<B", DTYPE_F32))
        parts.append(a.tobytes())
    lb = bundle.labels
    parts.append(struct.pack("<4d", lb.h, lb.r, float(lb.d), float(lb.c)))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated file: wanted {n} bytes, {len(self.buf) - self.pos} left",
                self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def read_sample(path) -> SampleBundle:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("I")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = r.unpack("I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("B")
        dims = r.unpack(f"{ndim}I")
        (code,) = r.unpack("B")
        if code != DTYPE_F32:
            raise FormatError(f"unknown dtype code {code}", r.pos - 1)
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(4 * n)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    h, rr_, d, c = r.unpack("4d")
    missing = [n for n in ARRAY_NAMES if n not in arrays]
    if missing:
        raise FormatError(f"missing arrays {missing}", r.pos)
    return SampleBundle(labels=Labels(h, rr_, int(d), int(c)), **{
        name: arrays[name] for name in ARRAY_NAMES})


# ---------------------------------------------------------------------------
# landmark CSV: one row per frame, 212 columns (x1,y1,...,x106,y106)
# ---------------------------------------------------------------------------

def read_landmark_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.shape[1] != 212:
        raise ValueError(f"landmark CSV must have 212 columns, got {data.shape[1]}")
    return data.reshape(data.shape[0], 106, 2)


def write_landmark_csv(points: np.ndarray, path) -> None:
    np.savetxt(path, points.reshape(points.shape[0], -1), delimiter=",", fmt="%.3f")


def read_label_csv(path) -> np.ndarray:
    """Per-frame labels: columns h, r, d, c (window labels are taken at the
    window midpoint frame)."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.shape[1] != 4:
        raise ValueError(f"label CSV must have 4 columns (h,r,d,c), got {data.shape[1]}")
    return data


# ---------------------------------------------------------------------------
# frame streams: a JSON manifest plus numbered BMP or raw planar files
# ---------------------------------------------------------------------------

def read_bmp(path) -> np.ndarray:
    """Minimal 24-bit uncompressed BMP reader -> (H, W, 3) uint8 RGB."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"BM":
        raise FormatError("not a BMP file", 0)
    off = struct.unpack_from("<I", buf, 10)[0]
    w, h = struct.unpack_from("<ii", buf, 18)
    bpp = struct.unpack_from("<H", buf, 28)[0]
    comp = struct.unpack_from("<I", buf, 30)[0]
    if bpp != 24 or comp != 0:
        raise FormatError(f"only 24-bit uncompressed BMP supported (bpp={bpp})", 28)
    stride = (w * 3 + 3) & ~3
    flipped = h > 0
    h = abs(h)
    rows = np.frombuffer(buf, dtype=np.uint8, count=stride * h, offset=off)
    img = rows.reshape(h, stride)[:, :w * 3].reshape(h, w, 3)
    if flipped:
        img = img[::-1]
    return img[..., ::-1].copy()  # BGR -> RGB


def write_bmp(img: np.ndarray, path) -> None:
    h, w, _ = img.shape
    stride = (w * 3 + 3) & ~3
    bgr = img[..., ::-1].astype(np.uint8)
    rows = np.zeros((h, stride), dtype=np.uint8)
    rows[:, :w * 3] = bgr.reshape(h, w * 3)
    pixels = rows[::-1].tobytes()
    header = struct.pack("<2sIHHI", b"BM", 54 + len(pixels), 0, 0, 54)
    info = struct.pack("<IiiHHIIiiII", 40, w, h, 1, 24, 0, len(pixels), 2835, 2835, 0, 0)
    Path(path).write_bytes(header + info + pixels)


@dataclass
class FrameStream:
    """A T_total x H x W x 3 uint8 RGB stream at a fixed frame rate."""

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be (T,H,W,3), got {self.frames.shape}")
        if self.frames.shape[1] < 64 or self.frames.shape[2] < 64:
            raise ValueError("frame size must be at least 64x64")
        if self.fps <= 20.0:
            raise ValueError("fps must exceed twice the 10 Hz filter passband edge")


def write_frame_dir(stream: FrameStream, out_dir, fmt: str = "raw") -> Path:
    """Write frames plus a manifest.json; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t, h, w, _ = stream.frames.shape
    files = []
    for i in range(t):
        if fmt == "bmp":
            name = f"frame_{i:06d}.bmp"
            write_bmp(stream.frames[i], out / name)
        elif fmt == "raw":
            name = f"frame_{i:06d}.raw"
            # planar RGB: three H*W uint8 planes
            (out / name).write_bytes(
                np.ascontiguousarray(stream.frames[i].transpose(2, 0, 1)).tobytes())
        else:
            raise ValueError(f"unknown frame format {fmt!r}")
        files.append(name)
    manifest = {"height": h, "width": w, "fps": stream.fps,
                "format": fmt, "files": files}
    mpath = out / "frames.json"
    mpath.write_text(json.dumps(manifest, indent=1))
    return mpath


def read_frame_dir(manifest_path) -> FrameStream:
    mpath = Path(manifest_path)
    spec = json.loads(mpath.read_text())
    h, w, fmt = spec["height"], spec["width"], spec["format"]
    frames = np.empty((len(spec["files"]), h, w, 3), dtype=np.uint8)
    for i, name in enumerate(spec["files"]):
        fp = mpath.parent / name
        if fmt == "bmp":
            img = read_bmp(fp)
            if img.shape != (h, w, 3):
                raise ValueError(f"{name}: shape {img.shape} != manifest ({h},{w},3)")
            frames[i] = img
        elif fmt == "raw":
            raw = np.frombuffer(fp.read_bytes(), dtype=np.uint8)
            if raw.size != 3 * h * w:
                raise ValueError(f"{name}: {raw.size} bytes, expected {3 * h * w}")
            frames[i] = raw.reshape(3, h, w).transpose(1, 2, 0)
        else:
            raise ValueError(f"unknown frame format {fmt!r}")
    return FrameStream(frames=frames, fps=float(spec["fps"]))
