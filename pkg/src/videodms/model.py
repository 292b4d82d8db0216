"""The multi-task driver-state network.

Three embedding networks map heterogeneous facial inputs to per-frame
feature vectors, which are stacked and passed through spatio-temporal
mixture-of-experts blocks.  A router softly weights the expert outputs
and a residual path; per-task sigmoid gates then select subspaces that
feed four linear estimation heads.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .sampleio import FormatError, SampleBundle
from .tensor import (Tensor, ContractError, DimensionError, batch_norm, concat,
                     conv2d, matmul, max_pool2, relu, reshape, sigmoid,
                     softmax_lastdim, tmean, transpose_last_two)

FEATURES = ("left_eye", "right_eye", "mouth", "landmarks", "stmap")
TASKS = ("drowsiness", "cognitive", "hr", "rr")
HEAD_DIMS = {"drowsiness": 2, "cognitive": 2, "hr": 1, "rr": 1}

CKPT_MAGIC = b"VDCK"
CKPT_VERSION = 1


def _ceil_half(x: int) -> int:
    return (x + 1) // 2


@dataclass
class ModelConfig:
    t: int = 300                     # frames per sample
    d: int = 128                     # per-feature embedding width
    features: tuple[str, ...] = FEATURES
    k: int = 4                       # experts per block (even)
    l_blocks: int = 1
    expert_hidden: int = 256
    temporal_expert_hidden: int = 128
    router_hidden: int = 128
    gate_hidden: int = 128
    region_channels: tuple[int, int] = (16, 32)
    stmap_channels: tuple[int, int] = (64, 128)
    landmark_channels: int = 32
    eye_hw: tuple[int, int] = (25, 25)
    mouth_hw: tuple[int, int] = (35, 15)
    n_landmarks: int = 106
    stmap_rois: int = 25
    dtype: str = "float32"

    def __post_init__(self):
        self.features = tuple(self.features)
        self.region_channels = tuple(self.region_channels)
        self.stmap_channels = tuple(self.stmap_channels)
        self.eye_hw = tuple(self.eye_hw)
        self.mouth_hw = tuple(self.mouth_hw)
        unknown = set(self.features) - set(FEATURES)
        if unknown:
            raise ContractError(f"unknown features {sorted(unknown)}")
        if self.k < 2 or self.k % 2:
            raise ContractError(f"expert count must be even and >= 2, got {self.k}")
        if self.stmap_channels[-1] != self.d:
            raise ContractError(
                "last stmap channel width must equal the embedding width d")
        if self.dtype not in ("float32", "float64"):
            raise ContractError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def v(self) -> int:
        return len(self.features) * self.d

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def region_flat_dim(self, hw: tuple[int, int]) -> int:
        h = _ceil_half(_ceil_half(hw[0]))
        w = _ceil_half(_ceil_half(hw[1]))
        return h * w * self.region_channels[1]


class ParamStore:
    """Named parameters plus non-learnable buffers (batch-norm statistics)."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def add_param(self, name: str, value: np.ndarray):
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name}")
        self.params[name] = Tensor(value.astype(self.config.np_dtype),
                                   requires_grad=True, name=name)

    def add_buffer(self, name: str, value: np.ndarray):
        self.buffers[name] = value.astype(np.float64)

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Fan-in-scaled uniform weights, zero biases, unit batch-norm."""
    rng = np.random.default_rng(seed)
    ps = ParamStore(config)
    c1, c2 = config.region_channels

    def linear(name, n_in, n_out):
        ps.add_param(f"{name}.w", _fan_in_uniform(rng, (n_in, n_out), n_in))
        ps.add_param(f"{name}.b", np.zeros(n_out))

    def conv(name, kh, kw, cin, cout):
        fan = kh * kw * cin
        ps.add_param(f"{name}.w", _fan_in_uniform(rng, (kh, kw, cin, cout), fan))
        ps.add_param(f"{name}.b", np.zeros(cout))

    def bnorm(name, c):
        ps.add_param(f"{name}.gamma", np.ones(c))
        ps.add_param(f"{name}.beta", np.zeros(c))
        ps.add_buffer(f"{name}.running_mean", np.zeros(c))
        ps.add_buffer(f"{name}.running_var", np.ones(c))

    feats = config.features
    if "left_eye" in feats or "right_eye" in feats:
        conv("embed_eye.conv1", 3, 3, 3, c1)
        conv("embed_eye.conv2", 3, 3, c1, c2)
        linear("embed_eye.fc", config.region_flat_dim(config.eye_hw), config.d)
    if "mouth" in feats:
        conv("embed_mouth.conv1", 3, 3, 3, c1)
        conv("embed_mouth.conv2", 3, 3, c1, c2)
        linear("embed_mouth.fc", config.region_flat_dim(config.mouth_hw), config.d)
    if "stmap" in feats:
        s1, s2 = config.stmap_channels
        conv("embed_stmap.conv1", 3, 1, 3, s1)
        bnorm("embed_stmap.bn1", s1)
        conv("embed_stmap.conv2", 3, 1, s1, s2)
    if "landmarks" in feats:
        lc = config.landmark_channels
        conv("embed_landmarks.conv1", 1, 2, 1, lc)
        bnorm("embed_landmarks.bn1", lc)
        linear("embed_landmarks.fc", config.n_landmarks * lc, config.d)

    v = config.v
    for b in range(config.l_blocks):
        for i in range(config.k // 2):
            linear(f"block{b}.spatial{i}.fc1", v, config.expert_hidden)
            linear(f"block{b}.spatial{i}.fc2", config.expert_hidden, v)
            linear(f"block{b}.temporal{i}.fc1", config.t, config.temporal_expert_hidden)
            linear(f"block{b}.temporal{i}.fc2", config.temporal_expert_hidden, config.t)
        linear(f"block{b}.router.fc1", v, config.router_hidden)
        linear(f"block{b}.router.fc2", config.router_hidden, config.k + 1)
    for task in TASKS:
        linear(f"gate_{task}.fc1", v, config.gate_hidden)
        linear(f"gate_{task}.fc2", config.gate_hidden, v)
        linear(f"head_{task}", v, HEAD_DIMS[task])
    return ps


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _linear(ps: ParamStore, name: str, x: Tensor) -> Tensor:
    return matmul(x, ps[f"{name}.w"]) + ps[f"{name}.b"]


def _mlp2(ps: ParamStore, name: str, x: Tensor) -> Tensor:
    return _linear(ps, f"{name}.fc2", relu(_linear(ps, f"{name}.fc1", x)))


def embed_region(ps: ParamStore, prefix: str, x: Tensor) -> Tensor:
    """(B, T, H, W, 3) patches -> (B, T, D), applied per frame."""
    cfg = ps.config
    b, t = x.shape[0], x.shape[1]
    h, w = x.shape[2], x.shape[3]
    z = reshape(x, (b * t, h, w, 3))
    z = max_pool2(relu(conv2d(z, ps[f"{prefix}.conv1.w"], ps[f"{prefix}.conv1.b"])))
    z = max_pool2(relu(conv2d(z, ps[f"{prefix}.conv2.w"], ps[f"{prefix}.conv2.b"])))
    z = reshape(z, (b * t, -1))
    z = _linear(ps, f"{prefix}.fc", z)
    return reshape(z, (b, t, cfg.d))


def embed_stmap(ps: ParamStore, x: Tensor, mode: str) -> Tensor:
    """(B, T, N_s, 3) -> (B, T, D); 1-d convs along the ROI axis."""
    cfg = ps.config
    b, t, ns = x.shape[0], x.shape[1], x.shape[2]
    if ns != cfg.stmap_rois:
        raise DimensionError(f"stmap has {ns} ROIs, config expects {cfg.stmap_rois}")
    z = reshape(x, (b * t, ns, 1, 3))
    z = relu(conv2d(z, ps["embed_stmap.conv1.w"], ps["embed_stmap.conv1.b"]))
    z = batch_norm(z, ps["embed_stmap.bn1.gamma"], ps["embed_stmap.bn1.beta"],
                   ps.buffers["embed_stmap.bn1.running_mean"],
                   ps.buffers["embed_stmap.bn1.running_var"], mode=mode)
    z = relu(conv2d(z, ps["embed_stmap.conv2.w"], ps["embed_stmap.conv2.b"]))
    z = tmean(z, axis=(1, 2))                       # adaptive average over ROIs
    return reshape(z, (b, t, cfg.d))


def embed_landmarks(ps: ParamStore, x: Tensor, mode: str) -> Tensor:
    """(B, T, N_f, 2) -> (B, T, D); a 1x2 conv collapses the coordinate pair."""
    cfg = ps.config
    b, t, nf = x.shape[0], x.shape[1], x.shape[2]
    if nf != cfg.n_landmarks:
        raise DimensionError(f"{nf} landmarks, config expects {cfg.n_landmarks}")
    # the raw track is dominated by the static facial layout; subtract the
    # per-sample temporal mean so the encoder sees motion rather than identity
    x = x - tmean(x, axis=1, keepdims=True)
    z = reshape(x, (b * t, nf, 2, 1))
    z = relu(conv2d(z, ps["embed_landmarks.conv1.w"], ps["embed_landmarks.conv1.b"],
                    padding="valid"))               # (B*T, N_f, 1, lc)
    z = batch_norm(z, ps["embed_landmarks.bn1.gamma"], ps["embed_landmarks.bn1.beta"],
                   ps.buffers["embed_landmarks.bn1.running_mean"],
                   ps.buffers["embed_landmarks.bn1.running_var"], mode=mode)
    z = reshape(z, (b * t, -1))
    z = _linear(ps, "embed_landmarks.fc", z)
    return reshape(z, (b, t, cfg.d))


def stack_features(embeddings: dict[str, Tensor], features) -> Tensor:
    """Concatenate per-feature embeddings along the last axis in fixed order."""
    missing = [f for f in features if f not in embeddings]
    if missing:
        raise ContractError(f"missing embeddings for {missing}")
    return concat([embeddings[f] for f in features], axis=-1)


def moe_block(ps: ParamStore, prefix: str, m: Tensor,
              router_override: np.ndarray | None = None) -> Tensor:
    """One spatio-temporal mixture-of-experts block with a residual slot.

    Candidates are [K/2 spatial expert outputs, K/2 temporal expert
    outputs, the block input]; a softmax router weights them.  Forcing the
    router one-hot on the residual slot makes the block the identity.
    """
    cfg = ps.config
    b, t, v = m.shape
    half = cfg.k // 2

    candidates: list[Tensor] = []
    m_flat = reshape(m, (b * t, v))
    for i in range(half):
        candidates.append(reshape(_mlp2(ps, f"{prefix}.spatial{i}", m_flat), (b, t, v)))
    m_t = reshape(transpose_last_two(m), (b * v, t))
    for i in range(half):
        out_t = reshape(_mlp2(ps, f"{prefix}.temporal{i}", m_t), (b, v, t))
        candidates.append(transpose_last_two(out_t))
    candidates.append(m)

    if router_override is not None:
        weights = Tensor(np.broadcast_to(
            np.asarray(router_override, dtype=m.dtype), (b, cfg.k + 1)).copy())
    else:
        pooled = tmean(m, axis=1)                   # (B, V)
        weights = softmax_lastdim(_mlp2(ps, f"{prefix}.router", pooled))

    out = None
    for i, cand in enumerate(candidates):
        w_i = reshape(weights[:, i], (b, 1, 1))
        term = cand * w_i
        out = term if out is None else out + term
    return out


def task_gate(ps: ParamStore, task: str, m: Tensor) -> Tensor:
    """Element-wise sigmoid gate over the feature axis; (B, T, V) -> (B, V)."""
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    pooled = tmean(m, axis=1)
    return sigmoid(_mlp2(ps, f"gate_{task}", pooled))


def forward(ps: ParamStore, inputs: dict[str, np.ndarray], mode: str = "eval",
            router_override: np.ndarray | None = None) -> dict[str, Tensor]:
    """Run the network on a batch.

    ``inputs`` maps feature names to (B, T, ...) arrays for every feature in
    the config.  Returns logits for the two classification tasks (B, 2) and
    normalized-space regression outputs (B,) for heart and respiration rate.
    """
    cfg = ps.config
    if mode not in ("train", "eval"):
        raise ContractError(f"unknown mode {mode!r}")
    embeddings: dict[str, Tensor] = {}
    for f in cfg.features:
        if f not in inputs:
            raise ContractError(f"missing input {f!r}")
        x = Tensor(np.asarray(inputs[f], dtype=cfg.np_dtype))
        if x.ndim < 3 or x.shape[1] != cfg.t:
            raise DimensionError(
                f"input {f!r} has shape {x.shape}, expected (B, {cfg.t}, ...)")
        if f in ("left_eye", "right_eye"):
            if x.shape[2:] != (*cfg.eye_hw, 3):
                raise DimensionError(
                    f"{f} patch shape {x.shape[2:]} != {(*cfg.eye_hw, 3)}")
            embeddings[f] = embed_region(ps, "embed_eye", x)
        elif f == "mouth":
            if x.shape[2:] != (*cfg.mouth_hw, 3):
                raise DimensionError(
                    f"mouth patch shape {x.shape[2:]} != {(*cfg.mouth_hw, 3)}")
            embeddings[f] = embed_region(ps, "embed_mouth", x)
        elif f == "stmap":
            embeddings[f] = embed_stmap(ps, x, mode)
        elif f == "landmarks":
            embeddings[f] = embed_landmarks(ps, x, mode)

    m = stack_features(embeddings, cfg.features)
    m_prime = m
    for b in range(cfg.l_blocks):
        m_prime = moe_block(ps, f"block{b}", m_prime, router_override)

    pooled = tmean(m_prime, axis=1)                 # (B, V)
    outputs: dict[str, Tensor] = {}
    for task in TASKS:
        g = task_gate(ps, task, m)
        y = _linear(ps, f"head_{task}", g * pooled)
        outputs[task] = y if HEAD_DIMS[task] > 1 else reshape(y, (y.shape[0],))
    return outputs


def batch_from_bundles(bundles: list[SampleBundle], config: ModelConfig) -> dict[str, np.ndarray]:
    """Stack SampleBundles into the (B, T, ...) input dict the model expects."""
    out = {}
    for f in config.features:
        out[f] = np.stack([getattr(bd, f) for bd in bundles]).astype(config.np_dtype)
    return out


# ---------------------------------------------------------------------------
# cost accounting
# ---------------------------------------------------------------------------

def param_count(config: ModelConfig) -> int:
    """Closed-form learnable parameter count for a config."""
    c1, c2 = config.region_channels
    d, v = config.d, config.v
    total = 0
    feats = config.features
    if "left_eye" in feats or "right_eye" in feats:
        total += (9 * 3 * c1 + c1) + (9 * c1 * c2 + c2)
        total += config.region_flat_dim(config.eye_hw) * d + d
    if "mouth" in feats:
        total += (9 * 3 * c1 + c1) + (9 * c1 * c2 + c2)
        total += config.region_flat_dim(config.mouth_hw) * d + d
    if "stmap" in feats:
        s1, s2 = config.stmap_channels
        total += (3 * 3 * s1 + s1) + 2 * s1 + (3 * s1 * s2 + s2)
    if "landmarks" in feats:
        lc = config.landmark_channels
        total += (2 * lc + lc) + 2 * lc + (config.n_landmarks * lc * d + d)
    eh, th = config.expert_hidden, config.temporal_expert_hidden
    per_block = (config.k // 2) * ((v * eh + eh) + (eh * v + v)
                                   + (config.t * th + th) + (th * config.t + config.t))
    per_block += (v * config.router_hidden + config.router_hidden
                  + config.router_hidden * (config.k + 1) + config.k + 1)
    total += config.l_blocks * per_block
    gh = config.gate_hidden
    for task in TASKS:
        total += (v * gh + gh) + (gh * v + v)
        total += v * HEAD_DIMS[task] + HEAD_DIMS[task]
    return total


def flops_estimate(config: ModelConfig) -> int:
    """Multiply-accumulate based FLOP count (2 per MAC) for one forward pass."""
    t, d, v = config.t, config.d, config.v
    c1, c2 = config.region_channels
    total = 0

    def region_flops(hw):
        h, w = hw
        h2, w2 = _ceil_half(h), _ceil_half(w)
        f = 2 * (h * w * 9 * 3 * c1)          # conv1
        f += 2 * (h2 * w2 * 9 * c1 * c2)      # conv2
        f += 2 * (config.region_flat_dim(hw) * d)
        return f * t

    feats = config.features
    if "left_eye" in feats:
        total += region_flops(config.eye_hw)
    if "right_eye" in feats:
        total += region_flops(config.eye_hw)
    if "mouth" in feats:
        total += region_flops(config.mouth_hw)
    if "stmap" in feats:
        s1, s2 = config.stmap_channels
        ns = config.stmap_rois
        total += t * 2 * (ns * 3 * 3 * s1 + ns * 3 * s1 * s2)
    if "landmarks" in feats:
        lc = config.landmark_channels
        total += t * 2 * (config.n_landmarks * 2 * lc + config.n_landmarks * lc * d)

    eh, th = config.expert_hidden, config.temporal_expert_hidden
    per_block = (config.k // 2) * (2 * t * (v * eh + eh * v)
                                   + 2 * v * (t * th + th * t))
    per_block += 2 * (v * config.router_hidden
                      + config.router_hidden * (config.k + 1))
    total += config.l_blocks * per_block
    gh = config.gate_hidden
    for task in TASKS:
        total += 2 * (v * gh + gh * v) + 2 * v * HEAD_DIMS[task]
    return total


def cost_breakdown(config: ModelConfig) -> dict[str, dict[str, int]]:
    """Per-module parameter counts, for the info command."""
    full = param_count(config)
    parts = {}
    base = ModelConfig(**{**asdict(config), "features": config.features})
    for f in config.features:
        reduced = tuple(x for x in config.features if x != f)
        try:
            cfg_wo = ModelConfig(**{**asdict(base), "features": reduced})
            parts[f"embedding+width for {f}"] = full - param_count(cfg_wo)
        except ContractError:
            parts[f"embedding+width for {f}"] = -1
    return {"total": {"params": full, "flops": flops_estimate(config)},
            "marginal": parts}


# ---------------------------------------------------------------------------
# checkpoint file (.vdck)
# ---------------------------------------------------------------------------

def save_checkpoint(ps: ParamStore, path) -> None:
    """Write params and batch-norm buffers with a trailing CRC32."""
    cfg_json = json.dumps(asdict(ps.config)).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION),
             struct.pack("<I", len(cfg_json)), cfg_json]
    entries = [(name, t.data) for name, t in ps.params.items()]
    entries += [(name, arr) for name, arr in ps.buffers.items()]
    parts.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        a = np.ascontiguousarray(arr, dtype=np.float32)
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> ParamStore:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}", 0)
    if len(buf) < 16:
        raise FormatError("truncated checkpoint header", len(buf))
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    actual_crc = zlib.crc32(buf[:-4])
    if stored_crc != actual_crc:
        raise FormatError(
            f"CRC mismatch: stored {stored_crc:#x}, computed {actual_crc:#x}",
            len(buf) - 4)
    pos = 4
    (version,) = struct.unpack_from("<I", buf, pos); pos += 4
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (cfg_len,) = struct.unpack_from("<I", buf, pos); pos += 4
    cfg = ModelConfig(**json.loads(buf[pos:pos + cfg_len].decode("utf-8")))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", buf, pos); pos += 4
    ps = ParamStore(cfg)
    ref = init_params(cfg, seed=0)
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos); pos += 2
        name = buf[pos:pos + name_len].decode("utf-8"); pos += name_len
        ndim = buf[pos]; pos += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, pos); pos += 4 * ndim
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).copy()
        pos += 4 * n
        if name in ref.params:
            ps.params[name] = Tensor(arr.astype(cfg.np_dtype), requires_grad=True,
                                     name=name)
        elif name in ref.buffers:
            ps.buffers[name] = arr.astype(np.float64)
        else:
            raise FormatError(f"unknown parameter name {name!r} in checkpoint", pos)
    missing = (set(ref.params) - set(ps.params)) | (set(ref.buffers) - set(ps.buffers))
    if missing:
        raise FormatError(f"checkpoint missing entries {sorted(missing)}", pos)
    return ps
