"""Dense n-d arrays with reverse-mode differentiation.

Implements exactly the primitive set the driver-state model needs:
matmul, 2-d convolution, pooling, the usual activations, batch norm,
transposes, reductions and elementwise arithmetic.  Arrays are numpy
float32/float64; gradients are accumulated by walking a ComputeTape in
reverse creation order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shape or rank mismatch between operands."""


class ContractError(ValueError):
    """An operation precondition was violated."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / data prep)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(x, dtype=None) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


class Tensor:
    """A numpy array plus optional gradient bookkeeping.

    The value is treated as immutable once the tensor participates in an
    operation.  ``grad`` accumulates across repeated backward calls until
    ``zero_grad`` is invoked.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, (int, float)) and not isinstance(other, bool):
            return add(self, -other)
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; record the edge only when a gradient is needed."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if needs:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class ComputeTape:
    """Topologically ordered record of the subgraph below one output.

    Node order guarantees every tensor precedes its consumers, so a single
    reversed pass visits each node exactly once.
    """

    def __init__(self, nodes: Sequence[Tensor]):
        self.nodes = list(nodes)

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(root: Tensor):
    """Accumulate d(root)/dx into ``grad`` of every reachable tensor.

    ``root`` must be scalar.  Repeated calls without ``zero_grad`` keep
    accumulating, matching the usual autodiff convention.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        raise ContractError("backward root does not require grad")
    tape = ComputeTape.from_root(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf (parameter or input): accumulate into .grad
            _accumulate(node, g)
        else:
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg if pg.flags.owndata else pg.copy()
                else:
                    acc += pg


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------

def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    """Convert both operands; a bare Python number adopts the other
    operand's float dtype so scalars never upcast a float32 graph."""
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if a_num and not b_num:
        b = as_tensor(b)
        dt = b.data.dtype
        return as_tensor(np.asarray(a, dtype=dt if dt.kind == "f" else None)), b
    if b_num and not a_num:
        a = as_tensor(a)
        dt = a.data.dtype
        return a, as_tensor(np.asarray(b, dtype=dt if dt.kind == "f" else None))
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data + b.data

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(g, b.data.shape)))

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data * b.data

    def bwd(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))

    return _make(out, (a, b), bwd)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent

    def bwd(g):
        return ((a, g * exponent * a.data ** (exponent - 1.0)),)

    return _make(out, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def bwd(g):
        return ((a, g / a.data),)

    return _make(out, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        return ((a, g * out),)

    return _make(out, (a,), bwd)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient is zero where clipping was active."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        return ((a, g * mask),)

    return _make(out, (a,), bwd)


def abs_(a) -> Tensor:
    a = as_tensor(a)
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def bwd(g):
        return ((a, g * sign),)

    return _make(out, (a,), bwd)


def getitem(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _make(np.array(out, copy=True), (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    out = a.data.reshape(shape)

    def bwd(g):
        return ((a, g.reshape(old)),)

    return _make(out, (a,), bwd)


def transpose_last_two(a) -> Tensor:
    """Swap the trailing two axes; an involution."""
    a = as_tensor(a)
    if a.data.ndim < 2:
        raise DimensionError(f"transpose_last_two needs rank >= 2, got {a.data.ndim}")
    out = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        return ((a, np.swapaxes(g, -1, -2)),)

    return _make(np.ascontiguousarray(out), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, pieces))

    return _make(out, tensors, bwd)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape)),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.data.shape)),)

    return _make(np.asarray(out), (a,), bwd)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the trailing two axes, with leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, _unbroadcast(ga, a.data.shape)),
                (b, _unbroadcast(gb, b.data.shape)))

    return _make(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def bwd(g):
        return ((a, g * mask),)

    return _make(out, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # numerically stable two-sided form
    out = np.where(a.data >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = out.astype(a.data.dtype)

    def bwd(g):
        return ((a, g * out * (1.0 - out)),)

    return _make(out, (a,), bwd)


def softmax_lastdim(a) -> Tensor:
    """Softmax over the last axis; rows land on the probability simplex."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((a, (g - dot) * out),)

    return _make(out, (a,), bwd)


def activation(a, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "softmax_lastdim":
        return softmax_lastdim(a)
    raise ContractError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# convolution (channels-last, stride 1)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, ph: int, pw: int) -> tuple[np.ndarray, int, int]:
    """(N,H,W,C) -> (N*Ho*Wo, kh*kw*C) patch matrix with zero padding."""
    n, h, w, c = x.shape
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    ho = h + 2 * ph - kh + 1
    wo = w + 2 * pw - kw + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, ho, wo, kh, kw, c), (s0, s1, s2, s1, s2, s3), writeable=False)
    return np.ascontiguousarray(view).reshape(n * ho * wo, kh * kw * c), ho, wo


def conv2d(x, w, bias=None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-d cross-correlation.

    ``x`` is (N, H, W, Cin) or (H, W, Cin); ``w`` is (kh, kw, Cin, Cout).
    ``same`` keeps the spatial size (odd kernels only); ``valid`` drops the
    border.  Only stride 1 is supported.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects (N,H,W,Cin) and (kh,kw,Cin,Cout), got {x.data.shape} and {w.data.shape}")
    kh, kw, cin, cout = w.data.shape
    if xd.shape[-1] != cin:
        raise DimensionError(
            f"conv2d channel mismatch: input has {xd.shape[-1]} channels, kernel expects {cin}")
    if stride != 1:
        raise ContractError("conv2d supports stride 1 only")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ContractError("'same' padding requires odd kernel dims")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ContractError(f"unknown padding {padding!r}")

    n = xd.shape[0]
    cols, ho, wo = _im2col(xd, kh, kw, ph, pw)
    wm = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wm
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
    out = out.reshape(n, ho, wo, cout)
    if squeeze:
        out = out[0]

    def bwd(g):
        # shift-and-GEMM accumulation: one small matmul per kernel offset,
        # so no kh*kw-times-larger patch matrix is ever materialized
        g4 = g[None] if squeeze else g
        grads = []
        if w.requires_grad or x.requires_grad:
            if ph or pw:
                xp = np.pad(xd, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
            else:
                xp = xd
        if w.requires_grad:
            gw = np.empty((kh, kw, cin, cout), dtype=w.data.dtype)
            for di in range(kh):
                for dj in range(kw):
                    gw[di, dj] = np.tensordot(
                        xp[:, di:di + ho, dj:dj + wo, :], g4,
                        axes=([0, 1, 2], [0, 1, 2]))
            grads.append((w, gw))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, di:di + ho, dj:dj + wo, :] += g4 @ w.data[di, dj].T
            gx = gxp[:, ph:ph + xd.shape[1], pw:pw + xd.shape[2], :]
            grads.append((x, gx[0] if squeeze else gx))
        if bias is not None and bias.requires_grad:
            grads.append((bias, g4.sum(axis=(0, 1, 2))))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bwd)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def replicate_pad_to_even(x) -> Tensor:
    """Replicate the trailing row/column of (N,H,W,C) so H and W are even."""
    x = as_tensor(x)
    n, h, w, c = x.data.shape
    eh, ew = h % 2, w % 2
    if not eh and not ew:
        return x
    out = np.pad(x.data, ((0, 0), (0, eh), (0, ew), (0, 0)), mode="edge")

    def bwd(g):
        gx = np.array(g[:, :h, :w, :], copy=True)
        if eh:
            gx[:, h - 1, :, :] += g[:, h, :w, :]
        if ew:
            gx[:, :, w - 1, :] += g[:, :h, w, :]
        if eh and ew:
            gx[:, h - 1, w - 1, :] += g[:, h, w, :]
        return ((x, gx),)

    return _make(out, (x,), bwd)


def max_pool2(x) -> Tensor:
    """2x2 max pooling with stride 2 on (N,H,W,C); odd dims replicate-padded."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"max_pool2 expects (N,H,W,C), got {x.data.shape}")
    xp = replicate_pad_to_even(x)
    n, h, w, c = xp.data.shape
    if h == 0 or w == 0:
        raise DimensionError("max_pool2 on empty spatial axis")
    quads = [xp.data[:, i::2, j::2, :] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]),
                     np.maximum(quads[2], quads[3]))

    def bwd(g):
        # ties split the gradient evenly; duplicated replicate-pad entries
        # collapse back onto one source element, so this stays exact there
        hits = [q == out for q in quads]
        counts = hits[0].astype(x.data.dtype)
        for hq in hits[1:]:
            counts += hq
        share = g / counts
        gx = np.zeros((n, h, w, c), dtype=x.data.dtype)
        for (i, j), hq in zip(((0, 0), (0, 1), (1, 0), (1, 1)), hits):
            np.copyto(gx[:, i::2, j::2, :], share, where=hq)
        return ((xp, gx),)

    return _make(out, (xp,), bwd)


def adaptive_avg_to_1(x, axis: int) -> Tensor:
    """Collapse one axis to length 1 via its arithmetic mean."""
    x = as_tensor(x)
    if x.data.shape[axis] == 0:
        raise DimensionError("adaptive_avg_to_1 on empty axis")
    return tmean(x, axis=axis, keepdims=True)


def pool(x, kind: str, axis: int = 1) -> Tensor:
    if kind == "max2d":
        return max_pool2(x)
    if kind == "adaptive_avg_to_1":
        return adaptive_avg_to_1(x, axis)
    raise ContractError(f"unknown pool kind {kind!r}")


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               mode: str = "train", momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization; channels on the last axis.

    Train mode normalizes by batch statistics over all leading axes and
    updates the running buffers in place (running variance uses the
    unbiased estimate).  Eval mode normalizes by the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(f"batch_norm affine params must have shape ({c},)")
    axes = tuple(range(x.data.ndim - 1))
    n = int(np.prod([x.data.shape[a] for a in axes]))

    if mode == "train":
        if n < 2:
            raise ContractError(f"batch_norm train mode needs at least 2 samples, got {n}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # biased, used for normalization
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * var * n / (n - 1)
    elif mode == "eval":
        mean = running_mean
        var = running_var
    else:
        raise ContractError(f"unknown batch_norm mode {mode!r}")

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        grads = []
        if gamma.requires_grad:
            grads.append((gamma, (g * xhat).sum(axis=axes)))
        if beta.requires_grad:
            grads.append((beta, g.sum(axis=axes)))
        if x.requires_grad:
            gh = g * gamma.data
            if mode == "eval":
                grads.append((x, gh * inv))
            else:
                m = float(n)
                gx = (gh - gh.mean(axis=axes)
                      - xhat * (gh * xhat).sum(axis=axes) / m) * inv
                grads.append((x, gx))
        return tuple(grads)

    return _make(out.astype(x.data.dtype), (x, gamma, beta), bwd)
