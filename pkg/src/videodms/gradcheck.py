"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class NonFiniteError(RuntimeError):
    """A forward evaluation produced a non-finite value."""


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               h: float = 1e-5) -> float:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` maps the given tensors to a scalar Tensor.  Every input must be
    float64 and marked requires_grad.  Returns the worst relative error

        max_i |g_analytic - g_central| / max(1, |g_analytic|, |g_central|).
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        if not t.requires_grad:
            raise ValueError("grad_check inputs must require grad")

    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if not np.isfinite(out.data).all():
        raise NonFiniteError("non-finite output in analytic forward pass")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.ravel()
        gflat = ga.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*inputs).data)
            flat[i] = orig - h
            fm = float(fn(*inputs).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(
                    f"non-finite value while perturbing element {i} of a "
                    f"{t.data.shape} input")
            gn = (fp - fm) / (2.0 * h)
            denom = max(1.0, abs(gflat[i]), abs(gn))
            err = abs(gflat[i] - gn) / denom
            if err > worst:
                worst = err
    return worst


def tiny_model_config():
    """A scaled-down 64-bit model used for finite-difference verification."""
    from .model import ModelConfig
    return ModelConfig(t=8, d=4, k=2, expert_hidden=8, temporal_expert_hidden=8,
                       router_hidden=8, gate_hidden=8, region_channels=(2, 3),
                       stmap_channels=(3, 4), landmark_channels=2,
                       dtype="float64")


def model_grad_check(model_config=None, loss_config=None, batch: int = 2,
                     seed: int = 5, h: float = 1e-5) -> float:
    """Finite-difference check of the full network + combined loss.

    Builds random inputs and labels, evaluates the complete training
    objective (warm-up factor at mid-schedule) and returns the worst
    relative gradient error over every parameter element.
    """
    from .losses import LossConfig, overall_loss
    from .model import forward, init_params
    cfg = model_config or tiny_model_config()
    if cfg.dtype != "float64":
        raise ValueError("gradient checking requires a float64 model config")
    lc = loss_config or LossConfig()
    ps = init_params(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    b, t = batch, cfg.t
    inputs = {
        "left_eye": rng.uniform(0, 1, (b, t, *cfg.eye_hw, 3)),
        "right_eye": rng.uniform(0, 1, (b, t, *cfg.eye_hw, 3)),
        "mouth": rng.uniform(0, 1, (b, t, *cfg.mouth_hw, 3)),
        # unit-scale coordinates: pixel-scale values amplify finite-difference
        # steps past ReLU kinks and poison the central-difference estimate
        "landmarks": rng.uniform(0, 1, (b, t, cfg.n_landmarks, 2)),
        "stmap": rng.uniform(0, 1, (b, t, cfg.stmap_rois, 3)),
    }
    inputs = {k: v for k, v in inputs.items() if k in cfg.features}
    labels = {"d": rng.integers(0, 2, b), "c": rng.integers(0, 2, b),
              "h": rng.uniform(45, 150, b), "r": rng.uniform(8, 25, b)}

    def objective(*_params):
        outputs = forward(ps, inputs, mode="train")
        total, _ = overall_loss(outputs, labels, lc, 1, 2)
        return total

    return grad_check(objective, list(ps.params.values()), h=h)
