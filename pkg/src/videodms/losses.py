"""Optimization targets: generalized cross-entropy, smooth L1, the
distribution-separation regularizer, its warm-up schedule, and the
combined multi-task loss with per-task masking."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import TASKS
from .tensor import (Tensor, ContractError, abs_, as_tensor, clamp, log,
                     power, softmax_lastdim, tmean, tsum)


@dataclass
class LossConfig:
    q: float = 0.7                    # GCE exponent
    truncation_enabled: bool = False
    tau: float = 0.5                  # regularizer temperature
    k1: float = 0.001                 # regularizer trade-off
    beta: float = 1.0                 # smooth-L1 transition point
    eps_clamp: float = 1e-6           # probability floor before logs
    hr_norm: tuple[float, float] = (40.0, 180.0)
    rr_norm: tuple[float, float] = (5.0, 30.0)

    def __post_init__(self):
        self.hr_norm = tuple(self.hr_norm)
        self.rr_norm = tuple(self.rr_norm)
        if not 0.0 < self.q <= 1.0:
            raise ContractError(f"q must lie in (0, 1], got {self.q}")
        if self.tau <= 0.0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.k1 < 0.0:
            raise ContractError(f"k1 must be non-negative, got {self.k1}")
        if self.beta <= 0.0:
            raise ContractError(f"beta must be positive, got {self.beta}")
        for name, rng in (("hr_norm", self.hr_norm), ("rr_norm", self.rr_norm)):
            if rng[1] <= rng[0]:
                raise ContractError(f"{name} range must be increasing, got {rng}")


def normalize_rate(value, rng: tuple[float, float]):
    """Affine map from physical units onto [0, 1] over ``rng``."""
    lo, hi = rng
    return (np.asarray(value, dtype=np.float64) - lo) / (hi - lo)


def denormalize_rate(value, rng: tuple[float, float]):
    lo, hi = rng
    return lo + np.asarray(value, dtype=np.float64) * (hi - lo)


def _clamped_probs(logits: Tensor, eps: float) -> Tensor:
    """Softmax, floor/ceiling at eps, renormalize back onto the simplex."""
    p = clamp(softmax_lastdim(logits), eps, 1.0 - eps)
    return p * (tsum(p, axis=-1, keepdims=True) ** -1.0)


def gce_loss(logits: Tensor, labels: np.ndarray, q: float = 0.7,
             eps_clamp: float = 1e-6) -> Tensor:
    """Mean generalized cross-entropy (1 - p_y^q)/q over the batch.

    Reduces to standard cross-entropy's 1 - p_y behaviour as q -> 1 and
    grows more outlier-tolerant as q -> 0.
    """
    if not 0.0 < q <= 1.0:
        raise ContractError(f"q must lie in (0, 1], got {q}")
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    p = _clamped_probs(logits, eps_clamp)
    p_true = p[np.arange(labels.shape[0]), labels]
    return tmean((1.0 - power(p_true, q)) * (1.0 / q))


def smooth_l1(pred: Tensor, target: np.ndarray, beta: float = 1.0) -> Tensor:
    """Mean Huber-style loss: quadratic inside |d| < beta, linear outside."""
    if beta <= 0.0:
        raise ContractError(f"beta must be positive, got {beta}")
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype)
    d = pred - target
    inner = np.abs(d.data) < beta         # constant mask; loss is C^1 at the seam
    quad = (d * d) * (0.5 / beta)
    lin = abs_(d) - 0.5 * beta
    return tmean(quad * inner.astype(pred.dtype) + lin * (~inner).astype(pred.dtype))


def align_loss(logits_d: Tensor, logits_c: Tensor, tau: float = 0.5,
               eps_clamp: float = 1e-6) -> Tensor:
    """Negative scaled KL divergence between the two state distributions.

    Per sample: -sum_classes (p/tau) * log((p/tau) / (q/tau)), which equals
    -(1/tau) * KL(p || q); mean over the batch.  Always <= 0; minimizing it
    pushes the drowsiness and cognitive-load distributions apart.
    """
    if tau <= 0.0:
        raise ContractError(f"tau must be positive, got {tau}")
    p = _clamped_probs(as_tensor(logits_d), eps_clamp)
    q = _clamped_probs(as_tensor(logits_c), eps_clamp)
    per_sample = tsum((p * (1.0 / tau)) * (log(p) - log(q)), axis=-1)
    return tmean(per_sample) * -1.0


def lambda_schedule(iter_current: int, iter_total: int) -> float:
    """Warm-up factor 2/(1+exp(-10 t)) with t = iter_current/iter_total."""
    if iter_total <= 0:
        raise ContractError(f"iter_total must be positive, got {iter_total}")
    if not 0 <= iter_current <= iter_total:
        raise ContractError(
            f"iter_current {iter_current} outside [0, {iter_total}]")
    t = iter_current / iter_total
    return 2.0 / (1.0 + math.exp(-10.0 * t))


def overall_loss(outputs: dict[str, Tensor], labels: dict[str, np.ndarray],
                 config: LossConfig, iter_current: int, iter_total: int,
                 mask: dict[str, bool] | None = None):
    """Combined multi-task loss.

    ``outputs`` holds model outputs per task (logits for the two state
    tasks, normalized-space scalars for hr/rr); ``labels`` holds arrays
    'd', 'c' (binary) and 'h', 'r' (physical units).  ``mask`` can disable
    whole tasks for single-task datasets; disabling all four is an error.

    Returns (total: Tensor, breakdown: dict of floats).  The breakdown
    reports the raw per-term values plus the schedule factor.
    """
    mask = mask or {}
    active = [t for t in TASKS if mask.get(t, True)]
    if not active:
        raise ContractError("every task is masked; nothing to optimize")
    lam = lambda_schedule(iter_current, iter_total)

    terms: dict[str, Tensor] = {}
    if "drowsiness" in active:
        terms["l_drow"] = gce_loss(outputs["drowsiness"], labels["d"],
                                   config.q, config.eps_clamp)
    if "cognitive" in active:
        terms["l_cog"] = gce_loss(outputs["cognitive"], labels["c"],
                                  config.q, config.eps_clamp)
    if "hr" in active:
        terms["l_hr"] = smooth_l1(outputs["hr"],
                                  normalize_rate(labels["h"], config.hr_norm),
                                  config.beta)
    if "rr" in active:
        terms["l_rr"] = smooth_l1(outputs["rr"],
                                  normalize_rate(labels["r"], config.rr_norm),
                                  config.beta)
    both_states = "drowsiness" in active and "cognitive" in active
    if both_states:
        terms["l_align"] = align_loss(outputs["drowsiness"], outputs["cognitive"],
                                      config.tau, config.eps_clamp)

    total = None
    for name in ("l_drow", "l_cog", "l_hr", "l_rr"):
        if name in terms:
            total = terms[name] if total is None else total + terms[name]
    if both_states and config.k1 != 0.0:
        total = total + terms["l_align"] * (lam * config.k1)

    breakdown = {name: float(t.data) for name, t in terms.items()}
    for name in ("l_drow", "l_cog", "l_hr", "l_rr", "l_align"):
        breakdown.setdefault(name, float("nan"))
    breakdown["lambda"] = lam
    breakdown["total"] = float(total.data)
    return total, breakdown
