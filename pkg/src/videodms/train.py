"""Adam optimizer, the training loop over sample datasets, and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import LossConfig, denormalize_rate, overall_loss
from .metrics import MetricsReport, classification_metrics, regression_metrics
from .model import (TASKS, ParamStore, batch_from_bundles, forward,
                    save_checkpoint)
from .sampleio import read_sample
from .tensor import ContractError, backward

CSV_HEADER = "iter,total,l_drow,l_cog,l_hr,l_rr,l_align,lambda"


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_iters: int = 2000
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 500
    task_mask: dict = field(default_factory=dict)  # task -> bool, default on

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractError(
                f"batch size must be >= 2 for batch-norm statistics, got {self.batch_size}")
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        if self.max_iters < 1:
            raise ContractError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.eval_every < 1:
            raise ContractError(f"eval_every must be >= 1, got {self.eval_every}")
        unknown = set(self.task_mask) - set(TASKS)
        if unknown:
            raise ContractError(f"unknown tasks in mask: {sorted(unknown)}")


class Dataset:
    """An in-memory list of samples with stacked label arrays."""

    def __init__(self, bundles):
        if not bundles:
            raise ContractError("dataset is empty")
        self.bundles = list(bundles)
        self.h = np.array([b.labels.h for b in bundles])
        self.r = np.array([b.labels.r for b in bundles])
        self.d = np.array([b.labels.d for b in bundles], dtype=np.intp)
        self.c = np.array([b.labels.c for b in bundles], dtype=np.intp)

    def __len__(self):
        return len(self.bundles)

    @classmethod
    def from_dir(cls, path) -> "Dataset":
        p = Path(path)
        manifest = p / "manifest.json"
        if manifest.exists():
            names = [s["file"] for s in json.loads(manifest.read_text())["samples"]]
        else:
            names = sorted(f.name for f in p.glob("*.vdms"))
        if not names:
            raise FileNotFoundError(f"no .vdms samples under {p}")
        return cls([read_sample(p / n) for n in names])

    def subset(self, idx) -> "Dataset":
        return Dataset([self.bundles[i] for i in idx])

    def labels_for(self, idx) -> dict[str, np.ndarray]:
        return {"h": self.h[idx], "r": self.r[idx],
                "d": self.d[idx], "c": self.c[idx]}


def split_dataset(n: int, seed: int, ratios=(0.6, 0.2, 0.2)):
    """Seeded index split; returns (train_idx, val_idx, test_idx)."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    def __init__(self, ps: ParamStore):
        self.m = {k: np.zeros_like(t.data) for k, t in ps.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in ps.params.items()}
        self.t = 0


def adam_step(ps: ParamStore, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update over every parameter with a gradient."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in ps.params.items():
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise ContractError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p.data -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

class _Batcher:
    """Seeded epoch shuffling; partial trailing batches are dropped."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.b = min(batch_size, n)
        self.rng = rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.b > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        out = self.perm[self.pos:self.pos + self.b]
        self.pos += self.b
        return out


def _save_train_state(ps: ParamStore, adam: AdamState, batcher: _Batcher,
                      it: int, path):
    arrays = {f"param/{k}": t.data for k, t in ps.params.items()}
    arrays |= {f"buf/{k}": a for k, a in ps.buffers.items()}
    arrays |= {f"m/{k}": a for k, a in adam.m.items()}
    arrays |= {f"v/{k}": a for k, a in adam.v.items()}
    arrays["perm"] = batcher.perm
    arrays["scalars"] = np.array([it, adam.t, batcher.pos], dtype=np.int64)
    arrays["rng_state"] = np.frombuffer(
        json.dumps(batcher.rng.bit_generator.state).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def _load_train_state(ps: ParamStore, adam: AdamState, batcher: _Batcher, path):
    with np.load(path) as z:
        for k, t in ps.params.items():
            t.data[...] = z[f"param/{k}"]
        for k in ps.buffers:
            ps.buffers[k][...] = z[f"buf/{k}"]
        for k in adam.m:
            adam.m[k][...] = z[f"m/{k}"]
            adam.v[k][...] = z[f"v/{k}"]
        it, adam.t, batcher.pos = (int(x) for x in z["scalars"])
        batcher.perm = z["perm"].copy()
        batcher.rng.bit_generator.state = json.loads(z["rng_state"].tobytes().decode())
    return it


def train_loop(ps: ParamStore, dataset: Dataset, train_config: TrainConfig,
               loss_config: LossConfig, out_dir, resume_from=None,
               log=None) -> Path:
    """Train in place; writes loss_curve.csv and .vdck checkpoints.

    Returns the final checkpoint path.  ``resume_from`` names a
    train_state .npz written by a previous run; the continuation then
    reproduces an unbroken run exactly (same seed, same dtype).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc, lc = train_config, loss_config
    mask = {t: bool(tc.task_mask.get(t, True)) for t in TASKS}

    rng = np.random.default_rng(tc.seed)
    batcher = _Batcher(len(dataset), tc.batch_size, rng)
    adam = AdamState(ps)
    start_it = 0
    csv_path = out / "loss_curve.csv"
    if resume_from is not None:
        start_it = _load_train_state(ps, adam, batcher, resume_from)
        csv_file = open(csv_path, "a")
    else:
        csv_file = open(csv_path, "w")
        csv_file.write(CSV_HEADER + "\n")

    def checkpoint(it: int):
        save_checkpoint(ps, out / f"ckpt_{it:06d}.vdck")
        _save_train_state(ps, adam, batcher, it, out / f"train_state_{it:06d}.npz")

    try:
        for it in range(start_it + 1, tc.max_iters + 1):
            idx = batcher.next()
            inputs = batch_from_bundles([dataset.bundles[i] for i in idx], ps.config)
            outputs = forward(ps, inputs, mode="train")
            total, terms = overall_loss(outputs, dataset.labels_for(idx), lc,
                                        it, tc.max_iters, mask)
            ps.zero_grad()
            backward(total)
            adam_step(ps, adam, tc)
            row = [it] + [terms[k] for k in
                          ("total", "l_drow", "l_cog", "l_hr", "l_rr",
                           "l_align", "lambda")]
            csv_file.write(",".join(
                str(v) if isinstance(v, int) else f"{v:.17g}" for v in row) + "\n")
            csv_file.flush()
            if log is not None and (it % 50 == 0 or it == 1):
                log(f"iter {it}/{tc.max_iters}  total {terms['total']:.5f}")
            if it % tc.eval_every == 0 and it != tc.max_iters:
                checkpoint(it)
        checkpoint(tc.max_iters)
    finally:
        csv_file.close()
    final = out / "final.vdck"
    save_checkpoint(ps, final)
    return final


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(ps: ParamStore, dataset: Dataset, loss_config: LossConfig,
             batch_size: int = 8) -> MetricsReport:
    """Run the model over a dataset and compute per-task metrics.

    Classification tasks use logit argmax; regression outputs are mapped
    back to physical units before the error metrics.
    """
    n = len(dataset)
    preds = {t: [] for t in TASKS}
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        inputs = batch_from_bundles([dataset.bundles[i] for i in idx], ps.config)
        outputs = forward(ps, inputs, mode="eval")
        preds["drowsiness"].append(np.argmax(outputs["drowsiness"].data, axis=-1))
        preds["cognitive"].append(np.argmax(outputs["cognitive"].data, axis=-1))
        preds["hr"].append(denormalize_rate(outputs["hr"].data, loss_config.hr_norm))
        preds["rr"].append(denormalize_rate(outputs["rr"].data, loss_config.rr_norm))
    cat = {t: np.concatenate(v) for t, v in preds.items()}
    return MetricsReport(
        classification={
            "drowsiness": classification_metrics(dataset.d, cat["drowsiness"]),
            "cognitive": classification_metrics(dataset.c, cat["cognitive"]),
        },
        regression={
            "hr": regression_metrics(cat["hr"], dataset.h),
            "rr": regression_metrics(cat["rr"], dataset.r),
        },
        n_samples=n,
    )
