"""Classification and regression metrics and the combined report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PEARSON_UNDEFINED = "undefined"


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    """Accuracy, F1, sensitivity, specificity on the positive (1) class.

    Rates with an empty denominator are reported as 0.0.
    """
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("label and prediction arrays must be non-empty and aligned")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))

    def rate(num, den):
        return num / den if den else 0.0

    precision = rate(tp, tp + fp)
    sensitivity = rate(tp, tp + fn)
    return {
        "accuracy": rate(tp + tn, tp + fp + fn + tn),
        "f1": rate(2 * precision * sensitivity, precision + sensitivity),
        "sensitivity": sensitivity,
        "specificity": rate(tn, tn + fp),
        "counts": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    }


def regression_metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    """MAE, RMSE and Pearson correlation in physical units.

    Pearson is the string marker 'undefined' when either series has zero
    variance; reporting 0 there would fake decorrelation.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError("prediction and target arrays must be non-empty and aligned")
    err = pred - target
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    if pred.size < 2 or np.std(pred) == 0.0 or np.std(target) == 0.0:
        pearson = PEARSON_UNDEFINED
    else:
        pearson = float(np.corrcoef(pred, target)[0, 1])
    return {"mae": mae, "rmse": rmse, "pearson": pearson}


@dataclass
class MetricsReport:
    """Per-task metrics over one dataset."""

    classification: dict = field(default_factory=dict)  # task -> metric dict
    regression: dict = field(default_factory=dict)      # task -> metric dict
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples,
                "classification": self.classification,
                "regression": self.regression}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_table(self) -> str:
        lines = [f"samples: {self.n_samples}"]
        for task, m in self.classification.items():
            c = m["counts"]
            lines.append(
                f"{task:>12}  acc {m['accuracy']:.4f}  f1 {m['f1']:.4f}  "
                f"sens {m['sensitivity']:.4f}  spec {m['specificity']:.4f}  "
                f"(tp {c['tp']} fp {c['fp']} fn {c['fn']} tn {c['tn']})")
        for task, m in self.regression.items():
            p = m["pearson"]
            p_txt = p if isinstance(p, str) else f"{p:.4f}"
            lines.append(
                f"{task:>12}  mae {m['mae']:.3f}  rmse {m['rmse']:.3f}  "
                f"pearson {p_txt}")
        return "\n".join(lines)
