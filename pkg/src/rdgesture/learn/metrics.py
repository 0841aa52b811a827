"""Accuracy, per-class precision/recall/F1, macro-F1 and confusion matrices (percent scale)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np


def confusion_matrix(truth, pred, num_classes: int) -> np.ndarray:
    """counts[t, p] = number of clips of true class t predicted as p."""
    truth = np.asarray(truth, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if truth.shape != pred.shape:
        raise ValueError("truth and prediction lengths differ")
    if truth.size and (min(truth.min(), pred.min()) < 0 or max(truth.max(), pred.max()) >= num_classes):
        raise ValueError("label out of range")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return counts


def per_class_scores(confusion: np.ndarray):
    """(precision, recall, f1) arrays in [0, 1]; 0 where undefined."""
    c = np.asarray(confusion, dtype=float)
    tp = np.diag(c)
    pred_tot = c.sum(axis=0)
    true_tot = c.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(true_tot > 0, tp / true_tot, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return precision, recall, f1


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    confusion: list
    per_class: dict
    params: Optional[int] = None
    gflops: Optional[float] = None
    loss_curve: list = field(default_factory=list)
    class_names: Optional[list] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def table_row(self, name: str = "CNN-GRU") -> str:
        gf = "-" if self.gflops is None else f"{self.gflops:.3f}"
        params = "-" if self.params is None else f"{self.params:,}"
        return f"{name} | {self.accuracy:.2f} | {self.macro_f1:.2f} | {params} | {gf}"


def evaluate_predictions(
    truth, pred, num_classes: int = 5, class_names: Optional[Sequence[str]] = None
) -> EvalReport:
    conf = confusion_matrix(truth, pred, num_classes)
    total = conf.sum()
    acc = 100.0 * int(np.trace(conf)) / int(total) if total else 0.0
    precision, recall, f1 = per_class_scores(conf)
    names = list(class_names) if class_names is not None else [str(i) for i in range(num_classes)]
    per_class = {
        n: {
            "support": int(conf[i].sum()),
            "accuracy": 100.0 * float(recall[i]),
            "precision": 100.0 * float(precision[i]),
            "f1": 100.0 * float(f1[i]),
        }
        for i, n in enumerate(names)
    }
    return EvalReport(
        accuracy=float(acc),
        # plain left-to-right sum, so an independent re-computation matches exactly
        macro_f1=100.0 * (sum(f1.tolist()) / num_classes),
        confusion=conf.tolist(),
        per_class=per_class,
        class_names=names,
    )
