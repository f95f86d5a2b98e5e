"""Classification metrics from a confusion matrix (rows = truth, columns = prediction)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision: list
    recall: list
    f1: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    loss: Optional[float] = None
    absent_classes: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {"confusion": self.confusion.tolist(), "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "macro_precision": self.macro_precision, "macro_recall": self.macro_recall,
                "macro_f1": self.macro_f1, "loss": self.loss, "absent_classes": self.absent_classes,
                "total": self.total}

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    def write_csv(self, path, class_names: Optional[Sequence[str]] = None) -> Path:
        path = Path(path)
        k = len(self.precision)
        names = list(class_names) if class_names else [str(i) for i in range(k)]
        support = self.confusion.sum(axis=1)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "precision", "recall", "f1", "support"])
            for i in range(k):
                w.writerow([names[i], self.precision[i], self.recall[i], self.f1[i], int(support[i])])
            w.writerow(["macro", self.macro_precision, self.macro_recall, self.macro_f1, self.total])
            w.writerow(["accuracy", self.accuracy, "", "", self.total])
            if self.loss is not None:
                w.writerow(["loss", self.loss, "", "", self.total])
        return path


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> np.ndarray:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return conf


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=den > 0)


def metrics_from_confusion(confusion, loss: Optional[float] = None) -> MetricsReport:
    """Accuracy, per-class and macro precision/recall/F1.

    Zero denominators give 0. Classes absent from both truth and predictions
    are listed in ``absent_classes`` (their metrics are 0 and still count in
    the macro mean).
    """
    conf = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    actual = conf.sum(axis=1).astype(np.float64)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, actual)
    f1 = _ratio(2 * precision * recall, precision + recall)
    total = conf.sum()
    accuracy = float(np.trace(conf) / total) if total else 0.0
    absent = [int(i) for i in np.nonzero((predicted == 0) & (actual == 0))[0]]
    return MetricsReport(conf, accuracy, precision.tolist(), recall.tolist(), f1.tolist(),
                         float(precision.mean()), float(recall.mean()), float(f1.mean()),
                         None if loss is None else float(loss), absent)
