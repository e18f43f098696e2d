"""Accuracy, rank-based AUC and the metrics report."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


def accuracy(probs, labels) -> float:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def macro_auc(probs, labels) -> float:
    """Macro average of one-vs-rest AUCs over classes present with both outcomes."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    aucs = []
    for c in range(probs.shape[1]):
        pos = labels == c
        if pos.any() and not pos.all():
            aucs.append(binary_auc(probs[:, c], pos))
    return float(np.mean(aucs)) if aucs else float("nan")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class MetricsReport:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    accuracy: float | None = None
    auc: float | None = None
    loss: float | None = None
    lambdas: list[float] = field(default_factory=list)
    predictions: list[int] = field(default_factory=list)

    @property
    def mean_lambda(self) -> float | None:
        return float(np.mean(self.lambdas)) if self.lambdas else None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mean_lambda"] = self.mean_lambda
        return out

    def to_text(self) -> str:
        lines = []
        if self.history:
            last = self.history[-1]
            lines.append(f"epochs run: {last.epoch}  best epoch: {self.best_epoch}")
            best = next(r for r in self.history if r.epoch == self.best_epoch)
            lines.append(f"best val accuracy: {best.val_accuracy:.4f}  val loss: {best.val_loss:.4f}")
        if self.accuracy is not None:
            lines.append(f"accuracy: {self.accuracy:.4f}")
        if self.auc is not None:
            lines.append(f"macro AUC: {self.auc:.4f}")
        if self.loss is not None:
            lines.append(f"loss: {self.loss:.4f}")
        if self.lambdas:
            lines.append(f"mean lambda (shape weight): {self.mean_lambda:.4f}")
        return "\n".join(lines)
