"""Attack evaluation metrics: confusion counts, rate metrics, MCC and ROC-AUC."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _binary(seq, name):
    arr = np.asarray(seq).astype(np.int64).ravel()
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr


def confusion(predictions, labels) -> ConfusionMatrix:
    """Counts with occupied (1) as the positive class."""
    pred = _binary(predictions, "predictions")
    true = _binary(labels, "labels")
    if pred.size != true.size:
        raise ValueError(f"length mismatch: {pred.size} predictions, {true.size} labels")
    if pred.size == 0:
        raise ValueError("no predictions to evaluate")
    tp = int(np.sum((pred == 1) & (true == 1)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    return ConfusionMatrix(tp, tn, fp, pred.size - tp - tn - fp)


def _ratio(num, den):
    return None if den == 0 else num / den


def basic_metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy, precision, recall, F1, FPR and FNR. A zero denominator yields ``None``."""
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "accuracy": _ratio(cm.tp + cm.tn, cm.total),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "fpr": _ratio(cm.fp, cm.fp + cm.tn),
        "fnr": _ratio(cm.fn, cm.fn + cm.tp),
    }


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation; 0 when any marginal is empty (see :func:`mcc_defined`)."""
    den = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if den == 0:
        return 0.0
    return (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(den)


def mcc_defined(cm: ConfusionMatrix) -> bool:
    return (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn) != 0


def roc_curve(scores, labels):
    """ROC points (fpr, tpr) over every distinct score threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _binary(labels, "labels")
    if scores.size != labels.size:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    # last index of each run of tied scores
    cut = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.r_[0, np.cumsum(l)[cut]]
    fps = np.r_[0, np.cumsum(1 - l)[cut]]
    return fps, tps, n_neg, n_pos


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; tied scores contribute half credit."""
    fps, tps, n_neg, n_pos = roc_curve(scores, labels)
    # twice the trapezoid area in integer counts, so the result is exact up to one division
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    return twice_area / (2 * n_pos * n_neg)


@dataclass
class EvalReport:
    counts: ConfusionMatrix
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]
    mcc: float
    auc: Optional[float]
    undefined: list = field(default_factory=list)

    FIELDS = ("accuracy", "precision", "recall", "f1", "fpr", "fnr", "mcc", "auc")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.FIELDS}
        out["counts"] = {"tp": self.counts.tp, "tn": self.counts.tn, "fp": self.counts.fp, "fn": self.counts.fn}
        out["undefined"] = list(self.undefined)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def table(self, title: str = "") -> str:
        head = ["", "Accuracy", "Precision", "Recall", "F1", "FPR", "FNR", "MCC", "AUC"]
        row = [title or "attack"] + ["n/a" if getattr(self, k) is None else f"{getattr(self, k):.4f}" for k in self.FIELDS]
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        return fmt.format(*head) + "\n" + fmt.format(*row)


def evaluate(scores, labels, threshold: float = 0.5) -> EvalReport:
    """Full report for probability ``scores``; predictions are ``scores >= threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels, "labels")
    cm = confusion((scores >= threshold).astype(np.int64), labels)
    basic = basic_metrics(cm)
    undefined = [k for k, v in basic.items() if v is None]
    if not mcc_defined(cm):
        undefined.append("mcc")
    try:
        auc = roc_auc(scores, labels)
    except ValueError:
        auc = None
        undefined.append("auc")
    return EvalReport(cm, mcc=mcc(cm), auc=auc, undefined=undefined, **basic)
