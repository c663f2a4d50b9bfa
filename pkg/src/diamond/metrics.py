"""Classification metrics and demographic fairness breakdowns."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, DimensionError

# Age groups: <=65, 65-70, 70-75, 75-80, >80 (right-closed intervals).
AGE_BINS = (65.0, 70.0, 75.0, 80.0)


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass
class FairnessRow:
    demographic: str  # "age" | "sex" | "diagnosis"
    group: str
    metric: str  # "bacc" | "tpr"
    value: float | None
    n: int


@dataclass
class MetricsReport:
    bacc: float
    auc: float | None
    macro_f1: float
    macro_precision: float
    macro_recall: float
    confusion: np.ndarray
    n: int
    absent_classes: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    fairness: list[FairnessRow] = field(default_factory=list)

    def as_dict(self) -> dict[str, float | None]:
        return {
            "bacc": self.bacc,
            "auc": self.auc,
            "f1": self.macro_f1,
            "precision": self.macro_precision,
            "recall": self.macro_recall,
        }

    def to_text(self) -> str:
        lines = [f"n = {self.n}"]
        for key, value in self.as_dict().items():
            lines.append(f"{key} = {'NA' if value is None else repr(float(value))}")
        lines.append("confusion = " + ";".join(",".join(str(int(c)) for c in row) for row in self.confusion))
        if self.absent_classes:
            lines.append("absent_classes = " + ",".join(map(str, self.absent_classes)))
        for w in self.warnings:
            lines.append(f"warning = {w}")
        return "\n".join(lines) + "\n"


def predictions(scores: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(scores, axis=1)


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, n_classes: int) -> np.ndarray:
    """``cm[true, predicted]`` counts."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def balanced_accuracy(labels: np.ndarray, preds: np.ndarray, n_classes: int) -> tuple[float, list[int]]:
    """Mean recall over classes present in ``labels``; also returns the absent classes."""
    cm = confusion_matrix(labels, preds, n_classes)
    support = cm.sum(axis=1)
    present = [c for c in range(n_classes) if support[c] > 0]
    absent = [c for c in range(n_classes) if support[c] == 0]
    return _mean(cm[c, c] / support[c] for c in present), absent


def roc_auc(is_positive: np.ndarray, scores: np.ndarray) -> float | None:
    """Mann-Whitney AUC (ties count one half); ``None`` if a class is missing."""
    is_positive = np.asarray(is_positive, dtype=bool)
    n_pos, n_neg = int(is_positive.sum()), int((~is_positive).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[is_positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(labels, scores) -> MetricsReport:
    labels = np.asarray(labels, dtype=np.intp)
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise DimensionError(f"scores {scores.shape} do not match labels {labels.shape}")
    n_classes = scores.shape[1]
    if len(labels) == 0:
        raise ContractError("compute_metrics: empty evaluation set")
    if np.any(np.abs(scores.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("score rows must be probability vectors (sum to 1 +/- 1e-6)")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractError(f"labels must lie in [0, {n_classes})")

    preds = predictions(scores)
    cm = confusion_matrix(labels, preds, n_classes)
    bacc, absent = balanced_accuracy(labels, preds, n_classes)
    precision, recall, f1 = [], [], []
    for c in range(n_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        precision.append(_ratio(tp, tp + fp))
        recall.append(_ratio(tp, tp + fn))
        f1.append(_ratio(2 * tp, 2 * tp + fp + fn))
    warnings = [f"class {c} absent from labels; excluded from BACC" for c in absent]
    auc = None
    if n_classes == 2:
        auc = roc_auc(labels == 1, scores[:, 1])
        if auc is None:
            warnings.append("AUC undefined: only one class present")
    return MetricsReport(
        bacc=bacc,
        auc=auc,
        macro_f1=_mean(f1),
        macro_precision=_mean(precision),
        macro_recall=_mean(recall),
        confusion=cm,
        n=len(labels),
        absent_classes=absent,
        warnings=warnings,
    )


def age_group_names(bins=AGE_BINS) -> list[str]:
    edges = list(bins)
    names = [f"<={edges[0]:g}"]
    names += [f"{lo:g}-{hi:g}" for lo, hi in zip(edges[:-1], edges[1:])]
    names.append(f">{edges[-1]:g}")
    return names


def age_group(age: float, bins=AGE_BINS) -> int:
    return int(np.searchsorted(np.asarray(bins), age, side="left"))


def fairness_report(records, labels, scores, age_bins=AGE_BINS, class_names: list[str] | None = None) -> list[FairnessRow]:
    """Per age group and per sex BACC, per diagnosis true-positive rate, with group sizes."""
    labels = np.asarray(labels, dtype=np.intp)
    scores = np.asarray(scores, dtype=float)
    if len(records) != len(labels):
        raise DimensionError("records and labels differ in length")
    n_classes = scores.shape[1]
    preds = predictions(scores)
    rows: list[FairnessRow] = []

    def bacc_row(demographic: str, group: str, mask: np.ndarray) -> FairnessRow:
        n = int(mask.sum())
        if n == 0:
            return FairnessRow(demographic, group, "bacc", None, 0)
        return FairnessRow(demographic, group, "bacc", balanced_accuracy(labels[mask], preds[mask], n_classes)[0], n)

    groups = np.array([age_group(r.age, age_bins) for r in records])
    for g, name in enumerate(age_group_names(age_bins)):
        rows.append(bacc_row("age", name, groups == g))
    sexes = np.array([r.sex for r in records])
    for sex, name in (("M", "male"), ("F", "female")):
        rows.append(bacc_row("sex", name, sexes == sex))
    for c in range(n_classes):
        mask = labels == c
        name = class_names[c] if class_names else str(c)
        n = int(mask.sum())
        tpr = float(np.mean(preds[mask] == c)) if n else None
        rows.append(FairnessRow("diagnosis", name, "tpr", tpr, n))
    rows.append(bacc_row("total", "all", np.ones(len(labels), dtype=bool)))
    return rows
