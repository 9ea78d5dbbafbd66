"""Evaluation metrics: per-class average precision, macro mAP, accuracy,
and cross-dataset evaluation on a mapped subset of shared labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .store import LabelSpace


@dataclass
class MetricReport:
    per_class_ap: dict[str, float]
    map: float
    accuracy: Optional[float]
    n_eval: int
    skipped_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class_ap": dict(self.per_class_ap),
            "map": self.map,
            "accuracy": self.accuracy,
            "n_eval": self.n_eval,
            "skipped_classes": list(self.skipped_classes),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricReport":
        return cls(per_class_ap=dict(raw["per_class_ap"]), map=raw["map"],
                   accuracy=raw["accuracy"], n_eval=raw["n_eval"],
                   skipped_classes=list(raw["skipped_classes"]))


def average_precision(scores, labels) -> Optional[float]:
    """AP of one class: mean over positive ranks of (positives seen / rank).

    Sorting is by descending score with stable tie-breaking on the original
    index. Returns None when the class has no positives, signalling that it
    should be skipped rather than scored.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise DimensionError(
            f"average_precision: {scores.shape} scores vs {labels.shape} labels")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValidationError("average_precision: labels must be binary")
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    positive_ranks = np.nonzero(hits)[0] + 1
    seen = np.arange(1, n_pos + 1, dtype=np.float64)
    return float(np.mean(seen / positive_ranks))


def mean_average_precision(scores, labels,
                           names: Optional[Sequence[str]] = None) -> MetricReport:
    """Macro mAP over classes with at least one positive; others are skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise DimensionError(
            f"mean_average_precision: score shape {scores.shape} vs "
            f"label shape {labels.shape}")
    n, c = scores.shape
    if names is None:
        names = [f"class{j}" for j in range(c)]
    if len(names) != c:
        raise ValidationError(f"need {c} class names; got {len(names)}")
    per_class: dict[str, float] = {}
    skipped: list[str] = []
    for j in range(c):
        ap = average_precision(scores[:, j], labels[:, j])
        if ap is None:
            skipped.append(names[j])
        else:
            per_class[names[j]] = ap
    if not per_class:
        raise ValidationError("every class has zero positives; nothing to evaluate")
    macro = float(np.mean(list(per_class.values())))
    return MetricReport(per_class_ap=per_class, map=macro, accuracy=None,
                        n_eval=n, skipped_classes=skipped)


def accuracy(logits, class_index) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the lowest index."""
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(class_index)
    if logits.ndim != 2 or classes.ndim != 1 or logits.shape[0] != classes.shape[0]:
        raise DimensionError(
            f"accuracy: logits {logits.shape} vs labels {classes.shape}")
    if logits.shape[0] < 1:
        raise ValidationError("accuracy needs at least one sample")
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == classes))


def multilabel_accuracy(logits, labels) -> float:
    """Mean per-entry binary accuracy of thresholded logits (decision at 0)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise DimensionError(
            f"multilabel_accuracy: {logits.shape} logits vs {labels.shape} labels")
    return float(np.mean((logits > 0.0) == (labels > 0.5)))


def overlap_eval(scores, labels_b, space_a: LabelSpace, space_b: LabelSpace,
                 name_map: Sequence[tuple[str, str]]) -> MetricReport:
    """mAP of a model trained on label space A, scored against labels from
    space B, restricted to the name-mapped shared classes. No retraining is
    involved; the model's score columns are simply re-indexed.

    ``name_map`` pairs (name in A, name in B). Report entries are keyed by
    the A-side names.
    """
    if not name_map:
        raise ValidationError("overlap_eval: empty label mapping")
    scores = np.asarray(scores, dtype=np.float64)
    labels_b = np.asarray(labels_b, dtype=np.float64)
    if scores.shape[1] != space_a.n_classes:
        raise DimensionError(
            f"overlap_eval: {scores.shape[1]} score columns vs "
            f"{space_a.n_classes} classes in the model's label space")
    if labels_b.shape[1] != space_b.n_classes:
        raise DimensionError(
            f"overlap_eval: {labels_b.shape[1]} label columns vs "
            f"{space_b.n_classes} classes in the evaluation label space")
    cols_a = [space_a.index(a) for a, _ in name_map]
    cols_b = [space_b.index(b) for _, b in name_map]
    sub_scores = scores[:, cols_a]
    sub_labels = labels_b[:, cols_b]
    return mean_average_precision(sub_scores, sub_labels,
                                  names=[a for a, _ in name_map])
