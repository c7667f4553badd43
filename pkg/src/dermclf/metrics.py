"""Confusion matrices and balanced multi-class accuracy.

Balanced accuracy is the mean of per-class recalls, the standard reading
of the ISIC challenge's "normalized multi-class accuracy" scoring. Classes
with zero support are excluded from the mean (and listed in the report)
rather than counted as recall 0, so scoring a subset lacking a class is
not penalized for it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import AlignmentError, EmptyEvaluationError
from .labels import LabelSpace


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K integer counts; rows index the true class, columns the predicted."""

    counts: np.ndarray
    label_space: LabelSpace

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        k = self.label_space.num_classes
        if counts.shape != (k, k):
            raise ValueError(f"confusion matrix must be {k}x{k}, got {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("confusion matrix entries must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricReport:
    per_class_recall: np.ndarray  # NaN for excluded (zero-support) classes
    balanced_accuracy: float
    plain_accuracy: float
    support: np.ndarray
    excluded_classes: tuple[str, ...]
    label_space: LabelSpace

    def to_json_dict(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "plain_accuracy": self.plain_accuracy,
            "per_class": [
                {
                    "code": code,
                    "name": name,
                    "support": int(self.support[i]),
                    "recall": None if np.isnan(self.per_class_recall[i]) else float(self.per_class_recall[i]),
                }
                for i, (code, name) in enumerate(
                    zip(self.label_space.codes, self.label_space.display_names)
                )
            ],
            "excluded_classes": list(self.excluded_classes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def to_table(self) -> str:
        name_width = max(len(n) for n in self.label_space.display_names)
        lines = [f"{'class':<8}{'name':<{name_width + 2}}{'support':>8}{'recall':>10}"]
        for i, (code, name) in enumerate(
            zip(self.label_space.codes, self.label_space.display_names)
        ):
            recall = self.per_class_recall[i]
            recall_str = "excluded" if np.isnan(recall) else f"{recall:.4f}"
            lines.append(f"{code:<8}{name:<{name_width + 2}}{int(self.support[i]):>8}{recall_str:>10}")
        lines.append("")
        lines.append(f"balanced accuracy: {self.balanced_accuracy:.4f}")
        lines.append(f"plain accuracy:    {self.plain_accuracy:.4f}")
        if self.excluded_classes:
            lines.append(f"excluded (zero support): {', '.join(self.excluded_classes)}")
        return "\n".join(lines)


def build_confusion(
    truth: Mapping[str, int], predicted: Mapping[str, int], label_space: LabelSpace
) -> ConfusionMatrix:
    """Count (true, predicted) pairs over identical image-id key sets."""
    truth_ids, pred_ids = set(truth), set(predicted)
    if truth_ids != pred_ids:
        raise AlignmentError(
            "truth and prediction image ids differ",
            only_left=truth_ids - pred_ids,
            only_right=pred_ids - truth_ids,
        )
    k = label_space.num_classes
    counts = np.zeros((k, k), dtype=np.int64)
    for image_id, t in truth.items():
        p = predicted[image_id]
        counts[t, p] += 1
    return ConfusionMatrix(counts=counts, label_space=label_space)


def balanced_accuracy(cm: ConfusionMatrix) -> MetricReport:
    """Mean per-class recall over classes with support, plus plain accuracy."""
    counts = cm.counts
    if counts.sum() == 0:
        raise EmptyEvaluationError("confusion matrix has no counts; nothing to score")
    support = counts.sum(axis=1)
    k = cm.label_space.num_classes
    recall = np.full(k, np.nan)
    present = support > 0
    recall[present] = counts.diagonal()[present] / support[present]
    bal_acc = float(recall[present].mean())
    plain_acc = float(counts.diagonal().sum() / counts.sum())
    excluded = tuple(code for i, code in enumerate(cm.label_space.codes) if not present[i])
    return MetricReport(
        per_class_recall=recall,
        balanced_accuracy=bal_acc,
        plain_accuracy=plain_acc,
        support=support,
        excluded_classes=excluded,
        label_space=cm.label_space,
    )


def score_files(truth_csv, prediction_csv) -> MetricReport:
    """Score a probability CSV against a one-hot ground-truth CSV.

    The scorer takes the argmax of each prediction row itself (lowest
    class index wins exact ties), so tie-breaking lives in one place.
    Both files must cover identical image-id sets and share a header.
    """
    from .data import parse_ground_truth
    from .ensemble import decide_labels, read_prediction_csv

    truth_ds = parse_ground_truth(truth_csv, image_dir=None, label_space=None)
    predictions = read_prediction_csv(prediction_csv, label_space=None)
    if predictions.label_space.codes != truth_ds.label_space.codes:
        raise AlignmentError(
            "truth and prediction label spaces differ",
            only_left=set(truth_ds.label_space.codes) - set(predictions.label_space.codes),
            only_right=set(predictions.label_space.codes) - set(truth_ds.label_space.codes),
        )
    truth_labels = {rec.image_id: rec.label for rec in truth_ds.records}
    decided = decide_labels(predictions)
    cm = build_confusion(truth_labels, decided, truth_ds.label_space)
    return balanced_accuracy(cm)
