"""Inverse-frequency class weights and weighted cross-entropy.

The weighting compensates for class imbalance: w_c = N / (K * n_c), which
normalizes the mean per-sample weight to exactly 1 so the effective
learning rate stays comparable to an unweighted run. The loss value and
its gradient with respect to the logits are closed-form (softmax
cross-entropy), stabilized by max-logit subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateClassError
from .labels import LabelSpace


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss multipliers, all positive.

    When built from counts (compute_class_weights / uniform), the weighted
    mean per-sample weight is 1 by construction. Explicit user-supplied
    weights carry no counts and skip that invariant.
    """

    weights: np.ndarray
    source_counts: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 2:
            raise ValueError(f"weights must be a 1-D vector of >= 2 entries, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("all class weights must be finite and > 0")
        if self.source_counts is not None:
            counts = np.asarray(self.source_counts, dtype=np.int64)
            object.__setattr__(self, "source_counts", counts)
            if counts.shape != w.shape:
                raise ValueError("source_counts must align with weights")

    @property
    def num_classes(self) -> int:
        return int(self.weights.size)

    @classmethod
    def uniform(cls, num_classes: int) -> "ClassWeights":
        return cls(weights=np.ones(num_classes))

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "ClassWeights":
        return cls(weights=np.asarray(values, dtype=np.float64))


def compute_class_weights(
    class_counts: Sequence[int], label_space: LabelSpace | None = None
) -> ClassWeights:
    """w_c = N / (K * n_c) from per-class training counts.

    Every count must be >= 1; a zero count makes the inverse frequency
    undefined and raises DegenerateClassError naming the class.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size < 2:
        raise ValueError(f"class_counts must be a 1-D vector of >= 2 entries, got {class_counts}")
    if np.any(counts < 1):
        bad = int(np.argmin(counts))
        name = label_space.codes[bad] if label_space is not None else f"class {bad}"
        raise DegenerateClassError(
            f"{name} has count {int(counts[bad])}; inverse-frequency weights need every count >= 1"
        )
    n_total = int(counts.sum())
    k = counts.size
    weights = n_total / (k * counts.astype(np.float64))
    return ClassWeights(weights=weights, source_counts=counts)


@dataclass(frozen=True)
class LossValue:
    """A scalar loss plus its gradient with respect to the input logits.

    gradient shape is (K,) for a single sample, (B, K) for a batch.
    """

    value: float
    gradient: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise ValueError(f"loss value must be finite and >= 0, got {self.value}")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("loss gradient has non-finite entries")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max-logit subtraction (no overflow)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_cross_entropy(
    logits: Sequence[float], true_class: int, class_weights: ClassWeights
) -> LossValue:
    """-w[y] * log softmax(logits)[y] and its gradient w[y] * (softmax - onehot)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size != class_weights.num_classes:
        raise ValueError(
            f"logits must be a length-{class_weights.num_classes} vector, got shape {logits.shape}"
        )
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite entries")
    if not (0 <= true_class < logits.size):
        raise ValueError(f"true_class {true_class} outside 0..{logits.size - 1}")

    log_probs = log_softmax(logits)
    w = float(class_weights.weights[true_class])
    value = -w * log_probs[true_class]
    probs = np.exp(log_probs)
    gradient = w * probs
    gradient[true_class] -= w
    # -w*log p is nonnegative mathematically; clamp the p=1 rounding case
    return LossValue(value=max(value, 0.0), gradient=gradient)


def batch_loss(
    samples: Sequence[tuple[Sequence[float], int]], class_weights: ClassWeights
) -> LossValue:
    """Mean of per-sample weighted losses; gradient scaled by 1/batch size."""
    if len(samples) == 0:
        raise ValueError("batch_loss needs a non-empty batch")
    per_sample = [weighted_cross_entropy(logits, y, class_weights) for logits, y in samples]
    n = len(per_sample)
    value = sum(s.value for s in per_sample) / n
    gradient = np.stack([s.gradient for s in per_sample]) / n
    return LossValue(value=value, gradient=gradient)
