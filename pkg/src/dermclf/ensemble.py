"""Prediction sets and their combination into ensemble decisions.

Two combiners: soft averaging of member probability vectors (the default)
and hard majority voting over member argmax labels. Both are permutation
invariant over members; argmax ties always break to the lowest class
index so decisions are reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import CsvSource, _open_csv, infer_label_space
from .errors import AlignmentError, FormatError
from .labels import LabelSpace

SOFT_AVERAGE = "soft_average"
MAJORITY_VOTE = "majority_vote"
COMBINERS = (SOFT_AVERAGE, MAJORITY_VOTE)

# freshly computed vectors must sum to 1 within this
PROB_SUM_TOL = 1e-6
# vectors re-read from a 6-decimal CSV accumulate K rounding errors
PROB_SUM_TOL_PARSED = 1e-4


def validate_probability_vector(p: np.ndarray, k: int, tol: float = PROB_SUM_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (k,):
        raise ValueError(f"probability vector must have shape ({k},), got {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"probabilities must be finite and >= 0, got {p}")
    if abs(float(p.sum()) - 1.0) > tol:
        raise ValueError(f"probabilities must sum to 1 +/- {tol}, got sum {p.sum()!r}")
    return p


@dataclass(frozen=True)
class PredictionSet:
    """Per-image class-probability vectors from one model (or one ensemble)."""

    model_id: str
    label_space: LabelSpace
    rows: dict[str, np.ndarray]

    def __post_init__(self):
        k = self.label_space.num_classes
        for image_id, p in self.rows.items():
            self.rows[image_id] = validate_probability_vector(p, k, tol=PROB_SUM_TOL_PARSED)

    def __len__(self) -> int:
        return len(self.rows)


def _common_ids(sets: Sequence[PredictionSet]) -> list[str]:
    if not sets:
        raise ValueError("need at least one prediction set")
    first = sets[0]
    for other in sets[1:]:
        if other.label_space.codes != first.label_space.codes:
            raise ValueError(
                f"member label spaces differ: {first.label_space.codes} vs {other.label_space.codes}"
            )
        if set(other.rows) != set(first.rows):
            raise AlignmentError(
                f"members {first.model_id!r} and {other.model_id!r} cover different images",
                only_left=set(first.rows) - set(other.rows),
                only_right=set(other.rows) - set(first.rows),
            )
    return sorted(first.rows)


def combine_soft(sets: Sequence[PredictionSet]) -> PredictionSet:
    """Per image, the arithmetic mean of member probability vectors."""
    ids = _common_ids(sets)
    rows = {i: np.mean([s.rows[i] for s in sets], axis=0) for i in ids}
    member_ids = ",".join(sorted(s.model_id for s in sets))
    return PredictionSet(
        model_id=f"{SOFT_AVERAGE}({member_ids})", label_space=sets[0].label_space, rows=rows
    )


def combine_majority(sets: Sequence[PredictionSet]) -> PredictionSet:
    """Per image, each member votes for its argmax; output = vote fractions.

    Ties inside a member break to the lowest class index; ties between
    vote counts are resolved downstream by decide_labels (same rule).
    """
    ids = _common_ids(sets)
    k = sets[0].label_space.num_classes
    rows: dict[str, np.ndarray] = {}
    for i in ids:
        votes = np.zeros(k, dtype=np.float64)
        for s in sets:
            votes[int(np.argmax(s.rows[i]))] += 1.0
        rows[i] = votes / len(sets)
    member_ids = ",".join(sorted(s.model_id for s in sets))
    return PredictionSet(
        model_id=f"{MAJORITY_VOTE}({member_ids})", label_space=sets[0].label_space, rows=rows
    )


def combine(sets: Sequence[PredictionSet], combiner: str) -> PredictionSet:
    if combiner == SOFT_AVERAGE:
        return combine_soft(sets)
    if combiner == MAJORITY_VOTE:
        return combine_majority(sets)
    raise ValueError(f"unknown combiner {combiner!r}; choose from {COMBINERS}")


def decide_labels(ps: PredictionSet) -> dict[str, int]:
    """argmax per image; exact ties break to the lowest class index."""
    return {image_id: int(np.argmax(p)) for image_id, p in ps.rows.items()}


def write_prediction_csv(ps: PredictionSet, path: str | Path) -> None:
    """Emit the submission format: header + rows of id and 6-decimal probabilities."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(ps.label_space.csv_header()) + "\n")
        for image_id in sorted(ps.rows):
            cells = [f"{v:.6f}" for v in ps.rows[image_id]]
            f.write(f"{image_id}," + ",".join(cells) + "\n")


def read_prediction_csv(
    source: CsvSource,
    label_space: LabelSpace | None = None,
    model_id: str | None = None,
) -> PredictionSet:
    """Parse a probability CSV; ``label_space=None`` infers it from the header."""
    stream = _open_csv(source)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise FormatError("empty prediction CSV: no header row")
    header = [cell.strip() for cell in header]
    if label_space is None:
        label_space = infer_label_space(header)
    expected = label_space.csv_header()
    if header != expected:
        raise FormatError(f"prediction header {header!r} does not match {expected!r}")
    k = label_space.num_classes
    rows: dict[str, np.ndarray] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != k + 1:
            raise FormatError(f"prediction row {line_no}: {len(row)} fields, expected {k + 1}")
        image_id = row[0].strip()
        if not image_id:
            raise FormatError(f"prediction row {line_no}: empty image id")
        if image_id in rows:
            raise FormatError(f"prediction row {line_no}: duplicate image id {image_id!r}")
        try:
            p = np.array([float(cell) for cell in row[1:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"prediction row {line_no} ({image_id}): {exc}") from None
        rows[image_id] = p
    name = model_id if model_id is not None else str(source)
    try:
        return PredictionSet(model_id=name, label_space=label_space, rows=rows)
    except ValueError as exc:
        raise FormatError(f"prediction CSV {name}: {exc}") from None


def predictions_from_mapping(
    model_id: str, label_space: LabelSpace, rows: Mapping[str, Sequence[float]]
) -> PredictionSet:
    return PredictionSet(
        model_id=model_id,
        label_space=label_space,
        rows={i: np.asarray(p, dtype=np.float64) for i, p in rows.items()},
    )
