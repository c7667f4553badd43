"""Ground-truth ingestion and reproducible stratified splitting.

The on-disk interchange format is the ISIC 2018 task-3 ground-truth CSV:
a header ``image,MEL,NV,BCC,AKIEC,BKL,DF,VASC`` followed by rows of an
image id and seven one-hot floats. Smaller label spaces use the same
layout with their own code columns.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterable, Union

import numpy as np

from .errors import FormatError, LabelError, MissingImagesError, SplitError
from .labels import DERMOSCOPY_LABELS, LabelSpace

CsvSource = Union[str, Path, IO[str], IO[bytes], bytes]

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")


@dataclass(frozen=True)
class ImageRecord:
    """One dermoscopy image: id (file stem), optional path, optional label index."""

    image_id: str
    image_path: Path | None = None
    label: int | None = None


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of records over a fixed label space."""

    records: tuple[ImageRecord, ...]
    label_space: LabelSpace

    def __post_init__(self):
        seen: set[str] = set()
        for rec in self.records:
            if not rec.image_id:
                raise FormatError("record with empty image_id")
            if rec.image_id in seen:
                raise FormatError(f"duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)
            if rec.label is not None and not (0 <= rec.label < self.label_space.num_classes):
                raise LabelError(
                    f"record {rec.image_id!r} has label {rec.label} outside "
                    f"0..{self.label_space.num_classes - 1}"
                )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def class_counts(self) -> list[int]:
        counts = [0] * self.label_space.num_classes
        for rec in self.records:
            if rec.label is not None:
                counts[rec.label] += 1
        return counts

    @property
    def image_ids(self) -> list[str]:
        return [rec.image_id for rec in self.records]

    def subset(self, image_ids: Iterable[str]) -> "Dataset":
        """Records whose id is in ``image_ids``, preserving dataset order."""
        wanted = set(image_ids)
        unknown = wanted - set(self.image_ids)
        if unknown:
            raise KeyError(f"ids not in dataset: {sorted(unknown)[:10]}")
        return Dataset(
            records=tuple(r for r in self.records if r.image_id in wanted),
            label_space=self.label_space,
        )


@dataclass(frozen=True)
class SplitResult:
    """A disjoint train/validation partition of a labeled dataset."""

    train: Dataset
    validation: Dataset
    seed: int
    fraction: float


def _open_csv(source: CsvSource) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _resolve_image_path(image_dir: Path, image_id: str) -> Path | None:
    for ext in IMAGE_EXTENSIONS:
        candidate = image_dir / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    return None


def infer_label_space(header: list[str]) -> LabelSpace:
    """Label space implied by a one-hot CSV header (``image`` + code columns)."""
    if len(header) < 3 or header[0] != "image":
        raise FormatError(
            f"cannot infer label space from header {header!r}: expected 'image' plus class columns"
        )
    codes = tuple(header[1:])
    if codes == DERMOSCOPY_LABELS.codes:
        return DERMOSCOPY_LABELS
    return LabelSpace(codes=codes)


def parse_ground_truth(
    csv_source: CsvSource,
    image_dir: str | Path | None,
    label_space: LabelSpace | None = DERMOSCOPY_LABELS,
) -> Dataset:
    """Parse a one-hot ground-truth CSV into a labeled Dataset.

    When ``image_dir`` is given, every row must have a matching image file
    (``<id>.jpg`` / ``.jpeg`` / ``.png``); missing files are collected and
    reported together. Pass ``image_dir=None`` for label-only uses such as
    scoring. ``label_space=None`` infers the space from the header.

    Raises FormatError / LabelError / MissingImagesError per failure mode.
    """
    stream = _open_csv(csv_source)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty CSV: no header row") from None

    header = [cell.strip() for cell in header]
    if label_space is None:
        label_space = infer_label_space(header)
    expected = label_space.csv_header()
    if len(header) != len(expected):
        raise FormatError(
            f"header has {len(header)} columns, expected {len(expected)} ({','.join(expected)})"
        )
    for i, (got, want) in enumerate(zip(header, expected)):
        if got != want:
            raise FormatError(f"header column {i} is {got!r}, expected {want!r}")

    k = label_space.num_classes
    records: list[ImageRecord] = []
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue  # tolerate trailing blank line
        if len(row) != k + 1:
            raise FormatError(f"row {line_no}: has {len(row)} fields, expected {k + 1}")
        image_id = row[0].strip()
        if not image_id:
            raise FormatError(f"row {line_no}: empty image id")
        try:
            values = [float(cell) for cell in row[1:]]
        except ValueError as exc:
            raise LabelError(f"row {line_no} ({image_id}): non-numeric label cell: {exc}") from None
        if any(v not in (0.0, 1.0) for v in values):
            raise LabelError(
                f"row {line_no} ({image_id}): label cells must be 0.0 or 1.0, got {row[1:]}"
            )
        ones = [i for i, v in enumerate(values) if v == 1.0]
        if len(ones) != 1:
            raise LabelError(
                f"row {line_no} ({image_id}): expected exactly one 1.0 among label cells, "
                f"found {len(ones)}"
            )
        records.append(ImageRecord(image_id=image_id, label=ones[0]))

    if image_dir is not None:
        image_dir = Path(image_dir)
        resolved: list[ImageRecord] = []
        missing: list[str] = []
        for rec in records:
            path = _resolve_image_path(image_dir, rec.image_id)
            if path is None:
                missing.append(rec.image_id)
            else:
                resolved.append(ImageRecord(rec.image_id, path, rec.label))
        if missing:
            raise MissingImagesError(missing, str(image_dir))
        records = resolved

    return Dataset(records=tuple(records), label_space=label_space)


def write_ground_truth(ds: Dataset, path: str | Path) -> None:
    """Serialize a labeled dataset back to the one-hot CSV format."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(ds.label_space.csv_header()) + "\n")
        for rec in ds.records:
            if rec.label is None:
                raise LabelError(f"record {rec.image_id!r} is unlabeled; cannot one-hot encode")
            cells = ["1.0" if i == rec.label else "0.0" for i in range(ds.label_space.num_classes)]
            f.write(f"{rec.image_id}," + ",".join(cells) + "\n")


def records_from_image_dir(image_dir: str | Path, label_space: LabelSpace) -> Dataset:
    """Unlabeled dataset from every image file directly under ``image_dir``."""
    image_dir = Path(image_dir)
    stems: dict[str, Path] = {}
    for path in sorted(image_dir.iterdir()):
        if path.suffix.lower() in IMAGE_EXTENSIONS and path.stem not in stems:
            stems[path.stem] = path
    records = tuple(ImageRecord(stem, path) for stem, path in stems.items())
    return Dataset(records=records, label_space=label_space)


def validation_count(class_count: int, fraction: float) -> int:
    """Per-class validation size: max(1, round-half-up(fraction * count)).

    Computed in exact rational arithmetic so the rounding boundary is
    unambiguous for any float fraction.
    """
    frac = Fraction(fraction)
    return max(1, math.floor(frac * class_count + Fraction(1, 2)))


def stratified_split(ds: Dataset, fraction: float, seed: int) -> SplitResult:
    """Deterministic per-class validation split.

    Each class contributes max(1, round-half-up(fraction * class_count))
    records to validation, chosen by a per-class RNG expanded from the
    top-level seed. Classes absent from the dataset are skipped; a class
    with a single record cannot be split and raises SplitError.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")

    by_class: dict[int, list[str]] = {}
    for rec in ds.records:
        if rec.label is None:
            raise LabelError(f"cannot split unlabeled record {rec.image_id!r}")
        by_class.setdefault(rec.label, []).append(rec.image_id)

    validation_ids: set[str] = set()
    for label, ids in sorted(by_class.items()):
        if len(ids) < 2:
            code = ds.label_space.codes[label]
            raise SplitError(f"class {code!r} has {len(ids)} record(s); need at least 2 to split")
        n_val = validation_count(len(ids), fraction)
        # sort before shuffling so the choice depends only on the id set
        ordered = sorted(ids)
        rng = np.random.default_rng(np.random.SeedSequence([seed, label]))
        rng.shuffle(ordered)
        validation_ids.update(ordered[:n_val])

    train_records = tuple(r for r in ds.records if r.image_id not in validation_ids)
    val_records = tuple(r for r in ds.records if r.image_id in validation_ids)
    return SplitResult(
        train=Dataset(train_records, ds.label_space),
        validation=Dataset(val_records, ds.label_space),
        seed=seed,
        fraction=fraction,
    )


def write_split_manifest(split: SplitResult, path: str | Path) -> None:
    """Emit the ``image,subset`` manifest, rows sorted by image id."""
    subset_of = {rec.image_id: "train" for rec in split.train.records}
    subset_of.update({rec.image_id: "validation" for rec in split.validation.records})
    ordered = list(split.train.records) + list(split.validation.records)
    ordered.sort(key=lambda r: r.image_id)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("image,subset\n")
        for rec in ordered:
            f.write(f"{rec.image_id},{subset_of[rec.image_id]}\n")


def read_split_manifest(path: str | Path) -> dict[str, str]:
    """Read an ``image,subset`` manifest into an id -> subset map."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["image", "subset"]:
            raise FormatError(f"split manifest {path}: expected header 'image,subset', got {header}")
        out: dict[str, str] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2 or row[1] not in ("train", "validation"):
                raise FormatError(f"split manifest {path} row {line_no}: malformed row {row}")
            out[row[0]] = row[1]
        return out


def apply_split_manifest(ds: Dataset, manifest: dict[str, str]) -> SplitResult:
    """Reconstruct a SplitResult from a dataset plus a manifest map."""
    train_ids = {i for i, s in manifest.items() if s == "train"}
    val_ids = {i for i, s in manifest.items() if s == "validation"}
    train = ds.subset(train_ids)
    validation = ds.subset(val_ids)
    return SplitResult(train=train, validation=validation, seed=-1, fraction=float("nan"))
