"""Shared fixtures: a tiny labeled image tree and a couple of label spaces."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from dermclf.data import Dataset, ImageRecord
from dermclf.labels import DERMOSCOPY_LABELS, LabelSpace

RGB3 = LabelSpace(codes=("RED", "GREEN", "BLUE"))


@pytest.fixture(scope="session")
def rgb3():
    return RGB3


@pytest.fixture(scope="session")
def derm7():
    return DERMOSCOPY_LABELS


def write_image(path, rng, size=32):
    arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
    return arr


@pytest.fixture
def tiny_tree(tmp_path):
    """12 small images on disk: 6 RED, 4 GREEN, 2 BLUE, plus the Dataset."""
    rng = np.random.default_rng(1234)
    image_dir = tmp_path / "images"
    image_dir.mkdir()
    labels = [0] * 6 + [1] * 4 + [2] * 2
    records = []
    for i, label in enumerate(labels):
        image_id = f"IMG_{i:04d}"
        path = image_dir / f"{image_id}.png"
        write_image(path, rng)
        records.append(ImageRecord(image_id, path, label))
    ds = Dataset(records=tuple(records), label_space=RGB3)
    return tmp_path, image_dir, ds


def one_hot_csv_text(label_space, rows):
    """rows: iterable of (image_id, class_index) -> CSV text."""
    lines = [",".join(label_space.csv_header())]
    for image_id, label in rows:
        cells = ["0.0"] * label_space.num_classes
        cells[label] = "1.0"
        lines.append(",".join([image_id, *cells]))
    return "\n".join(lines) + "\n"
