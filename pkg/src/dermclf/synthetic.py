"""Desk-scale synthetic dataset: small color-separable images.

Three classes, each dominated by one hue, with per-image brightness
jitter, a brighter lesion-like disk, and pixel noise. Class identity
rides on color alone, so flips are label-preserving and a tiny network
can separate the classes — which is exactly what an end-to-end pipeline
test needs. Counts follow a 10:3:1 imbalance so the weighted loss has
something to correct.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .data import Dataset, ImageRecord, write_ground_truth
from .labels import LabelSpace

SYNTHETIC_LABELS = LabelSpace(codes=("RED", "GREEN", "BLUE"))

_BASE_COLORS = {
    "RED": (170, 60, 60),
    "GREEN": (60, 170, 60),
    "BLUE": (60, 60, 170),
}

DEFAULT_TOTAL = 600
DEFAULT_RATIOS = (10, 3, 1)
DEFAULT_SIZE = 64


def apportion(total: int, ratios: Sequence[int]) -> list[int]:
    """Largest-remainder split of ``total`` into integer counts by ratio."""
    if total < len(ratios) or any(r <= 0 for r in ratios):
        raise ValueError(f"cannot apportion {total} over ratios {ratios}")
    denom = sum(ratios)
    counts = [total * r // denom for r in ratios]
    remainders = [total * r % denom for r in ratios]
    for i in sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _render_image(rng: np.random.Generator, label: int, size: int) -> np.ndarray:
    base = np.array(_BASE_COLORS[SYNTHETIC_LABELS.codes[label]], dtype=np.float64)
    brightness = rng.uniform(0.7, 1.3)
    img = np.tile(base * brightness, (size, size, 1))

    # lesion-like brighter disk at a random position
    cy, cx = rng.uniform(size * 0.25, size * 0.75, size=2)
    radius = rng.uniform(size * 0.12, size * 0.3)
    yy, xx = np.mgrid[0:size, 0:size]
    disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    img[disk] *= 1.35

    img += rng.normal(0.0, 20.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_synthetic_dataset(
    out_dir: str | Path,
    seed: int,
    total: int = DEFAULT_TOTAL,
    ratios: Sequence[int] = DEFAULT_RATIOS,
    size: int = DEFAULT_SIZE,
) -> Dataset:
    """Write ``<out_dir>/images/*.png`` plus ``<out_dir>/ground_truth.csv``.

    Deterministic for a fixed seed. Returns the written dataset.
    """
    if len(ratios) != SYNTHETIC_LABELS.num_classes:
        raise ValueError(f"need {SYNTHETIC_LABELS.num_classes} ratios, got {ratios}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    counts = apportion(total, ratios)
    labels = np.repeat(np.arange(len(counts)), counts)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    rng.shuffle(labels)

    records = []
    for i, label in enumerate(labels):
        image_id = f"SYN_{i:06d}"
        path = image_dir / f"{image_id}.png"
        Image.fromarray(_render_image(rng, int(label), size)).save(path)
        records.append(ImageRecord(image_id=image_id, image_path=path, label=int(label)))

    ds = Dataset(records=tuple(records), label_space=SYNTHETIC_LABELS)
    write_ground_truth(ds, out_dir / "ground_truth.csv")
    return ds
