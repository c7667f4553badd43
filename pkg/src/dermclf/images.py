"""Image decoding and flip-based augmentation.

Augmentation follows the training recipe: per sample, one of
{identity, horizontal flip, vertical flip, both} is chosen uniformly from
a seeded generator, so every epoch keeps some undistorted samples and a
fixed seed reproduces the exact augmentation sequence.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np
from PIL import Image

from .data import Dataset, ImageRecord
from .errors import DecodeError

# augmentation variant codes
IDENTITY, HFLIP, VFLIP, HVFLIP = 0, 1, 2, 3
NUM_VARIANTS = 4

_DECODE_CACHE_BUDGET_BYTES = 128 * 1024 * 1024


class _ByteBudgetLRU:
    """LRU keyed by path, capped by total decoded bytes rather than entries."""

    def __init__(self, budget: int):
        self.budget = budget
        self._store: OrderedDict[str, np.ndarray] = OrderedDict()
        self._bytes = 0

    def get(self, key: str) -> np.ndarray | None:
        arr = self._store.get(key)
        if arr is not None:
            self._store.move_to_end(key)
        return arr

    def put(self, key: str, arr: np.ndarray) -> None:
        if arr.nbytes > self.budget // 4:
            return  # single huge image: not worth evicting everything else
        if key in self._store:
            self._bytes -= self._store.pop(key).nbytes
        self._store[key] = arr
        self._bytes += arr.nbytes
        while self._bytes > self.budget:
            _, evicted = self._store.popitem(last=False)
            self._bytes -= evicted.nbytes

    def clear(self) -> None:
        self._store.clear()
        self._bytes = 0


_decode_cache = _ByteBudgetLRU(_DECODE_CACHE_BUDGET_BYTES)


def clear_decode_cache() -> None:
    _decode_cache.clear()


def decode_image(record: ImageRecord) -> np.ndarray:
    """Decode a record's image file to an HxWx3 uint8 RGB array.

    Decoded arrays are cached (LRU by byte budget) since training revisits
    every image each epoch. The returned array must not be mutated.
    """
    if record.image_path is None:
        raise DecodeError(record.image_id, "<no path>", None)
    key = str(record.image_path)
    cached = _decode_cache.get(key)
    if cached is not None:
        return cached
    try:
        with Image.open(record.image_path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DecodeError(record.image_id, key, exc) from exc
    arr.setflags(write=False)
    _decode_cache.put(key, arr)
    return arr


def _check_grid(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim not in (2, 3) or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected a non-empty HxW or HxWxC pixel grid, got shape {img.shape}")
    return img


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    """Mirror columns: pixel (r, c) -> (r, W-1-c)."""
    img = _check_grid(img)
    return img[:, ::-1].copy()


def flip_vertical(img: np.ndarray) -> np.ndarray:
    """Mirror rows: pixel (r, c) -> (H-1-r, c)."""
    img = _check_grid(img)
    return img[::-1, :].copy()


def apply_variant(img: np.ndarray, variant: int) -> np.ndarray:
    if variant == IDENTITY:
        return img
    if variant == HFLIP:
        return flip_horizontal(img)
    if variant == VFLIP:
        return flip_vertical(img)
    if variant == HVFLIP:
        return flip_vertical(flip_horizontal(img))
    raise ValueError(f"unknown augmentation variant {variant}")


def augmentation_choices(n: int, seed: int) -> np.ndarray:
    """n iid uniform draws over the 4 flip variants, reproducible from seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    return rng.integers(0, NUM_VARIANTS, size=n)


def augmented_stream(ds: Dataset, seed: int) -> Iterator[tuple[np.ndarray, int]]:
    """One augmented pass over a labeled dataset, in dataset order.

    Yields (pixel grid, label) pairs; labels pass through unchanged.
    Deterministic for a fixed (ds, seed).
    """
    variants = augmentation_choices(len(ds.records), seed)
    for rec, variant in zip(ds.records, variants):
        if rec.label is None:
            raise ValueError(f"augmented_stream needs labeled records; {rec.image_id!r} has none")
        yield apply_variant(decode_image(rec), int(variant)), rec.label
