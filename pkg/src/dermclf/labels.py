"""Class taxonomy shared by every stage of the pipeline.

A LabelSpace fixes the class codes and their order once; CSV columns,
probability-vector indices, and confusion-matrix axes all use the same
ordering. The canonical instance is the 7-class dermoscopy taxonomy of the
ISIC 2018 task-3 ground truth (DERMOSCOPY_LABELS); smaller spaces are
supported for synthetic/desk-scale data.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class LabelSpace:
    """An ordered, immutable set of class codes with display names."""

    codes: tuple[str, ...]
    display_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.codes) < 2:
            raise ValueError(f"a label space needs at least 2 classes, got {len(self.codes)}")
        if len(set(self.codes)) != len(self.codes):
            raise ValueError(f"class codes must be unique, got {self.codes}")
        if not all(self.codes):
            raise ValueError("class codes must be non-empty strings")
        if not self.display_names:
            object.__setattr__(self, "display_names", self.codes)
        elif len(self.display_names) != len(self.codes):
            raise ValueError("display_names must match codes in length")

    @property
    def num_classes(self) -> int:
        return len(self.codes)

    def index_of(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise KeyError(f"unknown class code {code!r}; known: {self.codes}") from None

    def csv_header(self) -> list[str]:
        """Header cells of the one-hot ground-truth / probability CSV."""
        return ["image", *self.codes]


DERMOSCOPY_LABELS = LabelSpace(
    codes=("MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"),
    display_names=(
        "Melanoma",
        "Melanocytic nevus",
        "Basal cell carcinoma",
        "Actinic keratosis",
        "Benign keratosis",
        "Dermatofibroma",
        "Vascular",
    ),
)
