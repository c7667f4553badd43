"""Exception types raised by the pipeline.

Each error class corresponds to a distinct failure mode callers may want to
catch separately (bad file format vs. missing images vs. numerical
divergence, etc.). All inherit from DermclfError.
"""

from __future__ import annotations


class DermclfError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(DermclfError):
    """A CSV file does not match the expected header/row layout."""


class LabelError(FormatError):
    """A ground-truth row does not one-hot encode a class label."""


class MissingImagesError(DermclfError):
    """Ground-truth rows reference image files that do not exist."""

    def __init__(self, image_ids: list[str], image_dir: str):
        self.image_ids = list(image_ids)
        self.image_dir = image_dir
        shown = ", ".join(self.image_ids[:20])
        more = "" if len(self.image_ids) <= 20 else f" (+{len(self.image_ids) - 20} more)"
        super().__init__(
            f"{len(self.image_ids)} image file(s) missing under {image_dir}: {shown}{more}"
        )


class SplitError(DermclfError):
    """A class cannot be stratified (fewer than 2 records)."""


class DegenerateClassError(DermclfError):
    """A class count of zero makes inverse-frequency weights undefined."""


class DecodeError(DermclfError):
    """An image file exists but cannot be decoded."""

    def __init__(self, image_id: str, path: str, cause: Exception | None = None):
        self.image_id = image_id
        self.path = path
        msg = f"cannot decode image {image_id!r} at {path}"
        if cause is not None:
            msg += f": {cause}"
        super().__init__(msg)


class AlignmentError(DermclfError):
    """Two keyed collections that must cover the same image ids do not."""

    def __init__(self, message: str, only_left: set[str], only_right: set[str]):
        self.only_left = set(only_left)
        self.only_right = set(only_right)

        def _show(ids: set[str]) -> str:
            shown = ", ".join(sorted(ids)[:10])
            more = "" if len(ids) <= 10 else f" (+{len(ids) - 10} more)"
            return shown + more

        super().__init__(
            f"{message}: {len(only_left)} id(s) only on one side [{_show(only_left)}], "
            f"{len(only_right)} only on the other [{_show(only_right)}]"
        )


class WeightsUnavailableError(DermclfError):
    """Pretrained weights for a backbone could not be found or fetched."""

    def __init__(self, backbone: str, source: str, detail: str = ""):
        self.backbone = backbone
        self.source = source
        msg = f"pretrained weights for backbone {backbone!r} unavailable (expected source: {source})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class CheckpointIntegrityError(DermclfError):
    """A checkpoint file is corrupt, truncated, or written for another model."""


class DivergenceError(DermclfError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch_logs: list | None = None):
        self.epoch_logs = list(epoch_logs or [])
        super().__init__(message)


class EmptyEvaluationError(DermclfError):
    """A confusion matrix with no counts cannot be scored."""


class UndecodableImagesError(DermclfError):
    """A prediction run hit images that could not be decoded."""

    def __init__(self, image_ids: list[str]):
        self.image_ids = list(image_ids)
        shown = ", ".join(self.image_ids[:20])
        more = "" if len(self.image_ids) <= 20 else f" (+{len(self.image_ids) - 20} more)"
        super().__init__(
            f"{len(self.image_ids)} image(s) could not be decoded: {shown}{more} "
            "(pass skip_undecodable to predict without them)"
        )
