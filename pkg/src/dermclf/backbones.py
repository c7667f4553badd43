"""A uniform contract over the pretrained convolutional backbones.

Supported: ResNet-50 and DenseNet-121 (torchvision, ImageNet weights),
MobileNet v1 at width multiplier 1.0 (defined here; torchvision ships only
v2/v3), and a tiny seeded ``stub`` network with the identical contract so
the whole pipeline is testable at desk scale without any weight download.

Every model splits its parameters into exactly two groups: ``body`` (all
feature layers) and ``head`` (the final affine classifier). The head is
always trainable; the body can be frozen, which also pins its batch-norm
statistics.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image
from torch import nn

from .data import Dataset
from .ensemble import PredictionSet
from .errors import CheckpointIntegrityError, DecodeError, UndecodableImagesError, WeightsUnavailableError
from .images import decode_image

logger = logging.getLogger(__name__)

RESNET50 = "resnet50"
DENSENET121 = "densenet121"
MOBILENET = "mobilenet"
STUB = "stub"
BACKBONE_NAMES = (RESNET50, DENSENET121, MOBILENET, STUB)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

CHECKPOINT_FORMAT_VERSION = 1

MOBILENET_WEIGHTS_ENV = "DERMCLF_MOBILENET_V1_WEIGHTS"

# the stub's "bundled weights" are a fixed seeded initialization
_STUB_INIT_SEED = 0x5EED
_ORIGINAL_HEAD_CLASSES = 1000


@dataclass(frozen=True)
class BackboneSpec:
    """Name, native input resolution, and normalization of one backbone."""

    name: str
    input_resolution: tuple[int, int]
    normalization_mean: tuple[float, float, float]
    normalization_std: tuple[float, float, float]

    def __post_init__(self):
        if self.name not in BACKBONE_NAMES:
            raise ValueError(f"unknown backbone {self.name!r}; supported: {BACKBONE_NAMES}")
        if min(self.input_resolution) <= 0:
            raise ValueError(f"input resolution must be positive, got {self.input_resolution}")


BACKBONE_SPECS: dict[str, BackboneSpec] = {
    RESNET50: BackboneSpec(RESNET50, (224, 224), IMAGENET_MEAN, IMAGENET_STD),
    DENSENET121: BackboneSpec(DENSENET121, (224, 224), IMAGENET_MEAN, IMAGENET_STD),
    # MobileNet v1 pretrained releases expect inputs scaled to [-1, 1]
    MOBILENET: BackboneSpec(MOBILENET, (224, 224), (0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
    STUB: BackboneSpec(STUB, (64, 64), (0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
}


def get_backbone_spec(name: str) -> BackboneSpec:
    try:
        return BACKBONE_SPECS[name]
    except KeyError:
        raise ValueError(f"unknown backbone {name!r}; supported: {BACKBONE_NAMES}") from None


@dataclass
class AdaptedModel:
    """A backbone plus bookkeeping for its head/body split and freezing."""

    spec: BackboneSpec
    module: nn.Module
    head_attr: str
    head_classes: int
    trainable_groups: frozenset = field(default_factory=lambda: frozenset({"body", "head"}))

    @property
    def head(self) -> nn.Linear:
        return getattr(self.module, self.head_attr)

    def head_parameters(self) -> list[nn.Parameter]:
        return list(self.head.parameters())

    def body_parameters(self) -> list[nn.Parameter]:
        head_ids = {id(p) for p in self.head_parameters()}
        return [p for p in self.module.parameters() if id(p) not in head_ids]

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.module.parameters() if p.requires_grad]


# ---------------------------------------------------------------------------
# architectures


class _DepthwiseSeparable(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        self.depthwise = nn.Conv2d(in_ch, in_ch, 3, stride=stride, padding=1, groups=in_ch, bias=False)
        self.bn1 = nn.BatchNorm2d(in_ch)
        self.pointwise = nn.Conv2d(in_ch, out_ch, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        x = self.act(self.bn1(self.depthwise(x)))
        return self.act(self.bn2(self.pointwise(x)))


class MobileNetV1(nn.Module):
    """MobileNet v1, width multiplier 1.0: one standard conv then 13
    depthwise-separable blocks, global average pooling, affine classifier."""

    # (output channels, stride) per depthwise-separable block
    _BLOCKS = [
        (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
        (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1),
    ]

    def __init__(self, num_classes: int = _ORIGINAL_HEAD_CLASSES, width: float = 1.0):
        super().__init__()
        def ch(c: int) -> int:
            return max(8, int(c * width))

        layers: list[nn.Module] = [
            nn.Conv2d(3, ch(32), 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(ch(32)),
            nn.ReLU(inplace=True),
        ]
        in_ch = ch(32)
        for out_ch, stride in self._BLOCKS:
            layers.append(_DepthwiseSeparable(in_ch, ch(out_ch), stride))
            in_ch = ch(out_ch)
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(in_ch, num_classes)

    def forward(self, x):
        x = self.pool(self.features(x))
        return self.classifier(torch.flatten(x, 1))


class StubNet(nn.Module):
    """Two strided convolutions, pooled features, affine classifier.

    Small enough for CPU desk-scale runs while exercising the same
    head/body contract as the real backbones.
    """

    def __init__(self, num_classes: int = _ORIGINAL_HEAD_CLASSES):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(16, num_classes)

    def forward(self, x):
        x = self.pool(self.features(x))
        return self.classifier(torch.flatten(x, 1))


def _build_architecture(name: str) -> tuple[nn.Module, str]:
    """Construct the uninitialized-weights architecture and name its head attribute."""
    if name == RESNET50:
        from torchvision import models

        return models.resnet50(weights=None), "fc"
    if name == DENSENET121:
        from torchvision import models

        return models.densenet121(weights=None), "classifier"
    if name == MOBILENET:
        return MobileNetV1(), "classifier"
    if name == STUB:
        return StubNet(), "classifier"
    raise ValueError(f"unknown backbone {name!r}; supported: {BACKBONE_NAMES}")


def _torchvision_weights_enum(name: str):
    from torchvision import models

    if name == RESNET50:
        return models.ResNet50_Weights.IMAGENET1K_V1
    if name == DENSENET121:
        return models.DenseNet121_Weights.IMAGENET1K_V1
    raise ValueError(name)


def _cached_checkpoint_path(url: str) -> Path:
    hub_dir = Path(torch.hub.get_dir()) / "checkpoints"
    return hub_dir / url.rsplit("/", 1)[-1]


def load_untrained(spec: BackboneSpec, seed: int = 0) -> AdaptedModel:
    """The architecture with seeded random weights and its original head.

    Useful for contract tests and experiments that do not need transfer
    learning; load_pretrained is the production entry point.
    """
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module, head_attr = _build_architecture(spec.name)
    module.eval()
    return AdaptedModel(
        spec=spec, module=module, head_attr=head_attr, head_classes=_ORIGINAL_HEAD_CLASSES
    )


def load_pretrained(spec: BackboneSpec, allow_download: bool = True) -> AdaptedModel:
    """Load the backbone with its pretrained weights and original head.

    ResNet-50 and DenseNet-121 come from the torchvision ImageNet release
    (fetched into the torch hub cache unless already there). MobileNet v1
    has no official torch release; point $DERMCLF_MOBILENET_V1_WEIGHTS at a
    converted state-dict file. The stub's weights are its fixed seeded
    initialization, bundled by construction.

    Raises WeightsUnavailableError naming the backbone and expected source.
    """
    if spec.name == STUB:
        return load_untrained(spec, seed=_STUB_INIT_SEED)

    if spec.name == MOBILENET:
        weights_path = os.environ.get(MOBILENET_WEIGHTS_ENV, "")
        source = (
            f"a torch state-dict file named by ${MOBILENET_WEIGHTS_ENV} "
            "(no official torch release for MobileNet v1; convert the original checkpoint)"
        )
        if not weights_path or not Path(weights_path).exists():
            raise WeightsUnavailableError(spec.name, source)
        module, head_attr = _build_architecture(spec.name)
        try:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            module.load_state_dict(state)
        except (RuntimeError, ValueError, OSError, KeyError) as exc:
            raise WeightsUnavailableError(spec.name, source, str(exc)) from exc
        module.eval()
        return AdaptedModel(spec, module, head_attr, _ORIGINAL_HEAD_CLASSES)

    weights_enum = _torchvision_weights_enum(spec.name)
    url = weights_enum.url
    if not allow_download and not _cached_checkpoint_path(url).exists():
        raise WeightsUnavailableError(spec.name, url, "not in the torch hub cache and downloads disabled")
    module, head_attr = _build_architecture(spec.name)
    try:
        state = torch.hub.load_state_dict_from_url(url, progress=False, map_location="cpu")
    except Exception as exc:  # urllib raises a zoo of error types
        raise WeightsUnavailableError(spec.name, url, str(exc)) from exc
    module.load_state_dict(state)
    module.eval()
    return AdaptedModel(spec, module, head_attr, _ORIGINAL_HEAD_CLASSES)


# ---------------------------------------------------------------------------
# adaptation


def replace_head(model: AdaptedModel, num_classes: int, seed: int) -> AdaptedModel:
    """Swap the classifier for a fresh affine head with ``num_classes`` outputs.

    Initialization is uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) from the
    given seed, bias zero. Body weights are untouched.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    old_head = model.head
    if not isinstance(old_head, nn.Linear):
        raise TypeError(f"expected an affine head, found {type(old_head).__name__}")
    new_head = nn.Linear(old_head.in_features, num_classes)
    bound = 1.0 / math.sqrt(old_head.in_features)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        new_head.weight.uniform_(-bound, bound, generator=gen)
        new_head.bias.zero_()
    setattr(model.module, model.head_attr, new_head)
    model.head_classes = num_classes
    return model


def set_trainable(model: AdaptedModel, groups: Sequence[str] | set) -> AdaptedModel:
    """Mark exactly the named parameter groups ({body, head}) as trainable.

    The head always trains; a group set without it is rejected.
    """
    group_set = frozenset(groups)
    if not group_set:
        raise ValueError("trainable groups must be non-empty")
    unknown = group_set - {"body", "head"}
    if unknown:
        raise ValueError(f"unknown parameter groups {sorted(unknown)}; valid: body, head")
    if "head" not in group_set:
        raise ValueError("the head must always be trainable")
    body_trainable = "body" in group_set
    for p in model.body_parameters():
        p.requires_grad_(body_trainable)
    for p in model.head_parameters():
        p.requires_grad_(True)
    model.trainable_groups = group_set
    return model


def set_train_mode(model: AdaptedModel) -> None:
    """Enter training mode; a frozen body stays in eval so its BN stats are pinned."""
    if "body" in model.trainable_groups:
        model.module.train()
    else:
        model.module.eval()
        model.head.train()


def set_eval_mode(model: AdaptedModel) -> None:
    model.module.eval()


# ---------------------------------------------------------------------------
# checksums


def _state_dict_digest(module: nn.Module, keep: Callable[[str], bool]) -> str:
    h = hashlib.sha256()
    for key, tensor in sorted(module.state_dict().items()):
        if keep(key):
            h.update(key.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def body_checksum(model: AdaptedModel) -> str:
    """Digest of every body parameter and buffer (BN statistics included)."""
    prefix = model.head_attr + "."
    return _state_dict_digest(model.module, lambda k: not k.startswith(prefix))


def head_checksum(model: AdaptedModel) -> str:
    prefix = model.head_attr + "."
    return _state_dict_digest(model.module, lambda k: k.startswith(prefix))


# ---------------------------------------------------------------------------
# inference


def preprocess(spec: BackboneSpec, img: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 -> normalized float32 CHW at the backbone's resolution."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 RGB pixel grid, got shape {img.shape}")
    h, w = spec.input_resolution
    if img.shape[:2] != (h, w):
        pil = Image.fromarray(np.ascontiguousarray(img))
        img = np.asarray(pil.resize((w, h), Image.BILINEAR))
    x = img.astype(np.float32) / 255.0
    mean = np.asarray(spec.normalization_mean, dtype=np.float32)
    std = np.asarray(spec.normalization_std, dtype=np.float32)
    x = (x - mean) / std
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))


def batch_to_tensor(spec: BackboneSpec, imgs: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.stack([preprocess(spec, img) for img in imgs])


def predict_probabilities(model: AdaptedModel, img: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for one image (inference mode)."""
    set_eval_mode(model)
    with torch.no_grad():
        logits = model.module(batch_to_tensor(model.spec, [img]))
        probs = torch.softmax(logits[0].double(), dim=-1)
    return probs.numpy()


def predict_dataset(
    model: AdaptedModel,
    ds: Dataset,
    batch_size: int = 32,
    model_id: str | None = None,
    skip_undecodable: bool = False,
) -> PredictionSet:
    """One probability row per record, no augmentation.

    Undecodable images abort the run with every failing id listed, unless
    ``skip_undecodable`` drops them (with a warning) instead.
    """
    set_eval_mode(model)
    rows: dict[str, np.ndarray] = {}
    failed: list[str] = []
    batch_imgs: list[np.ndarray] = []
    batch_ids: list[str] = []

    def flush():
        if not batch_ids:
            return
        with torch.no_grad():
            logits = model.module(batch_to_tensor(model.spec, batch_imgs))
            probs = torch.softmax(logits.double(), dim=-1).numpy()
        for image_id, p in zip(batch_ids, probs):
            rows[image_id] = p
        batch_imgs.clear()
        batch_ids.clear()

    for rec in ds.records:
        try:
            img = decode_image(rec)
        except DecodeError:
            failed.append(rec.image_id)
            continue
        batch_imgs.append(img)
        batch_ids.append(rec.image_id)
        if len(batch_ids) >= batch_size:
            flush()
    flush()

    if failed:
        if not skip_undecodable:
            raise UndecodableImagesError(failed)
        logger.warning("skipped %d undecodable image(s): %s", len(failed), ", ".join(failed[:20]))

    return PredictionSet(
        model_id=model_id if model_id is not None else model.spec.name,
        label_space=ds.label_space,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(model: AdaptedModel, path: str | Path) -> None:
    """Self-describing checkpoint: versioned header + hashed parameter payload."""
    buffer = io.BytesIO()
    torch.save(model.module.state_dict(), buffer)
    payload = buffer.getvalue()
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "backbone": model.spec.name,
        "head_classes": model.head_classes,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    torch.save({"header": header, "payload": payload}, path)


def _read_container(path: str | Path) -> dict:
    try:
        container = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointIntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(container, dict) or "header" not in container or "payload" not in container:
        raise CheckpointIntegrityError(f"{path} is not a dermclf checkpoint")
    return container


def read_checkpoint_header(path: str | Path) -> dict:
    """The checkpoint's header (backbone name, head classes, format version)."""
    return dict(_read_container(path)["header"])


def load_checkpoint(spec: BackboneSpec, path: str | Path) -> AdaptedModel:
    """Restore a checkpoint written for ``spec``; verifies header and payload hash."""
    container = _read_container(path)
    header = container["header"]
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointIntegrityError(
            f"{path}: format version {header.get('format_version')} not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    if header.get("backbone") != spec.name:
        raise CheckpointIntegrityError(
            f"{path} was written for backbone {header.get('backbone')!r}, not {spec.name!r}"
        )
    payload = container["payload"]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointIntegrityError(f"{path}: payload hash mismatch (corrupt file)")

    head_classes = int(header["head_classes"])
    module, head_attr = _build_architecture(spec.name)
    model = AdaptedModel(spec, module, head_attr, _ORIGINAL_HEAD_CLASSES)
    if head_classes != _ORIGINAL_HEAD_CLASSES:
        replace_head(model, head_classes, seed=0)
    try:
        state = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
        model.module.load_state_dict(state)
    except (RuntimeError, ValueError, KeyError) as exc:
        raise CheckpointIntegrityError(f"{path}: parameters do not fit {spec.name}: {exc}") from exc
    model.module.eval()
    return model
