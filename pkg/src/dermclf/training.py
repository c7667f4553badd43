"""Two-phase fine-tuning with patience-based early stopping.

The standard schedule trains the replaced head alone at lr 0.01 for up to
10 epochs (patience 5 on validation loss), then unfreezes everything and
fine-tunes at lr 0.001 for up to 100 epochs (patience 10). Each phase ends
by restoring the weights of its best validation-loss epoch, so the next
phase (and the returned model) always starts from the best seen state.

Optimizer: SGD with momentum 0.9, reset between phases. "Improvement"
means strictly lower validation loss (min_delta 0). Validation loss is the
same class-weighted objective as training, evaluated without augmentation.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .backbones import AdaptedModel, batch_to_tensor, set_eval_mode, set_train_mode, set_trainable
from .data import Dataset
from .errors import DivergenceError, FormatError
from .images import NUM_VARIANTS, apply_variant, decode_image
from .loss import ClassWeights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingPhase:
    """One fine-tuning phase: which groups train, at what rate, for how long."""

    trainable_groups: frozenset
    learning_rate: float
    max_epochs: int
    patience: int

    def __post_init__(self):
        object.__setattr__(self, "trainable_groups", frozenset(self.trainable_groups))
        if "head" not in self.trainable_groups:
            raise ValueError("every phase must train the head")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not (1 <= self.patience <= self.max_epochs):
            raise ValueError(
                f"patience must be in 1..max_epochs ({self.max_epochs}), got {self.patience}"
            )


@dataclass(frozen=True)
class Schedule:
    phases: tuple[TrainingPhase, ...]

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ValueError("a schedule needs at least one phase")


def default_schedule(
    phase1_learning_rate: float = 0.01,
    phase1_max_epochs: int = 10,
    phase1_patience: int = 5,
    phase2_learning_rate: float = 0.001,
    phase2_max_epochs: int = 100,
    phase2_patience: int = 10,
) -> Schedule:
    """Head-only warmup then full fine-tune, with the standard defaults."""
    return Schedule(
        phases=(
            TrainingPhase(
                trainable_groups=frozenset({"head"}),
                learning_rate=phase1_learning_rate,
                max_epochs=phase1_max_epochs,
                patience=phase1_patience,
            ),
            TrainingPhase(
                trainable_groups=frozenset({"body", "head"}),
                learning_rate=phase2_learning_rate,
                max_epochs=phase2_max_epochs,
                patience=phase2_patience,
            ),
        )
    )


@dataclass(frozen=True)
class EarlyStopState:
    """Patience counter over validation losses; current epoch is
    best_epoch + epochs_since_improvement."""

    best_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    stopped: bool = False


def early_stop_update(state: EarlyStopState, validation_loss: float, patience: int) -> EarlyStopState:
    """Advance the early-stopping state by one epoch's validation loss.

    A strict improvement resets the counter and records the epoch; anything
    else (equal losses included) counts toward patience.
    """
    if state.stopped:
        raise ValueError("early_stop_update called on an already-stopped state")
    if not math.isfinite(validation_loss):
        raise ValueError(f"validation loss must be finite, got {validation_loss}")
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    epoch = state.best_epoch + state.epochs_since_improvement + 1
    if validation_loss < state.best_loss:
        return EarlyStopState(
            best_loss=validation_loss, best_epoch=epoch, epochs_since_improvement=0, stopped=False
        )
    waited = state.epochs_since_improvement + 1
    return replace(state, epochs_since_improvement=waited, stopped=waited >= patience)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    phase: int
    train_loss: float
    validation_loss: float
    wall_time: float


@dataclass(frozen=True)
class TrainerOptions:
    batch_size: int = 32
    augment: bool = True
    # pin torch to one thread so a rerun reproduces losses bit-for-bit
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def _class_weight_tensor(w: ClassWeights, num_classes: int) -> torch.Tensor:
    if w.num_classes != num_classes:
        raise ValueError(f"class weights cover {w.num_classes} classes, model head has {num_classes}")
    return torch.from_numpy(np.asarray(w.weights, dtype=np.float32))


def _weighted_batch_loss(logits: torch.Tensor, targets: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    # sum of per-sample weighted losses / batch size == mean weighted loss
    return F.cross_entropy(logits, targets, weight=weight, reduction="sum") / logits.shape[0]


def _epoch_rng(seed: int, phase_index: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, phase_index, epoch]))


def evaluate_loss(
    model: AdaptedModel, ds: Dataset, class_weights: ClassWeights, batch_size: int = 32
) -> float:
    """Mean per-sample weighted cross-entropy over a dataset, no augmentation."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    weight = _class_weight_tensor(class_weights, model.head_classes)
    set_eval_mode(model)
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(ds.records), batch_size):
            chunk = ds.records[start : start + batch_size]
            imgs = [decode_image(rec) for rec in chunk]
            targets = torch.tensor([rec.label for rec in chunk], dtype=torch.long)
            logits = model.module(batch_to_tensor(model.spec, imgs))
            total += float(F.cross_entropy(logits, targets, weight=weight, reduction="sum"))
    return total / len(ds)


def run_phase(
    model: AdaptedModel,
    phase: TrainingPhase,
    train: Dataset,
    validation: Dataset,
    class_weights: ClassWeights,
    seed: int,
    options: TrainerOptions = TrainerOptions(),
    phase_index: int = 1,
) -> tuple[AdaptedModel, list[EpochLog]]:
    """Train one phase; return the model restored to its best-validation epoch.

    Each epoch shuffles the training set and draws per-sample flip variants
    from an RNG derived from (seed, phase_index, epoch), evaluates the
    weighted validation loss, and advances the early-stopping state.
    """
    if len(train) == 0 or len(validation) == 0:
        raise ValueError("train and validation datasets must be non-empty")
    if any(rec.label is None for rec in train.records + validation.records):
        raise ValueError("training needs fully labeled datasets")
    if train.label_space.num_classes != model.head_classes:
        raise ValueError(
            f"model head has {model.head_classes} classes, "
            f"dataset has {train.label_space.num_classes}"
        )

    set_trainable(model, phase.trainable_groups)
    weight = _class_weight_tensor(class_weights, model.head_classes)
    optimizer = torch.optim.SGD(
        model.trainable_parameters(), lr=phase.learning_rate, momentum=0.9
    )

    saved_threads = torch.get_num_threads()
    if options.deterministic:
        torch.set_num_threads(1)
    try:
        state = EarlyStopState()
        best_weights = None
        logs: list[EpochLog] = []
        n = len(train.records)

        for epoch in range(1, phase.max_epochs + 1):
            started = time.perf_counter()
            rng = _epoch_rng(seed, phase_index, epoch)
            order = rng.permutation(n)
            variants = (
                rng.integers(0, NUM_VARIANTS, size=n)
                if options.augment
                else np.zeros(n, dtype=np.int64)
            )

            set_train_mode(model)
            running = 0.0
            for start in range(0, n, options.batch_size):
                idx = order[start : start + options.batch_size]
                imgs = [
                    apply_variant(decode_image(train.records[i]), int(variants[pos]))
                    for pos, i in enumerate(idx, start=start)
                ]
                targets = torch.tensor([train.records[i].label for i in idx], dtype=torch.long)
                optimizer.zero_grad()
                logits = model.module(batch_to_tensor(model.spec, imgs))
                loss = _weighted_batch_loss(logits, targets, weight)
                loss_value = loss.detach().item()
                if not math.isfinite(loss_value):
                    raise DivergenceError(
                        f"non-finite training loss at phase {phase_index} epoch {epoch}", logs
                    )
                loss.backward()
                optimizer.step()
                running += loss_value * len(idx)
            train_loss = running / n

            val_loss = evaluate_loss(model, validation, class_weights, options.batch_size)
            if not math.isfinite(val_loss):
                raise DivergenceError(
                    f"non-finite validation loss at phase {phase_index} epoch {epoch}", logs
                )

            state = early_stop_update(state, val_loss, phase.patience)
            if state.best_epoch == epoch:
                best_weights = {
                    k: v.detach().clone() for k, v in model.module.state_dict().items()
                }
            logs.append(
                EpochLog(
                    epoch=epoch,
                    phase=phase_index,
                    train_loss=train_loss,
                    validation_loss=val_loss,
                    wall_time=time.perf_counter() - started,
                )
            )
            logger.info(
                "phase %d epoch %d: train loss %.6f, val loss %.6f%s",
                phase_index, epoch, train_loss, val_loss,
                " (stopping)" if state.stopped else "",
            )
            if state.stopped:
                break

        assert best_weights is not None
        model.module.load_state_dict(best_weights)
        set_eval_mode(model)
        return model, logs
    finally:
        torch.set_num_threads(saved_threads)


def run_schedule(
    model: AdaptedModel,
    schedule: Schedule,
    train: Dataset,
    validation: Dataset,
    class_weights: ClassWeights,
    seed: int,
    options: TrainerOptions = TrainerOptions(),
    on_phase_end: Callable[[int, AdaptedModel, list[EpochLog]], None] | None = None,
) -> tuple[AdaptedModel, list[EpochLog]]:
    """Run phases in order, each starting from the previous best weights."""
    all_logs: list[EpochLog] = []
    for i, phase in enumerate(schedule.phases, start=1):
        model, logs = run_phase(
            model, phase, train, validation, class_weights, seed, options, phase_index=i
        )
        all_logs.extend(logs)
        if on_phase_end is not None:
            on_phase_end(i, model, logs)
    return model, all_logs


EPOCH_LOG_HEADER = ["phase", "epoch", "train_loss", "val_loss", "seconds"]


def write_epoch_log(logs: Sequence[EpochLog], path: str | Path) -> None:
    """CSV with full-precision losses; seconds is wall time (nondeterministic)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(EPOCH_LOG_HEADER) + "\n")
        for log in logs:
            f.write(
                f"{log.phase},{log.epoch},{log.train_loss!r},{log.validation_loss!r},"
                f"{log.wall_time:.3f}\n"
            )


def read_epoch_log(path: str | Path) -> list[EpochLog]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != EPOCH_LOG_HEADER:
            raise FormatError(f"epoch log {path}: unexpected header {header}")
        return [
            EpochLog(
                epoch=int(row[1]),
                phase=int(row[0]),
                train_loss=float(row[2]),
                validation_loss=float(row[3]),
                wall_time=float(row[4]),
            )
            for row in reader
            if row
        ]
