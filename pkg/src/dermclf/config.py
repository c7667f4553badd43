"""Run configuration: flat JSON keys, defaults matching the standard recipe.

Precedence is defaults < config file < command-line flags. The resolved
configuration (plus computed class weights) is snapshot into the run
directory so any run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

from .ensemble import COMBINERS, MAJORITY_VOTE, SOFT_AVERAGE
from .errors import FormatError
from .training import Schedule, default_schedule

COMBINER_ALIASES = {
    "soft": SOFT_AVERAGE,
    "vote": MAJORITY_VOTE,
    SOFT_AVERAGE: SOFT_AVERAGE,
    MAJORITY_VOTE: MAJORITY_VOTE,
}


@dataclass
class RunConfig:
    ground_truth: str | None = None
    image_dir: str | None = None
    run_dir: str = "runs/default"
    fraction: float = 0.10
    seed: int = 0
    backbones: tuple[str, ...] = ("resnet50", "densenet121", "mobilenet")
    batch_size: int = 32
    augment: bool = True
    # "auto" = inverse frequency from the train subset; or an explicit list
    class_weights: Any = "auto"
    combiner: str = SOFT_AVERAGE
    phase1_learning_rate: float = 0.01
    phase1_max_epochs: int = 10
    phase1_patience: int = 5
    phase2_learning_rate: float = 0.001
    phase2_max_epochs: int = 100
    phase2_patience: int = 10

    def __post_init__(self):
        if isinstance(self.backbones, (list, tuple)):
            self.backbones = tuple(self.backbones)
        else:
            self.backbones = (str(self.backbones),)
        if self.combiner not in COMBINER_ALIASES:
            raise ValueError(
                f"unknown combiner {self.combiner!r}; choose from {sorted(COMBINER_ALIASES)}"
            )
        self.combiner = COMBINER_ALIASES[self.combiner]
        if not (0.0 < self.fraction < 1.0):
            raise ValueError(f"fraction must be in (0, 1), got {self.fraction}")
        if self.class_weights != "auto":
            weights = [float(v) for v in self.class_weights]
            if any(w <= 0 for w in weights):
                raise ValueError("explicit class weights must all be > 0")
            self.class_weights = weights

    def schedule(self) -> Schedule:
        return default_schedule(
            phase1_learning_rate=self.phase1_learning_rate,
            phase1_max_epochs=self.phase1_max_epochs,
            phase1_patience=self.phase1_patience,
            phase2_learning_rate=self.phase2_learning_rate,
            phase2_max_epochs=self.phase2_max_epochs,
            phase2_patience=self.phase2_patience,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbones"] = list(self.backbones)
        return d


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Config file merged with non-None overrides (CLI flags win)."""
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as exc:
                raise FormatError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise FormatError(f"config {path} must be a JSON object")
        unknown = set(loaded) - _CONFIG_KEYS
        if unknown:
            raise FormatError(f"config {path} has unknown keys: {sorted(unknown)}")
        values.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in _CONFIG_KEYS:
                raise ValueError(f"unknown config override {key!r}")
            values[key] = value
    return RunConfig(**values)


def write_snapshot(config: RunConfig, path: str | Path, **extras: Any) -> None:
    """Frozen copy of the resolved config plus run-specific extras."""
    snapshot = config.to_dict()
    snapshot.update(extras)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(snapshot, f, indent=2, sort_keys=True)
        f.write("\n")
