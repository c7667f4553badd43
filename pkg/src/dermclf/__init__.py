"""Dermoscopy image classification: fine-tuned CNN backbones, class-weighted
training, and probability/vote ensembling, scored by balanced accuracy.

The public surface mirrors the pipeline stages:

- :mod:`dermclf.data` — ground-truth CSV parsing and stratified splitting
- :mod:`dermclf.images` — decoding and flip augmentation
- :mod:`dermclf.loss` — inverse-frequency class weights and weighted
  cross-entropy
- :mod:`dermclf.backbones` — pretrained architectures, head replacement,
  checkpoints, inference
- :mod:`dermclf.training` — two-phase schedule with early stopping
- :mod:`dermclf.ensemble` — probability CSVs, soft averaging, majority vote
- :mod:`dermclf.metrics` — confusion matrix and balanced accuracy
- :mod:`dermclf.cli` — the ``dermclf`` command
"""

__version__ = "0.1.0"

from .backbones import (
    BACKBONE_NAMES,
    AdaptedModel,
    BackboneSpec,
    body_checksum,
    get_backbone_spec,
    head_checksum,
    load_checkpoint,
    load_pretrained,
    load_untrained,
    predict_dataset,
    predict_probabilities,
    replace_head,
    save_checkpoint,
)
from .config import RunConfig, load_config
from .data import (
    Dataset,
    ImageRecord,
    SplitResult,
    parse_ground_truth,
    read_split_manifest,
    stratified_split,
    validation_count,
    write_ground_truth,
    write_split_manifest,
)
from .ensemble import (
    MAJORITY_VOTE,
    SOFT_AVERAGE,
    PredictionSet,
    combine,
    combine_majority,
    combine_soft,
    decide_labels,
    read_prediction_csv,
    write_prediction_csv,
)
from .errors import (
    AlignmentError,
    CheckpointIntegrityError,
    DecodeError,
    DegenerateClassError,
    DermclfError,
    DivergenceError,
    EmptyEvaluationError,
    FormatError,
    LabelError,
    MissingImagesError,
    SplitError,
    UndecodableImagesError,
    WeightsUnavailableError,
)
from .labels import DERMOSCOPY_LABELS, LabelSpace
from .loss import ClassWeights, LossValue, batch_loss, compute_class_weights, weighted_cross_entropy
from .metrics import ConfusionMatrix, MetricReport, balanced_accuracy, build_confusion, score_files
from .synthetic import generate_synthetic_dataset
from .training import (
    EarlyStopState,
    EpochLog,
    Schedule,
    TrainerOptions,
    TrainingPhase,
    default_schedule,
    early_stop_update,
    run_phase,
    run_schedule,
)

__all__ = [
    "__version__",
    # labels
    "LabelSpace",
    "DERMOSCOPY_LABELS",
    # data
    "ImageRecord",
    "Dataset",
    "SplitResult",
    "parse_ground_truth",
    "write_ground_truth",
    "stratified_split",
    "validation_count",
    "write_split_manifest",
    "read_split_manifest",
    # loss
    "ClassWeights",
    "LossValue",
    "compute_class_weights",
    "weighted_cross_entropy",
    "batch_loss",
    # backbones
    "BackboneSpec",
    "AdaptedModel",
    "BACKBONE_NAMES",
    "get_backbone_spec",
    "load_pretrained",
    "load_untrained",
    "replace_head",
    "save_checkpoint",
    "load_checkpoint",
    "body_checksum",
    "head_checksum",
    "predict_probabilities",
    "predict_dataset",
    # training
    "TrainingPhase",
    "Schedule",
    "default_schedule",
    "EarlyStopState",
    "early_stop_update",
    "EpochLog",
    "TrainerOptions",
    "run_phase",
    "run_schedule",
    # ensemble
    "PredictionSet",
    "SOFT_AVERAGE",
    "MAJORITY_VOTE",
    "combine",
    "combine_soft",
    "combine_majority",
    "decide_labels",
    "read_prediction_csv",
    "write_prediction_csv",
    # metrics
    "ConfusionMatrix",
    "MetricReport",
    "build_confusion",
    "balanced_accuracy",
    "score_files",
    # synthetic
    "generate_synthetic_dataset",
    # config
    "RunConfig",
    "load_config",
    # errors
    "DermclfError",
    "FormatError",
    "LabelError",
    "MissingImagesError",
    "SplitError",
    "DegenerateClassError",
    "DecodeError",
    "AlignmentError",
    "WeightsUnavailableError",
    "CheckpointIntegrityError",
    "DivergenceError",
    "EmptyEvaluationError",
    "UndecodableImagesError",
]
