"""Command-line interface: split, train, predict, ensemble, score.

Commands compose through files only: ``split`` writes a manifest,
``train`` writes checkpoints plus an epoch log and a config snapshot,
``predict`` writes a probability CSV (the submission format), ``ensemble``
merges such CSVs, ``score`` reads the ground truth and a probability CSV.
``make-synthetic`` generates the desk-scale dataset used by the tests.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .backbones import (
    BACKBONE_NAMES,
    get_backbone_spec,
    load_checkpoint,
    load_pretrained,
    predict_dataset,
    read_checkpoint_header,
    replace_head,
    save_checkpoint,
)
from .config import RunConfig, load_config, write_snapshot
from .data import (
    Dataset,
    apply_split_manifest,
    parse_ground_truth,
    read_split_manifest,
    records_from_image_dir,
    stratified_split,
    write_split_manifest,
)
from .ensemble import combine, decide_labels, read_prediction_csv, write_prediction_csv
from .errors import DermclfError
from .loss import ClassWeights, compute_class_weights
from .metrics import balanced_accuracy, build_confusion
from .synthetic import DEFAULT_SIZE, DEFAULT_TOTAL, generate_synthetic_dataset
from .training import TrainerOptions, run_schedule, write_epoch_log

logger = logging.getLogger(__name__)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--ground-truth", dest="ground_truth", default=None, help="one-hot ground-truth CSV")
    parser.add_argument("--image-dir", dest="image_dir", default=None, help="directory of <id>.jpg/.jpeg/.png files")
    parser.add_argument("--run-dir", dest="run_dir", default=None, help="output directory for run artifacts")
    parser.add_argument("--fraction", type=float, default=None, help="validation fraction (default 0.10)")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")


def _config_from_args(args: argparse.Namespace, **extra) -> RunConfig:
    overrides = {
        "ground_truth": args.ground_truth,
        "image_dir": args.image_dir,
        "run_dir": args.run_dir,
        "fraction": args.fraction,
        "seed": args.seed,
    }
    overrides.update(extra)
    return load_config(args.config, overrides)


def _load_dataset(config: RunConfig) -> Dataset:
    if config.ground_truth is None or config.image_dir is None:
        raise DermclfError("both a ground-truth CSV and an image directory are required")
    return parse_ground_truth(config.ground_truth, config.image_dir, label_space=None)


def cmd_split(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    ds = _load_dataset(config)
    split = stratified_split(ds, config.fraction, config.seed)
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out = args.out if args.out is not None else run_dir / "split.csv"
    write_split_manifest(split, out)
    print(f"wrote {out}")
    print(f"{'class':<8}{'total':>7}{'train':>7}{'validation':>12}")
    train_counts = split.train.class_counts
    val_counts = split.validation.class_counts
    for i, code in enumerate(ds.label_space.codes):
        print(f"{code:<8}{ds.class_counts[i]:>7}{train_counts[i]:>7}{val_counts[i]:>12}")
    return 0


def _resolve_class_weights(config: RunConfig, train: Dataset) -> ClassWeights:
    if config.class_weights == "auto":
        return compute_class_weights(train.class_counts, train.label_space)
    return ClassWeights.explicit(config.class_weights)


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args, batch_size=args.batch_size)
    if args.no_augment:
        config.augment = False
    backbone = args.backbone
    if backbone is None:
        if len(config.backbones) != 1:
            raise DermclfError(
                f"--backbone is required when the config lists several: {config.backbones}"
            )
        backbone = config.backbones[0]
    spec = get_backbone_spec(backbone)

    ds = _load_dataset(config)
    if args.split is not None:
        split = apply_split_manifest(ds, read_split_manifest(args.split))
    else:
        split = stratified_split(ds, config.fraction, config.seed)
    weights = _resolve_class_weights(config, split.train)

    model = load_pretrained(spec)
    replace_head(model, ds.label_space.num_classes, seed=config.seed)

    out_dir = Path(config.run_dir) / backbone
    out_dir.mkdir(parents=True, exist_ok=True)

    def save_phase(phase_index: int, phase_model, phase_logs) -> None:
        path = out_dir / f"phase{phase_index}_best.ckpt"
        save_checkpoint(phase_model, path)
        logger.info("saved %s (best epoch of phase %d)", path, phase_index)

    options = TrainerOptions(batch_size=config.batch_size, augment=config.augment)
    model, logs = run_schedule(
        model,
        config.schedule(),
        split.train,
        split.validation,
        weights,
        seed=config.seed,
        options=options,
        on_phase_end=save_phase,
    )

    write_epoch_log(logs, out_dir / "epochs.csv")
    write_snapshot(
        config,
        out_dir / "config_snapshot.json",
        backbone=backbone,
        computed_class_weights=[float(w) for w in weights.weights],
        label_space=list(ds.label_space.codes),
        dermclf_version=__version__,
    )
    best = min(logs, key=lambda log: log.validation_loss)
    print(f"trained {backbone}: {len(logs)} epochs, best val loss {best.validation_loss:.6f} "
          f"(phase {best.phase} epoch {best.epoch})")
    print(f"artifacts in {out_dir}")
    return 0


def _prediction_records(args: argparse.Namespace, label_space) -> Dataset:
    if args.ground_truth is not None:
        if args.image_dir is None:
            raise DermclfError("--image-dir is required with --ground-truth")
        ds = parse_ground_truth(args.ground_truth, args.image_dir, label_space=None)
    elif args.image_dir is not None:
        ds = records_from_image_dir(args.image_dir, label_space)
    else:
        raise DermclfError("need --image-dir (optionally with --ground-truth) to find images")
    if args.split is not None:
        manifest = read_split_manifest(args.split)
        wanted = {i for i, s in manifest.items() if args.subset in (None, s)}
        ds = ds.subset(wanted & set(ds.image_ids))
    return ds


def cmd_predict(args: argparse.Namespace) -> int:
    header = read_checkpoint_header(args.checkpoint)
    spec = get_backbone_spec(header["backbone"])
    model = load_checkpoint(spec, args.checkpoint)
    if model.head_classes < 2:
        raise DermclfError(f"checkpoint head has {model.head_classes} classes")

    from .labels import DERMOSCOPY_LABELS

    if model.head_classes == DERMOSCOPY_LABELS.num_classes:
        label_space = DERMOSCOPY_LABELS
    elif args.ground_truth is not None:
        label_space = parse_ground_truth(args.ground_truth, None, label_space=None).label_space
    else:
        raise DermclfError(
            f"checkpoint head has {model.head_classes} classes; pass --ground-truth "
            "so the class codes are known"
        )
    if label_space.num_classes != model.head_classes:
        raise DermclfError(
            f"label space has {label_space.num_classes} classes, checkpoint head "
            f"{model.head_classes}"
        )

    ds = _prediction_records(args, label_space)
    if ds.label_space.codes != label_space.codes:
        ds = Dataset(records=ds.records, label_space=label_space)
    predictions = predict_dataset(
        model,
        ds,
        batch_size=args.batch_size,
        model_id=Path(args.checkpoint).stem,
        skip_undecodable=args.skip_undecodable,
    )
    write_prediction_csv(predictions, args.out)
    print(f"wrote {args.out} ({len(predictions)} rows)")
    return 0


def cmd_ensemble(args: argparse.Namespace) -> int:
    members = [read_prediction_csv(path, model_id=str(path)) for path in args.predictions]
    combined = combine(members, args.combiner)
    write_prediction_csv(combined, args.out)
    print(f"wrote {args.out} ({len(combined)} rows, combiner {args.combiner})")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    truth = parse_ground_truth(args.truth, None, label_space=None)
    if args.split is not None:
        manifest = read_split_manifest(args.split)
        wanted = {i for i, s in manifest.items() if args.subset in (None, s)}
        truth = truth.subset(wanted & set(truth.image_ids))
    predictions = read_prediction_csv(args.predictions, label_space=None)
    if predictions.label_space.codes != truth.label_space.codes:
        raise DermclfError(
            f"label spaces differ: truth {truth.label_space.codes} vs "
            f"predictions {predictions.label_space.codes}"
        )
    truth_labels = {rec.image_id: rec.label for rec in truth.records}
    cm = build_confusion(truth_labels, decide_labels(predictions), truth.label_space)
    report = balanced_accuracy(cm)
    if args.json:
        print(report.to_json())
    else:
        print(report.to_table())
    return 0


def cmd_make_synthetic(args: argparse.Namespace) -> int:
    ds = generate_synthetic_dataset(args.out_dir, seed=args.seed, total=args.total, size=args.size)
    counts = ", ".join(
        f"{code}={n}" for code, n in zip(ds.label_space.codes, ds.class_counts)
    )
    print(f"wrote {len(ds)} images under {args.out_dir} ({counts})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dermclf",
        description="Fine-tune, ensemble, and score dermoscopy image classifiers.",
    )
    parser.add_argument("--version", action="version", version=f"dermclf {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a stratified train/validation manifest")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, default=None, help="manifest path (default <run-dir>/split.csv)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="two-phase fine-tuning of one backbone")
    _add_config_flags(p)
    p.add_argument("--backbone", choices=BACKBONE_NAMES, default=None)
    p.add_argument("--split", type=Path, default=None, help="existing split manifest to reuse")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--no-augment", action="store_true", help="disable flip augmentation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="probability CSV for an image set")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image-dir", dest="image_dir", default=None)
    p.add_argument("--ground-truth", dest="ground_truth", default=None,
                   help="take image ids (and class codes) from this CSV")
    p.add_argument("--split", type=Path, default=None, help="filter ids by a split manifest")
    p.add_argument("--subset", choices=["train", "validation"], default=None)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--skip-undecodable", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="combine prediction CSVs")
    p.add_argument("predictions", nargs="+", type=Path)
    p.add_argument("--combiner", choices=["soft", "vote", "soft_average", "majority_vote"],
                   default="soft")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("score", help="balanced accuracy of a prediction CSV")
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--split", type=Path, default=None, help="score only ids in a manifest subset")
    p.add_argument("--subset", choices=["train", "validation"], default=None)
    p.add_argument("--json", action="store_true", help="machine-readable report on stdout")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("make-synthetic", help="generate the desk-scale synthetic dataset")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--total", type=int, default=DEFAULT_TOTAL)
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.set_defaults(func=cmd_make_synthetic)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "ensemble":
        from .config import COMBINER_ALIASES

        args.combiner = COMBINER_ALIASES[args.combiner]
    try:
        return args.func(args)
    except (DermclfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
