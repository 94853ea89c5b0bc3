"""Command-line interface wiring the library into the full protocol.

Progress goes to stderr, machine-readable JSON results to stdout. Exit
codes: 0 success, 1 runtime error, 2 usage error. Flags are the whole
configuration surface; a run is reproducible from its command line plus
the input bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import SynthSpec, load_manifest, load_pooled_split, synth_generate
from .errors import ConfigError, EmtuneError
from .metrics import cluster_report, pca_project, tsne_project
from .model import (
    AdapterConfig,
    Checkpoint,
    EncoderConfig,
    encoder_forward,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    TrainConfig,
    evaluate,
    train_end2end_baseline,
    train_stage1,
    train_stage2,
)
from .verification import DEFAULT_TOLERANCE, run_gradient_suite

logger = logging.getLogger(__name__)

# Margins from the task presets; --margin overrides the preset.
TASK_MARGINS = {"ser": 1.0, "gender": 1.0, "age": 1.2, "sid": 1.0}


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _parse_hidden_dims(text: str) -> tuple:
    try:
        dims = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"--hidden-dims expects comma-separated integers, got '{text}'")
    if not dims:
        raise ConfigError(f"--hidden-dims expects at least one layer width, got '{text}'")
    return dims


def _train_config(args) -> TrainConfig:
    margin = args.margin if args.margin is not None else TASK_MARGINS[args.task_preset]
    config = TrainConfig(
        loss_mode=getattr(args, "loss", "combined"),
        margin=margin,
        lambd=getattr(args, "lambd", 0.005),
        beta=getattr(args, "beta", 0.01),
        center=getattr(args, "center", False),
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    config.validate()
    return config


def _classifier_config(args) -> TrainConfig:
    config = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed
    )
    config.validate()
    return config


def _write_projection_csv(path, ids, labels, coords) -> None:
    lines = ["id,label,x,y"]
    for sample_id, label, (x, y) in zip(ids, labels, coords):
        lines.append(f"{sample_id},{label},{x:.17g},{y:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _figure_path(args, out_path) -> Path | None:
    if args.no_figure:
        return None
    if args.figure is not None:
        return Path(args.figure)
    return Path(out_path).with_suffix(".png")


def cmd_synth(args) -> int:
    spec = SynthSpec(
        num_classes=args.classes,
        samples_per_class=args.per_class,
        dim=args.dim,
        frames_range=(args.frames_min, args.frames_max),
        separation=args.separation,
        noise=args.noise,
        seed=args.seed,
    )
    spec.validate()
    manifest_path = synth_generate(spec, args.out)
    _emit(
        {
            "manifest": str(manifest_path),
            "classes": spec.num_classes,
            "samples": spec.num_classes * spec.samples_per_class,
        }
    )
    return 0


def cmd_train_encoder(args) -> int:
    config = _train_config(args)
    manifest = load_manifest(args.manifest)
    data = load_pooled_split(manifest, "train")
    encoder_config = EncoderConfig(
        input_dim=data.features.shape[1],
        hidden_dims=_parse_hidden_dims(args.hidden_dims),
        bottleneck_dim=args.bottleneck_dim,
        seed=args.seed,
    )
    encoder_config.validate()
    params, log = train_stage1(manifest, encoder_config, config)
    checkpoint = Checkpoint(
        encoder_config=encoder_config,
        encoder_params=params,
        loss_mode=config.loss_mode,
        epoch=config.epochs,
        seed=config.seed,
    )
    save_checkpoint(checkpoint, args.out)
    log.checkpoint_path = str(args.out)
    if args.log:
        log.save(args.log)
    _emit(
        {
            "checkpoint": str(args.out),
            "loss_mode": config.loss_mode,
            "epochs": config.epochs,
            "final_train_loss": log.records[-1].train_loss,
        }
    )
    return 0


def cmd_train_adapter(args) -> int:
    config = _classifier_config(args)
    manifest = load_manifest(args.manifest)
    base = load_checkpoint(args.encoder_checkpoint)
    adapter_config = AdapterConfig(
        input_dim=base.encoder_config.bottleneck_dim,
        num_classes=len(manifest.label_map),
        hidden_dim=args.adapter_hidden,
        seed=args.seed,
    )
    adapter_config.validate()
    adapter_params, log = train_stage2(manifest, base.encoder_params, adapter_config, config)
    checkpoint = Checkpoint(
        encoder_config=base.encoder_config,
        encoder_params=base.encoder_params,
        adapter_config=adapter_config,
        adapter_params=adapter_params,
        loss_mode=base.loss_mode,
        epoch=config.epochs,
        seed=config.seed,
    )
    save_checkpoint(checkpoint, args.out)
    log.checkpoint_path = str(args.out)
    if args.log:
        log.save(args.log)
    last = log.records[-1]
    _emit(
        {
            "checkpoint": str(args.out),
            "epochs": config.epochs,
            "final_train_loss": last.train_loss,
            "dev_accuracy": last.dev_metric,
        }
    )
    return 0


def cmd_train_e2e(args) -> int:
    config = _classifier_config(args)
    manifest = load_manifest(args.manifest)
    data = load_pooled_split(manifest, "train")
    encoder_config = EncoderConfig(
        input_dim=data.features.shape[1],
        hidden_dims=_parse_hidden_dims(args.hidden_dims),
        bottleneck_dim=args.bottleneck_dim,
        seed=args.seed,
    )
    encoder_config.validate()
    adapter_config = AdapterConfig(
        input_dim=encoder_config.bottleneck_dim,
        num_classes=len(manifest.label_map),
        hidden_dim=args.adapter_hidden,
        seed=args.seed,
    )
    adapter_config.validate()
    enc_params, adp_params, log = train_end2end_baseline(manifest, encoder_config, adapter_config, config)
    checkpoint = Checkpoint(
        encoder_config=encoder_config,
        encoder_params=enc_params,
        adapter_config=adapter_config,
        adapter_params=adp_params,
        loss_mode="end2end",
        epoch=config.epochs,
        seed=config.seed,
    )
    save_checkpoint(checkpoint, args.out)
    log.checkpoint_path = str(args.out)
    if args.log:
        log.save(args.log)
    last = log.records[-1]
    _emit(
        {
            "checkpoint": str(args.out),
            "epochs": config.epochs,
            "final_train_loss": last.train_loss,
            "dev_accuracy": last.dev_metric,
        }
    )
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    checkpoint = load_checkpoint(args.checkpoint)
    report = evaluate(manifest, args.split, checkpoint.encoder_params, checkpoint.adapter_params)
    _emit({"split": report.split, "count": report.count, "accuracy": report.accuracy, "mae": report.mae})
    return 0


def _embed_split(args):
    manifest = load_manifest(args.manifest)
    checkpoint = load_checkpoint(args.checkpoint)
    data = load_pooled_split(manifest, args.split)
    embeddings = encoder_forward(checkpoint.encoder_params, data.features)
    label_strings = [data.label_names[c] for c in data.labels]
    return data, embeddings, label_strings


def cmd_embed(args) -> int:
    data, embeddings, label_strings = _embed_split(args)
    dim = embeddings.shape[1]
    lines = ["id,label," + ",".join(f"e{k}" for k in range(dim))]
    for sample_id, label, row in zip(data.ids, label_strings, embeddings):
        lines.append(f"{sample_id},{label}," + ",".join(f"{v:.17g}" for v in row))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit({"out": str(args.out), "rows": len(data.ids), "dim": dim})
    return 0


def cmd_report(args) -> int:
    data, embeddings, label_strings = _embed_split(args)
    report = cluster_report(embeddings, data.labels)
    counts = np.bincount(data.labels, minlength=len(data.label_names))
    lines = ["label,count,invariant_distance"]
    for name, count, dist in zip(data.label_names, counts, report.per_class_distance):
        lines.append(f"{name},{count},{dist:.17g}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    figure = _figure_path(args, args.out)
    if figure is not None:
        from .plots import render_cluster_report

        render_cluster_report(
            data.label_names, report.per_class_distance, report.mean_distance, report.davies_bouldin, figure
        )
    _emit(
        {
            "out": str(args.out),
            "figure": None if figure is None else str(figure),
            "split": args.split,
            "per_class": {
                name: dist for name, dist in zip(data.label_names, report.per_class_distance.tolist())
            },
            "mean_invariant_distance": report.mean_distance,
            "davies_bouldin": report.davies_bouldin,
        }
    )
    return 0


def cmd_project(args) -> int:
    data, embeddings, label_strings = _embed_split(args)
    if args.method == "pca":
        coords = pca_project(embeddings, seed=args.projection_seed)
    else:
        coords = tsne_project(
            embeddings,
            perplexity=args.perplexity,
            iterations=args.iterations,
            seed=args.projection_seed,
        )
    _write_projection_csv(args.out, data.ids, label_strings, coords)
    figure = _figure_path(args, args.out)
    if figure is not None:
        from .plots import render_projection

        render_projection(coords, label_strings, figure, f"{args.method} projection of split '{args.split}'")
    _emit(
        {
            "out": str(args.out),
            "figure": None if figure is None else str(figure),
            "method": args.method,
            "rows": len(data.ids),
        }
    )
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=args.seed, points=args.points)
    worst = max(result.max_error for result in results)
    for result in results:
        _emit({"check": result.name, "max_rel_error": result.max_error})
    ok = worst < args.tolerance
    _emit({"max_rel_error": worst, "tolerance": args.tolerance, "ok": ok})
    if not ok:
        logger.error("gradient check failed: %.3e >= %.3e", worst, args.tolerance)
        return 1
    return 0


def _add_classifier_flags(sub) -> None:
    sub.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    sub.add_argument("--batch-size", type=int, default=32, help="minibatch size")
    sub.add_argument("--epochs", type=int, default=20, help="training epochs")
    sub.add_argument("--seed", type=int, default=0, help="seed for init and batch order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emtune",
        description="Two-stage embedding finetuning over pooled feature files, with cluster diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synth", formatter_class=fmt, help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory for features + manifest")
    p.add_argument("--classes", type=int, default=4, help="number of classes")
    p.add_argument("--per-class", type=int, default=200, help="samples per class")
    p.add_argument("--dim", type=int, default=64, help="feature dimension")
    p.add_argument("--frames-min", type=int, default=5, help="minimum frames per sample")
    p.add_argument("--frames-max", type=int, default=15, help="maximum frames per sample")
    p.add_argument("--separation", type=float, default=8.0, help="minimum distance between class means")
    p.add_argument("--noise", type=float, default=2.0, help="within-class noise scale")
    p.add_argument("--seed", type=int, default=7, help="generator seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-encoder", formatter_class=fmt, help="stage 1: finetune the encoder")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None, help="optional run-log path (JSONL)")
    p.add_argument(
        "--loss",
        choices=["contrastive", "noncontrastive", "combined"],
        default="combined",
        help="stage-1 objective",
    )
    p.add_argument("--margin", type=float, default=None, help="triplet margin (default: task preset's)")
    p.add_argument(
        "--task-preset",
        choices=sorted(TASK_MARGINS),
        default="ser",
        help="margin preset used when --margin is absent",
    )
    p.add_argument("--lambda", dest="lambd", type=float, default=0.005, help="off-diagonal weight")
    p.add_argument("--beta", type=float, default=0.01, help="correlation-term weight in combined mode")
    p.add_argument("--center", action="store_true", help="mean-center columns before correlating")
    p.add_argument("--bottleneck-dim", type=int, default=128, help="embedding dimension")
    p.add_argument("--hidden-dims", default="256", help="comma-separated hidden layer widths")
    _add_classifier_flags(p)
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("train-adapter", formatter_class=fmt, help="stage 2: fit the classifier, encoder frozen")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--encoder-checkpoint", required=True, help="stage-1 checkpoint to build on")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None, help="optional run-log path (JSONL)")
    p.add_argument("--adapter-hidden", type=int, default=256, help="adapter hidden width")
    _add_classifier_flags(p)
    p.set_defaults(func=cmd_train_adapter)

    p = sub.add_parser("train-e2e", formatter_class=fmt, help="baseline: joint cross-entropy training")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None, help="optional run-log path (JSONL)")
    p.add_argument("--bottleneck-dim", type=int, default=128, help="embedding dimension")
    p.add_argument("--hidden-dims", default="256", help="comma-separated hidden layer widths")
    p.add_argument("--adapter-hidden", type=int, default=256, help="adapter hidden width")
    _add_classifier_flags(p)
    p.set_defaults(func=cmd_train_e2e)

    p = sub.add_parser("evaluate", formatter_class=fmt, help="accuracy (and MAE when defined) on a split")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--checkpoint", required=True, help="checkpoint with encoder + adapter")
    p.add_argument("--split", choices=["train", "dev", "test"], default="test", help="split to score")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", formatter_class=fmt, help="write a split's embeddings as CSV")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--checkpoint", required=True, help="checkpoint providing the encoder")
    p.add_argument("--split", choices=["train", "dev", "test"], default="test", help="split to embed")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("report", formatter_class=fmt, help="cluster-geometry report for a split")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--checkpoint", required=True, help="checkpoint providing the encoder")
    p.add_argument("--split", choices=["train", "dev", "test"], default="test", help="split to analyze")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--figure", default=None, help="figure path (default: CSV path with .png)")
    p.add_argument("--no-figure", action="store_true", help="skip rendering the figure")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("project", formatter_class=fmt, help="2-D projection of a split's embeddings")
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--checkpoint", required=True, help="checkpoint providing the encoder")
    p.add_argument("--split", choices=["train", "dev", "test"], default="test", help="split to project")
    p.add_argument("--method", choices=["pca", "tsne"], default="tsne", help="projection method")
    p.add_argument("--perplexity", type=float, default=30.0, help="t-SNE perplexity")
    p.add_argument("--iterations", type=int, default=1000, help="t-SNE descent iterations")
    p.add_argument("--projection-seed", type=int, default=0, help="seed for the projection start")
    p.add_argument("--out", required=True, help="output CSV path (id,label,x,y)")
    p.add_argument("--figure", default=None, help="figure path (default: CSV path with .png)")
    p.add_argument("--no-figure", action="store_true", help="skip rendering the figure")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("gradcheck", formatter_class=fmt, help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=2024, help="seed for the random draws")
    p.add_argument("--points", type=int, default=10, help="draws per check")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="max allowed relative error")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (EmtuneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
