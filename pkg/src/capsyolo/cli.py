"""Command-line entry points.

    capsyolo forge build --sources A,B --targets targets.cfg --out data.h5 --seed 7
    capsyolo forge validate data.h5
    capsyolo forge stats data.h5 --plot dist.svg
    capsyolo train --data data.h5 --config train.cfg --out model.bin --history history.csv
    capsyolo evaluate --data data.h5 --model model.bin --report metrics.json --cm cm.csv
    capsyolo plot-history history.csv --out curves.svg
    capsyolo serve --config service.cfg

Config files are INI; see the packaged ``data/default_targets.cfg`` for the
targets format and the README for the train/service sections.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import dataset as ds
from .losses import LossWeights
from .model import CapsuleYolo, ModelConfig, load_model, save_model
from .training import TrainConfig, evaluate, read_history, train, write_history


def _read_targets(path) -> dict:
    parser = configparser.ConfigParser()
    # class labels are case-sensitive directory names
    parser.optionxform = str
    if path is None:
        with resources.files("capsyolo.data").joinpath("default_targets.cfg").open() as fh:
            parser.read_file(fh)
    elif not parser.read(path):
        raise FileNotFoundError(f"targets config {path} not found")
    return {label: int(count) for label, count in parser["targets"].items()}


def _cmd_forge_build(args) -> int:
    roots = [r for r in args.sources.split(",") if r]
    targets = _read_targets(args.targets)
    sources = ds.scan_sources(roots)
    for corpus in sources:
        print(f"source {corpus.name}: {corpus.total} images, "
              f"{len(corpus.images)} classes, {len(corpus.skipped)} skipped")
        for path, reason in corpus.skipped:
            print(f"  skipped {path}: {reason}")
    manifest = ds.balance_merge(sources, targets, seed=args.seed)
    ds.split(manifest, train_fraction=args.train_fraction, seed=args.seed)
    ds.write_container(manifest, args.out, image_size=(args.image_size, args.image_size))
    manifest_path = args.manifest or str(Path(args.out).with_suffix(".manifest.json"))
    Path(manifest_path).write_text(manifest.to_json(), encoding="utf-8")
    report = ds.validate_balance(manifest)
    print(f"wrote {args.out} ({len(manifest.entries)} images) and {manifest_path}")
    print(f"per-class counts: {report.per_class}")
    return 0


def _cmd_forge_validate(args) -> int:
    data = ds.read_container(args.container)
    manifest = ds.DatasetManifest.from_json(data.manifest_json)
    report = ds.validate_balance(manifest)
    print(f"{args.container}: {data.images.shape[0]} images, "
          f"{len(data.classes)} classes, image size {data.images.shape[1]}x{data.images.shape[2]}")
    print(f"train/test: {len(data.train_indices)}/{len(data.test_indices)}")
    print(f"per-class: {report.per_class}")
    print(f"per-source: {report.per_source}")
    ratio = "n/a" if report.max_min_ratio is None else f"{report.max_min_ratio:.3f}"
    print(f"max/min class ratio: {ratio}")
    for flag in report.flags:
        print(f"FLAG: {flag}")
    if report.fatal:
        print("FATAL: container failed balance validation")
        return 1
    print("balance OK")
    return 0


def _cmd_forge_stats(args) -> int:
    data = ds.read_container(args.container)
    counts = np.bincount(data.labels, minlength=len(data.classes))
    for label, count in zip(data.classes, counts):
        print(f"{label}\t{count}")
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(10, 4))
        ax.bar(range(len(data.classes)), counts, color="#3c8031")
        ax.set_xticks(range(len(data.classes)))
        ax.set_xticklabels(data.classes, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("images")
        ax.set_title("class distribution")
        fig.tight_layout()
        fig.savefig(args.plot)
        plt.close(fig)
        print(f"wrote {args.plot}")
    return 0


def _read_train_config(path) -> tuple:
    """Parse the [train], [model], and [loss] sections."""
    parser = configparser.ConfigParser()
    if path and not parser.read(path):
        raise FileNotFoundError(f"train config {path} not found")
    t = parser["train"] if parser.has_section("train") else {}
    loss = parser["loss"] if parser.has_section("loss") else {}
    weights = LossWeights(
        localization=float(loss.get("localization", 1.0)),
        classification=float(loss.get("classification", 1.0)),
        reconstruction=float(loss.get("reconstruction", 0.0005)),
    )
    config = TrainConfig(
        learning_rate=float(t.get("learning_rate", 0.0001)),
        max_epochs=int(t.get("max_epochs", 40)),
        early_stop_patience=int(t.get("early_stop_patience", 5)),
        batch_size=int(t.get("batch_size", 4)),
        seed=int(t.get("seed", 0)),
        loss_weights=weights,
    )
    m = parser["model"] if parser.has_section("model") else {}
    model_overrides = {
        "conv_channels": tuple(int(c) for c in m.get("conv_channels", "16,32").split(",")),
        "primary_capsule_dim": int(m.get("primary_capsule_dim", 8)),
        "class_capsule_dim": int(m.get("class_capsule_dim", 16)),
        "routing_iterations": int(m.get("routing_iterations", 3)),
        "grid_size": int(m.get("grid_size", 7)),
        "boxes_per_cell": int(m.get("boxes_per_cell", 2)),
        "decoder_hidden": tuple(int(c) for c in m.get("decoder_hidden", "64").split(",") if c),
    }
    return config, model_overrides


def _cmd_train(args) -> int:
    data = ds.read_container(args.data)
    config, model_overrides = _read_train_config(args.config)
    model_config = ModelConfig(
        class_names=tuple(data.classes),
        image_size=(data.images.shape[1], data.images.shape[2]),
        in_channels=3,
        **model_overrides,
    )
    model = CapsuleYolo(model_config, seed=config.seed)
    print(f"training {model.num_parameters()} parameters on "
          f"{len(data.train_indices)} images (validating on {len(data.test_indices)})")
    result = train(model, data, config)
    for row in result.history:
        print(f"epoch {row.epoch:3d}  train_loss {row.train_loss:.4f}  "
              f"val_loss {row.val_loss:.4f}  train_acc {row.train_accuracy:.3f}  "
              f"val_acc {row.val_accuracy:.3f}")
    if result.stopped_early:
        print(f"early stop; best epoch {result.best_epoch}")
    save_model(result.model, args.out)
    if args.history:
        write_history(result.history, args.history)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    data = ds.read_container(args.data)
    model = load_model(args.model)
    cm, report = evaluate(model, data, split=args.split)
    print(f"overall accuracy: {report.overall_accuracy:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps({
            "classes": list(model.config.class_names),
            "split": args.split,
            **report.to_dict(),
        }, indent=2), encoding="utf-8")
        print(f"wrote {args.report}")
    if args.cm:
        with open(args.cm, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\pred", *model.config.class_names])
            for label, row in zip(model.config.class_names, cm.matrix):
                writer.writerow([label, *row.tolist()])
        print(f"wrote {args.cm}")
    return 0


def _cmd_plot_history(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    history = read_history(args.history)
    epochs = [h.epoch for h in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, [h.train_loss for h in history], label="train")
    ax_loss.plot(epochs, [h.val_loss for h in history], label="validation")
    ax_loss.set_xlabel("epoch"); ax_loss.set_ylabel("loss"); ax_loss.legend()
    ax_acc.plot(epochs, [h.train_accuracy for h in history], label="train")
    ax_acc.plot(epochs, [h.val_accuracy for h in history], label="validation")
    ax_acc.set_xlabel("epoch"); ax_acc.set_ylabel("accuracy"); ax_acc.legend()
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, create_app

    config = ServiceConfig.from_file(args.config)
    try:
        app = create_app(config)
    except Exception as exc:
        print(f"startup failure: {exc}", file=sys.stderr)
        return 1
    import uvicorn

    uvicorn.run(app, host=args.host or config.host, port=args.port or config.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capsyolo", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    forge = sub.add_parser("forge", help="dataset construction")
    forge_sub = forge.add_subparsers(dest="forge_command", required=True)

    build = forge_sub.add_parser("build", help="scan, balance, split, and write a container")
    build.add_argument("--sources", required=True, help="comma-separated source roots")
    build.add_argument("--targets", default=None, help="targets INI (default: packaged)")
    build.add_argument("--out", required=True, help="output container (.h5)")
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--image-size", type=int, default=128)
    build.add_argument("--train-fraction", type=float, default=0.8)
    build.add_argument("--manifest", default=None, help="manifest JSON path")
    build.set_defaults(func=_cmd_forge_build)

    validate = forge_sub.add_parser("validate", help="re-check a container's balance")
    validate.add_argument("container")
    validate.set_defaults(func=_cmd_forge_validate)

    stats = forge_sub.add_parser("stats", help="print class counts, optionally plot them")
    stats.add_argument("container")
    stats.add_argument("--plot", default=None, help="write a distribution chart (svg/png)")
    stats.set_defaults(func=_cmd_forge_stats)

    tr = sub.add_parser("train", help="train a model on a container")
    tr.add_argument("--data", required=True)
    tr.add_argument("--config", default=None, help="train INI ([train]/[model]/[loss])")
    tr.add_argument("--out", required=True, help="output model file")
    tr.add_argument("--history", default=None, help="per-epoch CSV")
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("evaluate", help="confusion matrix and metrics on a split")
    ev.add_argument("--data", required=True)
    ev.add_argument("--model", required=True)
    ev.add_argument("--report", default=None, help="metrics JSON")
    ev.add_argument("--cm", default=None, help="confusion matrix CSV")
    ev.add_argument("--split", default="test", choices=["train", "test"])
    ev.set_defaults(func=_cmd_evaluate)

    ph = sub.add_parser("plot-history", help="training-curve chart from a history CSV")
    ph.add_argument("history")
    ph.add_argument("--out", required=True)
    ph.set_defaults(func=_cmd_plot_history)

    sv = sub.add_parser("serve", help="run the diagnosis HTTP service")
    sv.add_argument("--config", required=True, help="service INI ([service])")
    sv.add_argument("--host", default=None)
    sv.add_argument("--port", type=int, default=None)
    sv.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
