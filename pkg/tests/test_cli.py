"""End-to-end runs of the command-line pipeline on tiny synthetic inputs."""

import json
import subprocess
import sys

import numpy as np
import pytest

from capsyolo.cli import main
from capsyolo.dataset import read_container

from conftest import build_source_tree


@pytest.fixture(scope="module")
def cli_trees(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli_sources")
    rng = np.random.default_rng(60)
    a = build_source_tree(base / "lab", {"rust": 8, "blight": 8}, rng, "lab")
    b = build_source_tree(base / "field", {"rust": 4, "blight": 4}, rng, "field")
    return a, b


@pytest.fixture(scope="module")
def built_container(cli_trees, tmp_path_factory):
    a, b = cli_trees
    out_dir = tmp_path_factory.mktemp("cli_out")
    targets = out_dir / "targets.cfg"
    targets.write_text("[targets]\nrust = 8\nblight = 8\n")
    container = out_dir / "data.h5"
    rc = main(["forge", "build", "--sources", f"{a},{b}", "--targets", str(targets),
               "--out", str(container), "--seed", "5", "--image-size", "16"])
    assert rc == 0
    return container


class TestForge:
    def test_build_writes_container_and_manifest(self, built_container):
        assert built_container.exists()
        assert built_container.with_suffix(".manifest.json").exists()
        data = read_container(built_container)
        assert data.images.shape == (16, 16, 16, 3)
        assert sorted(data.classes) == ["blight", "rust"]

    def test_validate_passes(self, built_container, capsys):
        rc = main(["forge", "validate", str(built_container)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "balance OK" in out
        assert "max/min class ratio: 1.000" in out

    def test_stats_writes_plot(self, built_container, tmp_path, capsys):
        plot = tmp_path / "dist.svg"
        rc = main(["forge", "stats", str(built_container), "--plot", str(plot)])
        assert rc == 0
        assert plot.exists()
        assert b"<svg" in plot.read_bytes()[:300]
        out = capsys.readouterr().out
        assert "rust\t8" in out


@pytest.fixture(scope="module")
def trained_artifacts(built_container, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("cli_train")
    config = out_dir / "train.cfg"
    config.write_text(
        "[train]\n"
        "learning_rate = 0.0001\n"
        "max_epochs = 2\n"
        "early_stop_patience = 5\n"
        "batch_size = 4\n"
        "seed = 1\n"
        "[model]\n"
        "conv_channels = 4,8\n"
        "primary_capsule_dim = 4\n"
        "class_capsule_dim = 8\n"
        "routing_iterations = 2\n"
        "grid_size = 2\n"
        "boxes_per_cell = 1\n"
        "decoder_hidden = 16\n"
        "[loss]\n"
        "reconstruction = 0.0005\n"
    )
    model = out_dir / "model.bin"
    history = out_dir / "history.csv"
    rc = main(["train", "--data", str(built_container), "--config", str(config),
               "--out", str(model), "--history", str(history)])
    assert rc == 0
    return model, history


class TestTrainEvaluate:
    def test_train_writes_model_and_history(self, trained_artifacts):
        model, history = trained_artifacts
        assert model.exists()
        lines = history.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,train_acc,val_acc"
        assert len(lines) == 3    # header + 2 epochs

    def test_evaluate_writes_reports(self, built_container, trained_artifacts, tmp_path):
        model, _ = trained_artifacts
        report = tmp_path / "metrics.json"
        cm = tmp_path / "cm.csv"
        rc = main(["evaluate", "--data", str(built_container), "--model", str(model),
                   "--report", str(report), "--cm", str(cm)])
        assert rc == 0
        body = json.loads(report.read_text())
        assert set(body) >= {"classes", "overall_accuracy", "macro", "per_class"}
        rows = cm.read_text().strip().splitlines()
        assert len(rows) == 3    # header + 2 classes

    def test_plot_history_writes_curves(self, trained_artifacts, tmp_path):
        _, history = trained_artifacts
        curves = tmp_path / "curves.svg"
        rc = main(["plot-history", str(history), "--out", str(curves)])
        assert rc == 0
        assert curves.exists()
        assert b"<svg" in curves.read_bytes()[:300]


def test_serve_startup_failure_exits_nonzero(tmp_path, capsys):
    config = tmp_path / "service.cfg"
    config.write_text(
        "[service]\n"
        f"model = {tmp_path / 'missing.bin'}\n"
        f"recommendations = {tmp_path / 'missing.json'}\n"
    )
    rc = main(["serve", "--config", str(config)])
    assert rc == 1
    assert "startup failure" in capsys.readouterr().err


def test_console_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "capsyolo.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("forge", "train", "evaluate", "plot-history", "serve"):
        assert command in proc.stdout


def test_default_targets_ship_with_package():
    from capsyolo.cli import _read_targets

    targets = _read_targets(None)
    assert sum(targets.values()) == 1800
    assert targets["Bacterial_Spot"] == 200
    assert targets["Leaf_Mold"] == 100
    assert len(targets) == 10
