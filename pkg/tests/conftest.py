"""Shared fixtures: synthetic source trees, the toy container, and one
session-scoped training run reused by the training, service, and
acceptance tests."""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from capsyolo import CapsuleYolo, ModelConfig, TrainConfig
from capsyolo.dataset import ContainerData
from capsyolo.model import save_model
from capsyolo.training import train

# Per-class counts mirroring the production corpus layout at one tenth
# scale: (label, controlled-environment count, field count, merge target).
TENTH_SCALE_ROWS = [
    ("Bacterial_Spot", 40, 10, 20),
    ("Early_Blight", 30, 10, 20),
    ("Late_Blight", 35, 10, 20),
    ("Leaf_Mold", 20, 5, 10),
    ("Septoria_Leaf_Spot", 35, 10, 20),
    ("Spider_Mites", 30, 0, 20),
    ("Target_Spot", 30, 10, 20),
    ("Tomato_Yellow_Leaf_Curl_Virus", 15, 5, 10),
    ("Tomato_Mosaic_Virus", 25, 0, 20),
    ("Healthy", 30, 0, 20),
]


def write_image(path: Path, rng, size=8) -> None:
    pixels = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    Image.fromarray(pixels).save(path)


def build_source_tree(root: Path, counts: dict, rng, prefix: str) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for label, count in counts.items():
        class_dir = root / label
        class_dir.mkdir(exist_ok=True)
        for i in range(count):
            write_image(class_dir / f"{prefix}_{i:04d}.png", rng)
    return root


@pytest.fixture(scope="session")
def tenth_scale_trees(tmp_path_factory):
    """Two source trees with the tenth-scale class counts above."""
    base = tmp_path_factory.mktemp("sources")
    rng = np.random.default_rng(11)
    lab = build_source_tree(base / "labfarm", {r[0]: r[1] for r in TENTH_SCALE_ROWS if r[1]},
                            rng, "lab")
    field = build_source_tree(base / "fieldfarm", {r[0]: r[2] for r in TENTH_SCALE_ROWS if r[2]},
                              rng, "field")
    return lab, field


def toy_container(image_size=24) -> ContainerData:
    """Ten two-class images (8 train / 2 test): a bright quadrant per class."""
    n = 10
    images = np.zeros((n, image_size, image_size, 3), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    half = image_size // 2
    for i in range(n):
        c = i % 2
        labels[i] = c
        if c == 0:
            images[i, 0:half, 0:half, :] = 1.0
        else:
            images[i, half:, half:, :] = 1.0
    boxes = np.tile(np.array([0.0, 0.0, 1.0, 1.0]), (n, 1))
    train_mask = np.array([1] * 8 + [0] * 2, dtype=np.int8)
    return ContainerData(
        images=images, labels=labels, boxes=boxes, train_mask=train_mask,
        classes=["Quadrant_A", "Quadrant_B"],
        source=["synthetic"] * n, filename=[f"img_{i}.png" for i in range(n)],
        severity=["unspecified"] * n, plant_part=["unspecified"] * n,
        seed=0, manifest_json="{}",
    )


def toy_model_config(image_size=24) -> ModelConfig:
    return ModelConfig(
        class_names=("Quadrant_A", "Quadrant_B"),
        image_size=(image_size, image_size),
        in_channels=3,
        conv_channels=(8, 32),
        primary_capsule_dim=4,
        class_capsule_dim=8,
        routing_iterations=2,
        grid_size=2,
        boxes_per_cell=1,
        decoder_hidden=(16,),
    )


@pytest.fixture(scope="session")
def toy_training_run():
    """One full toy training run shared across the suite.

    Returns (container, TrainResult, wall-clock seconds). The config is the
    training-sanity shape: 8 images, 2 classes, learning rate 1e-4, up to
    200 epochs with early stopping disabled via a huge patience.
    """
    container = toy_container()
    model = CapsuleYolo(toy_model_config(), seed=2)
    config = TrainConfig(learning_rate=0.0001, max_epochs=200, early_stop_patience=200,
                         batch_size=1, seed=0)
    start = time.monotonic()
    result = train(model, container, config)
    elapsed = time.monotonic() - start
    return container, result, elapsed


@pytest.fixture(scope="session")
def served_model_dir(tmp_path_factory, toy_training_run):
    """Model binary + recommendation table on disk for the service tests."""
    _, result, _ = toy_training_run
    directory = tmp_path_factory.mktemp("service")
    model_path = directory / "model.bin"
    save_model(result.model, model_path)
    table = {
        "treatments": {
            "Quadrant_A": "Treatment text for quadrant A.",
            "Quadrant_B": "Treatment text for quadrant B.",
        },
        "uncertain": "Please retake the photo in better light.",
    }
    rec_path = directory / "recommendations.json"
    rec_path.write_text(json.dumps(table), encoding="utf-8")
    return directory


def encode_png(image_hw3: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray((image_hw3 * 255).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()
