"""
Training and evaluating the detector
====================================

The full model is a conv backbone, a capsule stage routed into one capsule
per class, a reconstruction decoder, and a grid head for boxes and
objectness. Training is plain SGD on the composite loss (localization +
margin classification + reconstruction), with validation-loss early
stopping.

Desk-scale demo: ten synthetic two-class images, a few dozen epochs.
"""

import tempfile
from pathlib import Path

import numpy as np

from capsyolo import CapsuleYolo, ModelConfig, TrainConfig
from capsyolo.dataset import ContainerData
from capsyolo.training import evaluate, train, write_history

# Ten images: class 0 lights up the top-left quadrant, class 1 the
# bottom-right. Eight train, two validate.
size = 24
images = np.zeros((10, size, size, 3), dtype=np.float32)
labels = np.array([i % 2 for i in range(10)], dtype=np.int64)
half = size // 2
for i, label in enumerate(labels):
    if label == 0:
        images[i, :half, :half] = 1.0
    else:
        images[i, half:, half:] = 1.0

container = ContainerData(
    images=images, labels=labels,
    boxes=np.tile([0.0, 0.0, 1.0, 1.0], (10, 1)),
    train_mask=np.array([1] * 8 + [0] * 2, dtype=np.int8),
    classes=["Quadrant_A", "Quadrant_B"],
    source=["synthetic"] * 10, filename=[f"{i}.png" for i in range(10)],
    severity=["unspecified"] * 10, plant_part=["unspecified"] * 10,
    seed=0, manifest_json="{}",
)

config = ModelConfig(
    class_names=tuple(container.classes), image_size=(size, size), in_channels=3,
    conv_channels=(8, 32), primary_capsule_dim=4, class_capsule_dim=8,
    routing_iterations=2, grid_size=2, boxes_per_cell=1, decoder_hidden=(16,),
)
model = CapsuleYolo(config, seed=2)
print(f"model: {model.num_parameters()} parameters, "
      f"{model.num_primary} primary capsules")

result = train(model, container, TrainConfig(
    learning_rate=0.0001, max_epochs=60, early_stop_patience=60, batch_size=1, seed=0))

for row in result.history[::10]:
    print(f"epoch {row.epoch:3d}  train_loss {row.train_loss:.4f}  "
          f"val_loss {row.val_loss:.4f}  train_acc {row.train_accuracy:.2f}")

cm, report = evaluate(result.model, container, split="train")
print("\ntrain confusion matrix:\n", cm.matrix)
print("overall accuracy:", report.overall_accuracy)

workdir = Path(tempfile.mkdtemp(prefix="capsyolo_demo_"))
write_history(result.history, workdir / "history.csv")
print("history written to", workdir / "history.csv",
      "- plot it with: capsyolo plot-history <csv> --out curves.svg")
