"""Training loop, early stopping, and evaluation over a dataset container.

Optimization is plain stochastic gradient descent at a fixed (low) learning
rate; adaptive optimizers are deliberately absent so every weight update is
auditable as ``w -= lr * grad``. Early stopping watches validation loss and
keeps the weights from the best epoch. All randomness flows from the run
seed, so identical config + identical data reproduces identical weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .detection import BBox, encode_targets
from .errors import ConfigError, ValidationError
from .losses import LossWeights, classification_loss, composite_loss, localization_loss, reconstruction_loss
from .metrics import confusion, metrics
from .model import CapsuleYolo

IMPROVEMENT_EPS = 1e-6   # an epoch must beat the best val loss by this much to count


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0001
    max_epochs: int = 40
    early_stop_patience: int = 5
    batch_size: int = 4
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        # zero is degenerate but legal: it must provably leave weights untouched
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must not be negative")
        if self.max_epochs < 1 or self.early_stop_patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, early_stop_patience, and batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainResult:
    model: CapsuleYolo
    history: list
    best_epoch: int              # 1-indexed
    stopped_early: bool


@dataclass(frozen=True)
class EarlyStopDecision:
    stop: bool
    stop_epoch: int | None       # 1-indexed epoch after which training halts
    best_epoch: int              # 1-indexed argmin of validation loss (earliest tie)


def early_stop(val_losses, patience: int) -> EarlyStopDecision:
    """Replay the stopping rule over a validation-loss trace.

    Improvement means strictly lower than the best seen, by at least
    ``IMPROVEMENT_EPS``; ties do not count. Training stops once ``patience``
    consecutive epochs fail to improve.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if len(val_losses) == 0:
        raise ValueError("empty validation history")
    best = val_losses[0]
    best_epoch = 1
    misses = 0
    for epoch, loss in enumerate(val_losses[1:], start=2):
        if loss < best - IMPROVEMENT_EPS:
            best = loss
            best_epoch = epoch
            misses = 0
        else:
            misses += 1
            if misses >= patience:
                return EarlyStopDecision(stop=True, stop_epoch=epoch, best_epoch=best_epoch)
    return EarlyStopDecision(stop=False, stop_epoch=None, best_epoch=best_epoch)


def _sample_loss(model: CapsuleYolo, image: np.ndarray, label: int, box: np.ndarray,
                 weights: LossWeights):
    """Composite loss graph for one sample; returns (total, breakdown, predicted)."""
    grid = model.config.grid
    out = model.forward(image)
    target = encode_targets([(BBox(*box), int(label))], grid)
    loc = localization_loss(out.detection_grid, target, grid)
    cls = classification_loss(out.class_norms, int(label))
    rec = reconstruction_loss(model.reconstruction(out.class_poses, int(label)), Tensor(image))
    total, breakdown = composite_loss(loc, cls, rec, weights)
    predicted = int(np.argmax(out.class_norms.data))
    return total, breakdown, predicted


def _epoch_pass(model, images, labels, boxes, indices, weights, batch_size,
                learning_rate, rng):
    """One optimization epoch; returns (mean loss, accuracy)."""
    order = rng.permutation(len(indices))
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(order), batch_size):
        batch = [indices[j] for j in order[start:start + batch_size]]
        totals = []
        for i in batch:
            total, _, predicted = _sample_loss(model, images[i], labels[i], boxes[i], weights)
            totals.append(total)
            correct += int(predicted == labels[i])
        batch_loss = totals[0]
        for t in totals[1:]:
            batch_loss = batch_loss + t
        batch_loss = batch_loss * (1.0 / len(totals))
        value = float(batch_loss.data)
        if not np.isfinite(value):
            raise RuntimeError(
                f"training aborted: non-finite loss {value} on batch starting at {start}"
            )
        loss_sum += value * len(totals)
        batch_loss.backward()
        for p in model.parameters():
            if p.grad is not None:
                p.data = p.data - learning_rate * p.grad
        model.reset_gradients()
    return loss_sum / len(indices), correct / len(indices)


def _evaluate_pass(model, images, labels, boxes, indices, weights):
    """Loss and accuracy without touching the weights."""
    loss_sum = 0.0
    correct = 0
    for i in indices:
        total, _, predicted = _sample_loss(model, images[i], labels[i], boxes[i], weights)
        loss_sum += float(total.data)
        correct += int(predicted == labels[i])
    return loss_sum / len(indices), correct / len(indices)


def train(model: CapsuleYolo, container, config: TrainConfig) -> TrainResult:
    """Fit the model on the container's train split.

    The test split doubles as the validation set. Per-epoch statistics are
    recorded; the returned model carries the weights of the best validation
    epoch, not necessarily the last.
    """
    train_idx = list(container.train_indices)
    val_idx = list(container.test_indices)
    if not train_idx:
        raise ValidationError("container has an empty train split")
    if not val_idx:
        raise ValidationError("container has an empty validation (test) split")

    images = container.images.astype(np.float64).transpose(0, 3, 1, 2)  # N,C,H,W
    labels = container.labels
    boxes = container.boxes

    rng = np.random.default_rng(config.seed)
    history = []
    best_loss = np.inf
    best_epoch = 0
    best_weights = None
    misses = 0
    stopped = False

    for epoch in range(1, config.max_epochs + 1):
        train_loss, train_acc = _epoch_pass(
            model, images, labels, boxes, train_idx, config.loss_weights,
            config.batch_size, config.learning_rate, rng)
        val_loss, val_acc = _evaluate_pass(
            model, images, labels, boxes, val_idx, config.loss_weights)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss,
                                  train_accuracy=train_acc, val_accuracy=val_acc))
        if val_loss < best_loss - IMPROVEMENT_EPS:
            best_loss = val_loss
            best_epoch = epoch
            best_weights = [p.data.copy() for p in model.parameters()]
            misses = 0
        else:
            misses += 1
            if misses >= config.early_stop_patience:
                stopped = True
                break

    if best_weights is not None:
        for p, w in zip(model.parameters(), best_weights):
            p.data = w
    return TrainResult(model=model, history=history, best_epoch=best_epoch, stopped_early=stopped)


def evaluate(model: CapsuleYolo, container, split: str = "test"):
    """Classify one split of the container; returns (ConfusionMatrix, MetricsReport)."""
    indices = container.test_indices if split == "test" else container.train_indices
    if len(indices) == 0:
        raise ValidationError(f"container has an empty {split} split")
    images = container.images.astype(np.float64).transpose(0, 3, 1, 2)
    predicted = []
    for i in indices:
        out = model.forward(images[i])
        predicted.append(int(np.argmax(out.class_norms.data)))
    true = [int(container.labels[i]) for i in indices]
    cm = confusion(true, predicted, model.config.num_classes)
    return cm, metrics(cm)


def write_history(history, path) -> None:
    """Persist per-epoch statistics as CSV (epoch, losses, accuracies)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
        for row in history:
            writer.writerow([row.epoch, row.train_loss, row.val_loss,
                             row.train_accuracy, row.val_accuracy])


def read_history(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [EpochStats(epoch=int(r["epoch"]),
                           train_loss=float(r["train_loss"]),
                           val_loss=float(r["val_loss"]),
                           train_accuracy=float(r["train_acc"]),
                           val_accuracy=float(r["val_acc"]))
                for r in reader]
