"""Grid-based detection geometry: target encoding, decoding, IoU, and NMS.

The image is divided into an S x S grid; the cell containing an object's
center is responsible for it. Each cell carries B box slots of
(x offset, y offset, width, height, objectness) followed by K class
probabilities, so one cell is a vector of B*5 + K values and the whole
target/prediction is [S, S, B*5 + K].

Coordinates are normalized to [0, 1] over the image; offsets are measured
within the responsible cell, also in [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized image coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box ordering: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)


@dataclass
class Detection:
    """One decoded object: box, objectness, per-class probabilities."""

    box: BBox
    objectness: float
    class_probs: np.ndarray
    class_id: int = field(default=-1)

    def __post_init__(self):
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        if not 0.0 <= self.objectness <= 1.0:
            raise ValueError(f"objectness {self.objectness} outside [0, 1]")
        if (self.class_probs < 0).any() or abs(self.class_probs.sum() - 1.0) > 1e-6:
            raise ValueError("class_probs must be non-negative and sum to 1")
        if self.class_id < 0:
            self.class_id = int(np.argmax(self.class_probs))

    @property
    def score(self) -> float:
        """Ranking score for suppression: objectness times best class prob."""
        return self.objectness * float(self.class_probs.max())


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry: side length S, boxes per cell B, class count K."""

    S: int = 7
    B: int = 2
    K: int = 10

    def __post_init__(self):
        if self.S < 1 or self.B < 1 or self.K < 1:
            raise ValueError(f"grid dimensions must be positive, got {self}")

    @property
    def cell_depth(self) -> int:
        return self.B * 5 + self.K


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 by convention when the union has no area."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _center_cell(coord: float, s: int) -> tuple:
    """Cell index and in-cell offset for one normalized coordinate.

    A center exactly on an interior boundary belongs to the higher-index
    cell; the outer edge (coord == 1) stays in the last cell.
    """
    scaled = coord * s
    idx = min(int(np.floor(scaled)), s - 1)
    return idx, scaled - idx


def encode_targets(objects, grid: GridSpec) -> Tensor:
    """Build the training target [S, S, B*5 + K] from (BBox, class_id) pairs.

    Only the first box slot of the responsible cell is written (offsets,
    width, height, objectness 1) along with the one-hot class; everything
    else stays zero. When two object centers fall in the same cell the
    later one wins and a warning is emitted.
    """
    target = np.zeros((grid.S, grid.S, grid.cell_depth))
    occupied = set()
    for box, class_id in objects:
        if not (0.0 <= box.x_min and box.x_max <= 1.0 and 0.0 <= box.y_min and box.y_max <= 1.0):
            raise ValueError(f"box {box} not normalized to [0, 1]")
        if not 0 <= class_id < grid.K:
            raise ValueError(f"class id {class_id} outside [0, {grid.K})")
        cx, cy = box.center
        col, x_off = _center_cell(cx, grid.S)
        row, y_off = _center_cell(cy, grid.S)
        if (row, col) in occupied:
            warnings.warn(f"multiple object centers in cell ({row}, {col}); keeping the last",
                          stacklevel=2)
            target[row, col] = 0.0
        occupied.add((row, col))
        target[row, col, 0:5] = (x_off, y_off, box.width, box.height, 1.0)
        target[row, col, grid.B * 5 + class_id] = 1.0
    return Tensor(target)


def decode_predictions(raw, grid: GridSpec, conf_threshold: float) -> list:
    """Map an activated prediction tensor back to a list of Detections.

    ``raw`` must already be in probability space: offsets, sizes, and
    objectness in [0, 1] (the model applies a sigmoid), class probabilities
    normalized (softmax). Encoded targets satisfy this too, which makes
    decode an inverse of :func:`encode_targets`. Boxes are clipped to the
    image. Cells are scanned row-major; only the slots whose objectness
    clears ``conf_threshold`` are returned.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError(f"conf_threshold {conf_threshold} outside [0, 1]")
    data = raw.data if isinstance(raw, Tensor) else np.asarray(raw, dtype=np.float64)
    if data.shape != (grid.S, grid.S, grid.cell_depth):
        raise DimensionError(f"expected shape {(grid.S, grid.S, grid.cell_depth)}, got {data.shape}")

    detections = []
    for row in range(grid.S):
        for col in range(grid.S):
            cell = data[row, col]
            class_probs = cell[grid.B * 5:]
            for b in range(grid.B):
                x_off, y_off, w, h, objectness = cell[b * 5:b * 5 + 5]
                if objectness < conf_threshold:
                    continue
                cx = (col + x_off) / grid.S
                cy = (row + y_off) / grid.S
                box = BBox(
                    x_min=max(0.0, cx - w / 2.0),
                    y_min=max(0.0, cy - h / 2.0),
                    x_max=min(1.0, cx + w / 2.0),
                    y_max=min(1.0, cy + h / 2.0),
                )
                detections.append(Detection(box=box, objectness=float(objectness),
                                            class_probs=class_probs.copy()))
    return detections


def nms(detections, iou_threshold: float) -> list:
    """Greedy per-class non-maximum suppression.

    Detections are ranked by score (objectness times best class prob,
    ties toward the earlier element); one is kept iff it overlaps every
    already-kept detection of the same class below ``iou_threshold``.
    Disjoint boxes (IoU exactly 0) never suppress each other, even at
    threshold 0.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside [0, 1]")

    def suppresses(keep, candidate) -> bool:
        if keep.class_id != candidate.class_id:
            return False
        overlap = iou(keep.box, candidate.box)
        return overlap > 0.0 and overlap >= iou_threshold

    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept = []
    for i in order:
        candidate = detections[i]
        if not any(suppresses(keep, candidate) for keep in kept):
            kept.append(candidate)
    return kept
