"""The training objective: localization + margin classification + reconstruction.

Each component returns a differentiable scalar Tensor; ``composite_loss``
combines them with non-negative weights and reports the numeric breakdown
alongside the graph node that training backpropagates through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .detection import GridSpec
from .errors import ConfigError, DimensionError

LAMBDA_COORD = 5.0   # classical weighting of coordinate error on responsible cells
LAMBDA_NOOBJ = 0.5   # down-weighting of objectness error on empty cells

MARGIN_PRESENT = 0.9
MARGIN_ABSENT = 0.1
MARGIN_ABSENT_WEIGHT = 0.5


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the three components.

    Zero is allowed (it switches a component off); negatives are rejected.
    """

    localization: float = 1.0
    classification: float = 1.0
    reconstruction: float = 0.0005

    def __post_init__(self):
        for name in ("localization", "classification", "reconstruction"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"loss weight {name} must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    """Numeric record of one loss evaluation."""

    localization: float
    classification: float
    reconstruction: float
    total: float
    weights: LossWeights

    def __post_init__(self):
        for name in ("localization", "classification", "reconstruction"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} loss must be non-negative")
        expected = (self.weights.localization * self.localization
                    + self.weights.classification * self.classification
                    + self.weights.reconstruction * self.reconstruction)
        if abs(expected - self.total) > 1e-9:
            raise ValueError("total does not match the weighted component sum")


def localization_loss(pred: Tensor, target: Tensor, grid: GridSpec,
                      lambda_coord: float = LAMBDA_COORD,
                      lambda_noobj: float = LAMBDA_NOOBJ) -> Tensor:
    """Sum-squared box error over responsible cells plus objectness terms.

    Responsible box slots (target objectness 1) contribute squared error on
    the in-cell offsets, on the square roots of width/height, and on
    objectness; empty slots contribute only ``lambda_noobj`` times squared
    objectness. Class probabilities are not part of this term.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    expected = (grid.S, grid.S, grid.cell_depth)
    if pred.shape != expected:
        raise DimensionError(f"expected {expected} for grid {grid}, got {pred.shape}")

    xs = [b * 5 for b in range(grid.B)]
    ys = [b * 5 + 1 for b in range(grid.B)]
    ws = [b * 5 + 2 for b in range(grid.B)]
    hs = [b * 5 + 3 for b in range(grid.B)]
    objs = [b * 5 + 4 for b in range(grid.B)]

    mask = Tensor(target.data[:, :, objs].copy())          # [S, S, B] of 0/1
    inv_mask_data = 1.0 - mask.data

    def masked_sq(cols):
        diff = pred[:, :, cols] - Tensor(target.data[:, :, cols].copy())
        return ((diff * diff) * mask).sum()

    def masked_sqrt_sq(cols):
        # shift masked-out entries to 1 so sqrt stays differentiable there
        safe_pred = pred[:, :, cols] * mask + Tensor(inv_mask_data)
        safe_target = target.data[:, :, cols] * mask.data + inv_mask_data
        diff = safe_pred.sqrt() - Tensor(np.sqrt(safe_target))
        return ((diff * diff) * mask).sum()

    coord = masked_sq(xs) + masked_sq(ys)
    size = masked_sqrt_sq(ws) + masked_sqrt_sq(hs)

    pred_obj = pred[:, :, objs]
    obj_diff = pred_obj - Tensor(target.data[:, :, objs].copy())
    obj_term = ((obj_diff * obj_diff) * mask).sum()
    noobj_term = ((pred_obj * pred_obj) * Tensor(inv_mask_data)).sum()

    return lambda_coord * (coord + size) + obj_term + lambda_noobj * noobj_term


def classification_loss(class_capsule_norms: Tensor, true_class: int,
                        m_plus: float = MARGIN_PRESENT,
                        m_minus: float = MARGIN_ABSENT,
                        absent_weight: float = MARGIN_ABSENT_WEIGHT) -> Tensor:
    """Margin loss over class-capsule norms.

    The true class pays ``max(0, m_plus - norm)^2``; every other class pays
    ``absent_weight * max(0, norm - m_minus)^2``.
    """
    k = class_capsule_norms.shape[0]
    if not 0 <= true_class < k:
        raise ValueError(f"true class {true_class} outside [0, {k})")
    present = np.zeros(k)
    present[true_class] = 1.0
    present = Tensor(present)
    hit = (m_plus - class_capsule_norms).relu()
    miss = (class_capsule_norms - m_minus).relu()
    return (present * hit * hit + absent_weight * (1.0 - present) * miss * miss).sum()


def reconstruction_loss(reconstructed: Tensor, original: Tensor) -> Tensor:
    """Sum of squared pixel differences between decoder output and input."""
    if reconstructed.shape != original.shape:
        raise DimensionError(f"reconstruction {reconstructed.shape} vs original {original.shape}")
    diff = reconstructed - original
    return (diff * diff).sum()


def composite_loss(localization: Tensor, classification: Tensor, reconstruction: Tensor,
                   weights: LossWeights = LossWeights()):
    """Weighted sum of the three components.

    Returns the differentiable total plus a :class:`LossBreakdown` of the
    numeric values.
    """
    total = (weights.localization * localization
             + weights.classification * classification
             + weights.reconstruction * reconstruction)
    breakdown = LossBreakdown(
        localization=float(localization.data),
        classification=float(classification.data),
        reconstruction=float(reconstruction.data),
        total=float(total.data),
        weights=weights,
    )
    return total, breakdown
