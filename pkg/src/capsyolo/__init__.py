"""Capsule-routing + YOLO-style tomato leaf disease detection toolkit."""

from .autodiff import Tensor, backward, concat, conv2d, dense, softmax
from .capsule import (
    CapsuleLayerConfig,
    CapsuleState,
    ReconstructionDecoder,
    capsule_norms,
    class_capsules,
    primary_capsules,
    reconstruct,
    route,
    squash,
)
from .detection import BBox, Detection, GridSpec, decode_predictions, encode_targets, iou, nms
from .losses import (
    LossBreakdown,
    LossWeights,
    classification_loss,
    composite_loss,
    localization_loss,
    reconstruction_loss,
)
from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics
from .model import CapsuleYolo, ModelConfig, load_model, save_model
from .training import EarlyStopDecision, TrainConfig, early_stop, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "concat", "conv2d", "dense", "softmax",
    "CapsuleLayerConfig", "CapsuleState", "ReconstructionDecoder", "capsule_norms",
    "class_capsules", "primary_capsules", "reconstruct", "route", "squash",
    "BBox", "Detection", "GridSpec", "decode_predictions", "encode_targets", "iou", "nms",
    "LossBreakdown", "LossWeights", "classification_loss", "composite_loss",
    "localization_loss", "reconstruction_loss",
    "ConfusionMatrix", "MetricsReport", "confusion", "metrics",
    "CapsuleYolo", "ModelConfig", "load_model", "save_model",
    "EarlyStopDecision", "TrainConfig", "early_stop", "evaluate", "train",
    "__version__",
]
