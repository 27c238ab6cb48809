"""The full detector: conv backbone -> capsules -> grid detection head.

The backbone extracts features, the capsule stage routes them into one
pose vector per disease class (whose norm is the class-existence
probability), and the detection head consumes the flattened capsule poses
concatenated with the flattened backbone features to emit the grid of
boxes and objectness scores. Classification lives in the capsule stage:
the grid's per-cell class block is the renormalized capsule norms, so the
margin loss on the norms is what shapes every reported class probability.
A dense decoder reconstructs the input image from the target class
capsule as a regularizer.

``save_model``/``load_model`` read and write a small versioned binary:
a JSON header (format version, config echo, class names, tensor index)
followed by the raw float64 parameter data. Round-trips are exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, concat, conv2d, dense
from .capsule import (
    CapsuleLayerConfig,
    ReconstructionDecoder,
    capsule_norms,
    class_capsules,
    primary_capsules,
    reconstruct,
)
from .detection import GridSpec, decode_predictions, nms
from .errors import ConfigError

MODEL_MAGIC = b"CYOLO"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every structural choice is a knob."""

    class_names: tuple
    image_size: tuple = (64, 64)
    in_channels: int = 3
    conv_channels: tuple = (16, 32)
    conv_kernel: int = 3
    conv_stride: int = 2
    conv_padding: int = 1
    primary_capsule_dim: int = 8
    class_capsule_dim: int = 16
    routing_iterations: int = 3
    grid_size: int = 7
    boxes_per_cell: int = 2
    decoder_hidden: tuple = (64,)
    transform_init_std: float | None = None   # None: scaled to keep squash unsaturated

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "decoder_hidden", tuple(self.decoder_hidden))
        if len(self.class_names) < 1:
            raise ConfigError("at least one class name is required")
        if self.routing_iterations < 1:
            raise ConfigError("routing_iterations must be >= 1")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(S=self.grid_size, B=self.boxes_per_cell, K=self.num_classes)

    def feature_shape(self) -> tuple:
        """Backbone output shape [C, H, W] implied by the conv stack."""
        h, w = self.image_size
        for _ in self.conv_channels:
            h = (h + 2 * self.conv_padding - self.conv_kernel) // self.conv_stride + 1
            w = (w + 2 * self.conv_padding - self.conv_kernel) // self.conv_stride + 1
        if h < 1 or w < 1:
            raise ConfigError("conv stack shrinks the image away; use a larger input")
        return (self.conv_channels[-1], h, w)


@dataclass
class ModelOutput:
    """One forward pass: capsule poses/norms and the activated detection grid."""

    class_poses: Tensor       # [K, D_high]
    class_norms: Tensor       # [K]
    detection_grid: Tensor    # [S, S, B*5+K]: sigmoided geometry/objectness, then
                              # renormalized capsule norms as the per-cell class block
    features: Tensor          # backbone output [C, H, W]


class CapsuleYolo:
    """Capsule-routing detector with a grid head, built on the autodiff tensors."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)

        c_feat, h_feat, w_feat = config.feature_shape()
        if (c_feat * h_feat * w_feat) % config.primary_capsule_dim != 0:
            raise ConfigError(
                f"feature size {c_feat}x{h_feat}x{w_feat} not divisible by "
                f"primary capsule dim {config.primary_capsule_dim}"
            )
        self.num_primary = c_feat * h_feat * w_feat // config.primary_capsule_dim
        self.primary_config = CapsuleLayerConfig(
            num_capsules=self.num_primary,
            capsule_dim=config.primary_capsule_dim,
            routing_iterations=config.routing_iterations,
        )

        k = config.num_classes
        self.conv_weights = []
        self.conv_biases = []
        c_in = config.in_channels
        for c_out in config.conv_channels:
            scale = np.sqrt(2.0 / (c_in * config.conv_kernel ** 2))
            self.conv_weights.append(Tensor(
                rng.normal(0.0, scale, (c_out, c_in, config.conv_kernel, config.conv_kernel)),
                requires_grad=True))
            self.conv_biases.append(Tensor(np.zeros(c_out), requires_grad=True))
            c_in = c_out

        # Scale the pose transforms so the routed sums land where the squash
        # still has slope: with uniform coupling 1/K over K class capsules,
        # E|s|^2 ~= (N_low / K^2) * std^2 * D_high * E|u|^2, and we aim for
        # |s| ~= 0.7 assuming mid-squash primaries (|u| ~= 0.5). Saturated
        # class capsules get no margin-loss gradient and never learn.
        std = config.transform_init_std
        if std is None:
            std = 1.4 * k / np.sqrt(self.num_primary * config.class_capsule_dim)
        self.transforms = Tensor(
            rng.normal(0.0, std,
                       (self.num_primary, k, config.class_capsule_dim, config.primary_capsule_dim)),
            requires_grad=True)

        self.decoder = ReconstructionDecoder(
            num_classes=k,
            capsule_dim=config.class_capsule_dim,
            image_shape=(config.in_channels, *config.image_size),
            hidden=config.decoder_hidden,
            rng=rng,
        )

        # The head predicts geometry and objectness only; the K class channels
        # of the output grid are the renormalized capsule norms, broadcast to
        # every cell, so classification is owned by the capsule stage.
        head_in = k * config.class_capsule_dim + c_feat * h_feat * w_feat
        head_out = config.grid_size ** 2 * config.boxes_per_cell * 5
        self.head_weights = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / head_in), (head_out, head_in)), requires_grad=True)
        self.head_bias = Tensor(np.zeros(head_out), requires_grad=True)

    # -- parameters -------------------------------------------------------------

    def named_parameters(self):
        pairs = []
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            pairs.append((f"conv{i}.weight", w))
            pairs.append((f"conv{i}.bias", b))
        pairs.append(("capsule.transforms", self.transforms))
        for i, (w, b) in enumerate(zip(self.decoder.weights, self.decoder.biases)):
            pairs.append((f"decoder{i}.weight", w))
            pairs.append((f"decoder{i}.bias", b))
        pairs.append(("head.weight", self.head_weights))
        pairs.append(("head.bias", self.head_bias))
        return pairs

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def reset_gradients(self):
        for p in self.parameters():
            p.grad = None

    # -- forward ----------------------------------------------------------------

    def forward(self, image) -> ModelOutput:
        """Run the detector on one [C, H, W] image with values in [0, 1]."""
        x = image if isinstance(image, Tensor) else Tensor(image)
        cfg = self.config
        h = x
        for w, b in zip(self.conv_weights, self.conv_biases):
            h = conv2d(h, w, stride=cfg.conv_stride, padding=cfg.conv_padding)
            h = (h + b.reshape(b.size, 1, 1)).relu()
        features = h

        primary = primary_capsules(features, self.primary_config)
        class_poses = class_capsules(primary, self.transforms, cfg.routing_iterations)
        norms = capsule_norms(class_poses)

        head_in = concat([class_poses.flatten(), features.flatten()])
        raw = dense(head_in, self.head_weights, self.head_bias)
        grid = cfg.grid
        boxes = raw.reshape(grid.S, grid.S, grid.B * 5).sigmoid()
        class_probs = norms * (1.0 / norms.sum())
        classes = class_probs.reshape(1, 1, grid.K) * Tensor(np.ones((grid.S, grid.S, 1)))
        detection_grid = concat([boxes, classes], axis=2)

        return ModelOutput(class_poses=class_poses, class_norms=norms,
                           detection_grid=detection_grid, features=features)

    def reconstruction(self, class_poses: Tensor, target_class: int) -> Tensor:
        return reconstruct(class_poses, target_class, self.decoder)

    def predict(self, image, conf_threshold: float = 0.5, iou_threshold: float = 0.5):
        """Inference: forward pass, decode, suppress. Returns (norms, detections)."""
        out = self.forward(image)
        detections = decode_predictions(out.detection_grid, self.config.grid, conf_threshold)
        return out.class_norms.data.copy(), nms(detections, iou_threshold)


# -- serialization ----------------------------------------------------------------


def save_model(model: CapsuleYolo, path) -> None:
    """Write the versioned parameter binary; see module docstring for layout."""
    named = model.named_parameters()
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "class_names": list(model.config.class_names),
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in named],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<BQ", MODEL_FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype=np.float64).tobytes())


def load_model(path) -> CapsuleYolo:
    """Read a model binary back; raises ValueError on corrupt or wrong-version files."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic)")
        meta = fh.read(9)
        if len(meta) != 9:
            raise ValueError(f"{path}: truncated header")
        version, header_len = struct.unpack("<BQ", meta)
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: format version {version} unsupported "
                             f"(expected {MODEL_FORMAT_VERSION})")
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise ValueError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: corrupt header: {exc}") from exc

        cfg_dict = dict(header["config"])
        config = ModelConfig(**cfg_dict)
        model = CapsuleYolo(config, seed=0)

        by_name = dict(model.named_parameters())
        if [t["name"] for t in header["tensors"]] != list(by_name.keys()):
            raise ValueError(f"{path}: tensor index does not match the configured architecture")
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            want = by_name[entry["name"]]
            if shape != want.shape:
                raise ValueError(f"{path}: tensor {entry['name']} has shape {shape}, "
                                 f"expected {want.shape}")
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path}: truncated tensor data for {entry['name']}")
            want.data = np.frombuffer(raw, dtype=np.float64).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after tensor data")
    return model
