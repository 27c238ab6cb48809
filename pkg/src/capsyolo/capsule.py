"""Capsule feature encoding: squash, routing by agreement, and the decoder.

A capsule is a small group of units whose activity vector (the "pose")
encodes an entity's instantiation parameters; the vector's length encodes
the probability that the entity is present. Lower capsules cast predictions
for every higher capsule, and an iterative agreement loop concentrates
coupling on the higher capsules whose output the predictions agree with.

Routing is unrolled and differentiated through all iterations, so the
whole module composes with the autodiff engine with no special casing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, dense, softmax, stack
from .errors import ConfigError, DimensionError

SQUASH_EPS = 1e-9  # keeps the norm (and its gradient) finite at the zero vector


@dataclass
class CapsuleLayerConfig:
    """Layout of one capsule layer: how many capsules, how wide, how many
    routing iterations feed it."""

    num_capsules: int
    capsule_dim: int
    routing_iterations: int = 3

    def __post_init__(self):
        if self.num_capsules < 1 or self.capsule_dim < 1:
            raise ConfigError("capsule counts and dimensions must be positive")
        if self.routing_iterations < 1:
            raise ConfigError("routing_iterations must be >= 1")


@dataclass
class CapsuleState:
    """Everything one routing pass produced.

    ``coupling_history`` holds the coupling coefficients of every iteration
    (as plain arrays) so invariants can be checked per iteration; the
    differentiable outputs are the Tensors.
    """

    prediction_vectors: Tensor          # [N_low, N_high, D_high]
    routing_logits: Tensor              # [N_low, N_high], final
    coupling_coefficients: Tensor       # [N_low, N_high], final
    higher_poses: Tensor                # [N_high, D_high]
    coupling_history: list = field(default_factory=list)


def squash(s: Tensor) -> Tensor:
    """Shrink a vector (or a batch of vectors along the last axis) into the
    unit ball: same direction, norm ``|s|^2 / (1 + |s|^2)`` which is < 1.

    The zero vector is a fixed point; a small epsilon inside the norm keeps
    the gradient defined there.
    """
    norm_sq = (s * s).sum(axis=-1, keepdims=True)
    norm = (norm_sq + SQUASH_EPS).sqrt()
    return s * (norm_sq / (1.0 + norm_sq) / norm)


def route(predictions: Tensor, iterations: int) -> CapsuleState:
    """Routing by agreement over prediction vectors [N_low, N_high, D_high].

    Per iteration: coupling = softmax of the logits over higher capsules,
    each higher pose is the squashed coupling-weighted sum of its incoming
    predictions, and every logit grows by the dot product between the
    prediction and the pose it predicted. Logits start at zero.
    """
    if iterations < 1:
        raise ValueError("routing needs at least one iteration")
    if predictions.data.ndim != 3:
        raise DimensionError(f"predictions must be [N_low, N_high, D_high], got {predictions.shape}")

    n_low, n_high, _ = predictions.shape
    logits = Tensor(np.zeros((n_low, n_high)))
    history = []
    coupling = poses = None
    for _ in range(iterations):
        coupling = softmax(logits, axis=1)
        history.append(coupling.data.copy())
        weighted = predictions * coupling.reshape(n_low, n_high, 1)
        poses = squash(weighted.sum(axis=0))                      # [N_high, D_high]
        agreement = (predictions * poses.reshape(1, n_high, -1)).sum(axis=2)
        logits = logits + agreement
    return CapsuleState(
        prediction_vectors=predictions,
        routing_logits=logits,
        coupling_coefficients=coupling,
        higher_poses=poses,
        coupling_history=history,
    )


def primary_capsules(features: Tensor, config: CapsuleLayerConfig) -> Tensor:
    """Regroup a feature map [C, H, W] into squashed pose vectors.

    Channels are carved into groups of ``capsule_dim``; each group at each
    spatial position becomes one capsule, so N_low = C*H*W / capsule_dim.
    """
    c, h, w = features.shape
    d = config.capsule_dim
    if c % d != 0:
        raise ConfigError(f"channel count {c} not divisible by capsule dim {d}")
    n_low = c * h * w // d
    # [C,H,W] -> [C/d, d, H, W] -> [C/d, H, W, d] -> [N_low, d]
    poses = features.reshape(c // d, d, h, w).transpose((0, 2, 3, 1)).reshape(n_low, d)
    return squash(poses)


def class_capsules(primary: Tensor, transforms: Tensor, iterations: int = 3) -> Tensor:
    """Route primary poses into one capsule per class.

    ``transforms`` is [N_low, N_high, D_high, D_low]: each lower capsule
    predicts each higher pose through its own linear map. The returned
    capsule norms act as class-existence probabilities.
    """
    if primary.data.ndim != 2 or transforms.data.ndim != 4:
        raise DimensionError(
            f"expected primary [N_low, D_low] and transforms [N_low, N_high, D_high, D_low], "
            f"got {primary.shape} and {transforms.shape}"
        )
    n_low, d_low = primary.shape
    if transforms.shape[0] != n_low or transforms.shape[3] != d_low:
        raise DimensionError(
            f"transforms {transforms.shape} do not match primary poses {primary.shape}"
        )
    n_high = transforms.shape[1]
    # u_hat[i, j] = transforms[i, j] @ primary[i]
    predictions = (transforms * primary.reshape(n_low, 1, 1, d_low)).sum(axis=3)
    state = route(predictions, iterations)
    return state.higher_poses


def capsule_norms(poses: Tensor) -> Tensor:
    """Existence probabilities: Euclidean norm of each pose vector."""
    return ((poses * poses).sum(axis=-1) + SQUASH_EPS).sqrt()


class ReconstructionDecoder:
    """Dense decoder from masked class capsules back to image space.

    All poses except the target class are zeroed, the surviving vector runs
    through the dense stack (ReLU between layers), and a final sigmoid pins
    pixels to [0, 1].
    """

    def __init__(self, num_classes: int, capsule_dim: int, image_shape: tuple,
                 hidden: tuple = (), rng: np.random.Generator | None = None):
        self.num_classes = num_classes
        self.capsule_dim = capsule_dim
        self.image_shape = tuple(image_shape)
        rng = rng or np.random.default_rng(0)
        sizes = [num_classes * capsule_dim, *hidden, int(np.prod(image_shape))]
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / n_in)
            self.weights.append(Tensor(rng.normal(0.0, scale, (n_out, n_in)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(n_out), requires_grad=True))

    def parameters(self):
        return [*self.weights, *self.biases]

    def __call__(self, class_poses: Tensor, target_class: int) -> Tensor:
        return reconstruct(class_poses, target_class, self)


def reconstruct(class_poses: Tensor, target_class: int, decoder: ReconstructionDecoder) -> Tensor:
    """Decode the target class's pose back into an image-shaped tensor.

    Non-target poses are masked to zero, so exactly ``capsule_dim`` values
    survive into the decoder.
    """
    n_high = class_poses.shape[0]
    if not 0 <= target_class < n_high:
        raise ValueError(f"target class {target_class} outside [0, {n_high})")
    mask = np.zeros((n_high, 1))
    mask[target_class, 0] = 1.0
    masked = (class_poses * Tensor(mask)).flatten()
    h = masked
    for w, b in zip(decoder.weights[:-1], decoder.biases[:-1]):
        h = dense(h, w, b).relu()
    out = dense(h, decoder.weights[-1], decoder.biases[-1]).sigmoid()
    return out.reshape(decoder.image_shape)
