"""
Tensors and reverse-mode gradients
==================================

The model math runs on a small autodiff engine: float64 arrays, a handful
of primitives, and one backward() walk per training step. This script
builds a micro-network by hand and checks one gradient against finite
differences, which is exactly how the test suite audits every primitive.
"""

import numpy as np

from capsyolo import Tensor, conv2d, dense, softmax

# A 1-channel 5x5 "image" and a single 3x3 filter.
rng = np.random.default_rng(0)
image = Tensor(rng.uniform(0, 1, (1, 5, 5)), requires_grad=True)
kernel = Tensor(rng.standard_normal((2, 1, 3, 3)) * 0.5, requires_grad=True)

features = conv2d(image, kernel, stride=1, padding=0).relu()
print("conv output shape:", features.shape)            # (2, 3, 3)

# Flatten into a dense layer and softmax over two "classes".
weights = Tensor(rng.standard_normal((2, features.size)) * 0.1, requires_grad=True)
bias = Tensor(np.zeros(2), requires_grad=True)
logits = dense(features.flatten(), weights, bias)
probs = softmax(logits)
print("class probabilities:", probs.data.round(4), "sum:", probs.data.sum())

# A scalar loss: negative probability of class 0.
loss = (probs[0] * -1.0).sum()
loss.backward()
print("kernel gradient shape:", kernel.grad.shape)

# Check the most influential kernel coordinate against central finite
# differences.
step = 1e-4
idx = np.unravel_index(np.argmax(np.abs(kernel.grad)), kernel.grad.shape)


def loss_value():
    f = conv2d(Tensor(image.data), Tensor(kernel.data), stride=1, padding=0).relu()
    l = dense(f.flatten(), Tensor(weights.data), Tensor(bias.data))
    return -softmax(l).data[0]


kernel.data[idx] += step
up = loss_value()
kernel.data[idx] -= 2 * step
down = loss_value()
kernel.data[idx] += step

numeric = (up - down) / (2 * step)
print(f"analytic {kernel.grad[idx]:+.6f}  vs  finite-difference {numeric:+.6f}")

# A second backward on the same graph is an error by design: gradients are
# reset explicitly between steps, never silently accumulated twice.
try:
    loss.backward()
except ValueError as exc:
    print("re-running backward raises:", exc)
