"""Dense N-dimensional tensors with reverse-mode automatic differentiation.

Everything downstream (capsule routing, the detection head, the losses)
is written against this module. The design is deliberately small:

* values are float64 numpy arrays, always finite for finite inputs;
* every primitive records its inputs and a backward closure on the
  output tensor, so the computation graph *is* the tape;
* ``backward()`` on a scalar walks the graph once in reverse
  topological order and accumulates ``.grad`` on every tensor that
  asked for it.

Gradients are reset explicitly between steps (``grad = None``); calling
``backward()`` twice on the same output is an error rather than a silent
second accumulation.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the bookkeeping needed for backprop.

    ``requires_grad`` marks leaves whose gradient should be kept; interior
    nodes inherit it from their parents so the backward walk knows where
    to stop.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._backward_ran = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(*shape) -> "Tensor":
        return Tensor(np.zeros(shape))

    @classmethod
    def _from_op(cls, data: np.ndarray, parents, backward) -> "Tensor":
        out = cls(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- bookkeeping -----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- backward --------------------------------------------------------------

    def backward(self):
        """Run reverse-mode differentiation from this scalar.

        Populates ``.grad`` on every ``requires_grad`` tensor reachable in
        the graph. The graph is single-use: a second call raises.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")
        if self._backward_ran:
            raise ValueError("backward() already ran for this output; rebuild the graph")
        self._backward_ran = True

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # interior nodes keep their grad only while the walk needs it
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                if not node.requires_grad:
                    node.grad = None

    # -- arithmetic ------------------------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def __add__(self, other):
        other = self._lift(other)
        out_data = self.data + other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad, other.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(grad):
            if self.requires_grad:
                self._accumulate(-grad)

        return Tensor._from_op(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out_data = self.data * other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad * self.data, other.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out_data = self.data / other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-grad * self.data / (other.data * other.data), other.shape)
                )

        return Tensor._from_op(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * exponent * self.data ** (exponent - 1))

        return Tensor._from_op(out_data, (self,), backward)

    def __getitem__(self, index):
        out_data = self.data[index]

        def backward(grad):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, index, grad)
                self._accumulate(full)

        return Tensor._from_op(np.array(out_data, dtype=np.float64), (self,), backward)

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad.reshape(self.shape))

        return Tensor._from_op(out_data, (self,), backward)

    def flatten(self):
        return self.reshape(self.size)

    def transpose(self, axes=None):
        out_data = np.transpose(self.data, axes)
        inverse = None if axes is None else np.argsort(axes)

        def backward(grad):
            if self.requires_grad:
                self._accumulate(np.transpose(grad, inverse))

        return Tensor._from_op(out_data, (self,), backward)

    # -- reductions ----------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(grad):
            if not self.requires_grad:
                return
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor._from_op(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- elementwise nonlinearities -------------------------------------------------

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * (self.data > 0.0))

        return Tensor._from_op(out_data, (self,), backward)

    def sigmoid(self):
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * 0.5 / out_data)

        return Tensor._from_op(out_data, (self,), backward)

    def exp(self):
        out_data = np.exp(self.data)

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * out_data)

        return Tensor._from_op(out_data, (self,), backward)


# -- free functions -------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    if x.size == 0:
        raise DimensionError("softmax over an empty tensor")
    if x.shape == () or x.shape[axis] < 1:
        raise DimensionError(f"softmax needs a non-empty axis, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out_data = exps / exps.sum(axis=axis, keepdims=True)

    def backward(grad):
        if x.requires_grad:
            inner = (grad * out_data).sum(axis=axis, keepdims=True)
            x._accumulate(out_data * (grad - inner))

    return Tensor._from_op(out_data, (x,), backward)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer: ``weights @ x + bias`` for a vector ``x``."""
    if x.data.ndim != 1 or weights.data.ndim != 2:
        raise DimensionError(
            f"dense expects vector input and 2-D weights, got {x.shape} and {weights.shape}"
        )
    if weights.shape[1] != x.shape[0] or bias.shape != (weights.shape[0],):
        raise DimensionError(
            f"dense shape mismatch: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    out_data = weights.data @ x.data + bias.data

    def backward(grad):
        if weights.requires_grad:
            weights._accumulate(np.outer(grad, x.data))
        if x.requires_grad:
            x._accumulate(weights.data.T @ grad)
        if bias.requires_grad:
            bias._accumulate(grad)

    return Tensor._from_op(out_data, (x, weights, bias), backward)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` [C,H,W] with ``kernels`` [C_out,C,kH,kW].

    Output spatial extent is ``floor((H + 2*padding - kH) / stride) + 1``.
    Implemented with im2col so forward and backward are single matmuls.
    """
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects [C,H,W] input and [C_out,C,kH,kW] kernels, "
            f"got {x.shape} and {kernels.shape}"
        )
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise DimensionError(f"kernel channels {kc} do not match input channels {c_in}")
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError("kernel larger than padded input")

    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # [C, H', W', kH, kW]
    col = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, h_out * w_out)
    kmat = kernels.data.reshape(c_out, c_in * kh * kw)
    out_data = (kmat @ col).reshape(c_out, h_out, w_out)

    def backward(grad):
        gmat = grad.reshape(c_out, h_out * w_out)
        if kernels.requires_grad:
            kernels._accumulate((gmat @ col.T).reshape(kernels.shape))
        if x.requires_grad:
            dcol = (kmat.T @ gmat).reshape(c_in, kh, kw, h_out, w_out)
            dpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    dpad[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += dcol[:, i, j]
            if padding:
                dpad = dpad[:, padding:-padding, padding:-padding]
            x._accumulate(dpad)

    return Tensor._from_op(out_data, (x, kernels), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; backward splits the gradient."""
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * grad.ndim
                index[axis] = slice(start, stop)
                t._accumulate(grad[tuple(index)])

    return Tensor._from_op(out_data, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    """Stack same-shape tensors along a new axis."""
    tensors = list(tensors)
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(grad):
        slabs = np.moveaxis(grad, axis, 0)
        for t, slab in zip(tensors, slabs):
            if t.requires_grad:
                t._accumulate(slab)

    return Tensor._from_op(out_data, tuple(tensors), backward)


def backward(loss: Tensor) -> None:
    """Module-level alias for ``loss.backward()``."""
    loss.backward()
