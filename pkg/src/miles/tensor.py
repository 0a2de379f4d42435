"""Dense float64 tensors with reverse-mode gradient computation.

The engine is deliberately small.  A Tensor wraps a C-contiguous float64
numpy array; each differentiable operation computes its result eagerly
and, when given a GradientTape, records itself on it.  ``backward``
replays the tape once, in reverse execution order, accumulating the
gradient of a scalar loss for every tensor it depends on.  Operations
called without a tape are plain forward computations, which is what the
evaluation passes use.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import InputError, NumericError, ShapeError


class Tensor:
    """A dense array of 64-bit reals; identity (not value) keys the tape."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


GradFn = Callable[[np.ndarray], tuple[np.ndarray, ...]]


class GradientTape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], Tensor, GradFn]] = []

    def record(self, inputs: Sequence[Tensor], output: Tensor, grad_fn: GradFn) -> None:
        """Append one operation; grad_fn maps d(loss)/d(output) to input gradients."""
        self._records.append((tuple(inputs), output, grad_fn))

    def __len__(self) -> int:
        return len(self._records)


class Gradients:
    """Read-only map from Tensor to its accumulated gradient array.

    Tensors the loss never reached report an exact-zero gradient of the
    matching shape.
    """

    def __init__(self, table: dict[Tensor, np.ndarray]):
        self._table = table

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        grad = self._table.get(tensor)
        return np.zeros_like(tensor.data) if grad is None else grad


def backward(tape: GradientTape, loss: Tensor) -> Gradients:
    """Accumulate d(loss)/d(t) for every tensor reachable from `loss`.

    Visits each recorded operation exactly once, in reverse execution
    order; accumulators start at zero.  Parameters are left untouched.
    Raises NumericError if the loss is not finite, ShapeError if it is
    not a scalar.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.data.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite; aborting backward pass")
    table: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for inputs, output, grad_fn in reversed(tape._records):
        out_grad = table.get(output)
        if out_grad is None:
            continue  # this op does not influence the loss
        for tensor, grad in zip(inputs, grad_fn(out_grad)):
            acc = table.get(tensor)
            if acc is None:
                table[tensor] = np.zeros_like(tensor.data)
                acc = table[tensor]
            acc += grad
    return Gradients(table)


def dense_forward(x: Tensor, w: Tensor, b: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Affine map ``y = x @ w + b`` with the bias broadcast across rows."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(
            f"dense_forward: input {x.data.shape} incompatible with weights {w.data.shape}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(
            f"dense_forward: bias {b.data.shape} incompatible with weights {w.data.shape}"
        )
    out = Tensor(x.data @ w.data + b.data)
    if tape is not None:
        x_data, w_data = x.data, w.data

        def grad_fn(g: np.ndarray):
            return g @ w_data.T, x_data.T @ g, g.sum(axis=0)

        tape.record((x, w, b), out, grad_fn)
    return out


def relu(x: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Elementwise max(0, x); the gradient passes only where x > 0."""
    out = Tensor(np.maximum(x.data, 0.0))
    if tape is not None:
        mask = x.data > 0.0
        tape.record((x,), out, lambda g: (g * mask,))
    return out


def add(a: Tensor, b: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    out = Tensor(a.data + b.data)
    if tape is not None:
        tape.record((a, b), out, lambda g: (g, g))
    return out


def concat_cols(a: Tensor, b: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Concatenate two row-aligned matrices side by side, columns of `a` first."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(
            f"concat_cols: shapes {a.data.shape} and {b.data.shape} do not share rows"
        )
    out = Tensor(np.concatenate((a.data, b.data), axis=1))
    if tape is not None:
        split = a.data.shape[1]
        tape.record((a, b), out, lambda g: (g[:, :split], g[:, split:]))
    return out


def softmax_cross_entropy(
    logits: Tensor, labels, tape: GradientTape | None = None
) -> Tensor:
    """Mean negative log-likelihood of integer labels under row-wise softmax.

    Numerically stabilized by max subtraction.  The gradient with
    respect to the logits is ``(softmax - onehot) / n``.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 2-D, got {logits.data.shape}")
    n, classes = logits.data.shape
    if classes < 2:
        raise InputError(f"softmax_cross_entropy: need at least 2 classes, got {classes}")
    if n < 1:
        raise InputError("softmax_cross_entropy: empty batch")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise InputError(
            f"softmax_cross_entropy: expected {n} labels, got shape {labels.shape}"
        )
    if labels.min() < 0 or labels.max() >= classes:
        raise InputError(
            f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    out = Tensor(-log_probs[rows, labels].mean())
    if tape is not None:
        softmax = np.exp(log_probs)

        def grad_fn(g: np.ndarray):
            delta = softmax.copy()
            delta[rows, labels] -= 1.0
            return (g * delta / n,)

        tape.record((logits,), out, grad_fn)
    return out
