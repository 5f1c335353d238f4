"""Dense float64 tensors with reverse-mode differentiation.

Only the operations the transformer needs: broadcast arithmetic,
(batched) matmul, shape ops, relu, masked softmax, layer norm,
embedding lookup, strided 1-d convolution, and the language-model
cross-entropy. Every op records a backward closure; ``backward`` on a
scalar loss walks the graph in reverse topological order and
accumulates into the ``grad`` buffers of tracked tensors.

All results are checked for NaN/Inf (see ``finite_checks``), so
divergence surfaces as NumericError at the op that produced it.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import NumericError

_FINITE_CHECKS = True


@contextmanager
def finite_checks(enabled: bool):
    """Temporarily enable/disable the per-op NaN/Inf trap."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = previous


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, values, requires_grad: bool = False, _parents=(), _backward_fn=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._consumed = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(values) -> Tensor:
    """A tracked leaf with a persistent zero-initialized grad buffer."""
    return Tensor(values, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(values, parents, backward_fn) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(values)):
        raise NumericError("non-finite values produced by an operation")
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        values,
        requires_grad=requires,
        _parents=tuple(p for p in parents if p.requires_grad),
        _backward_fn=backward_fn if requires else None,
    )


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if grad.shape != tensor.values.shape:
        grad = _unbroadcast(grad, tensor.values.shape)
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.values)
    tensor.grad += grad


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation from a scalar root. Each root may be
    consumed once; rerunning without rebuilding the graph is an error
    (gradients would double-count)."""
    if loss.values.size != 1:
        raise ValueError("backward requires a scalar root")
    if loss._consumed:
        raise RuntimeError("backward called twice on the same root without reset")
    loss._consumed = True
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    if loss.grad is None:
        loss.grad = np.ones_like(loss.values)
    else:
        loss.grad += 1.0
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out_values = a.values + b.values

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(out_values, (a, b), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_values = a.values * b.values

    def _backward(g):
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    return _make(out_values, (a, b), _backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_values = a.values / b.values

    def _backward(g):
        _accumulate(a, g / b.values)
        _accumulate(b, -g * a.values / (b.values * b.values))

    return _make(out_values, (a, b), _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim < 2 or bv.ndim < 2 or av.ndim != bv.ndim:
        raise ValueError(f"matmul needs equal-rank operands >= 2-d, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[-2] or av.shape[:-2] != bv.shape[:-2]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out_values = av @ bv

    def _backward(g):
        _accumulate(a, g @ bv.swapaxes(-1, -2))
        _accumulate(b, av.swapaxes(-1, -2) @ g)

    return _make(out_values, (a, b), _backward)


def relu(x: Tensor) -> Tensor:
    out_values = np.maximum(x.values, 0.0)

    def _backward(g):
        _accumulate(x, g * (x.values > 0.0))

    return _make(out_values, (x,), _backward)


def sum_tensor(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_values = x.values.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.values.shape).copy())

    return _make(out_values, (x,), _backward)


# ---------------------------------------------------------------------------
# shape ops


def transpose(x: Tensor, axes: tuple) -> Tensor:
    out_values = x.values.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        _accumulate(x, g.transpose(inverse))

    return _make(out_values, (x,), _backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out_values = x.values.reshape(shape)

    def _backward(g):
        _accumulate(x, g.reshape(x.values.shape))

    return _make(out_values, (x,), _backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out_values = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _make(out_values, tuple(tensors), _backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.values.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out_values = x.values[index]

    def _backward(g):
        buf = np.zeros_like(x.values)
        buf[index] = g
        _accumulate(x, buf)

    return _make(out_values, (x,), _backward)


# ---------------------------------------------------------------------------
# neural-net ops


def softmax_lastdim(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax over the last axis. ``mask`` (boolean,
    broadcastable) marks admissible entries; masked entries get exactly
    0 and a fully-masked row yields an all-zero row."""
    v = x.values
    if v.shape[-1] < 1:
        raise ValueError("softmax over an empty last dimension")
    if mask is None:
        shifted = v - v.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        denom = e.sum(axis=-1, keepdims=True)
        y = e / denom
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        neg = np.where(m, v, -np.inf)
        rowmax = neg.max(axis=-1, keepdims=True)
        rowmax = np.where(np.isneginf(rowmax), 0.0, rowmax)
        e = np.exp(neg - rowmax)  # exp(-inf) == 0 exactly for masked entries
        denom = e.sum(axis=-1, keepdims=True)
        denom = np.where(denom == 0.0, 1.0, denom)
        y = e / denom

    def _backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(x, y * (g - inner))

    return _make(y, (x,), _backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply
    the affine (gain, bias)."""
    v = x.values
    d = v.shape[-1]
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_values = xhat * gain.values + bias.values

    def _backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=reduce_axes))
        _accumulate(bias, g.sum(axis=reduce_axes))
        dxhat = g * gain.values
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accumulate(x, dx)

    return _make(out_values, (x, gain, bias), _backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias)."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids_arr = np.asarray(ids, dtype=np.int64)
    if ids_arr.size and (ids_arr.min() < 0 or ids_arr.max() >= table.values.shape[0]):
        raise ValueError("embedding id out of range")
    out_values = table.values[ids_arr]

    def _backward(g):
        if table.requires_grad:
            buf = np.zeros_like(table.values)
            np.add.at(buf, ids_arr, g)
            _accumulate(table, buf)

    return _make(out_values, (table,), _backward)


def conv_output_length(n: int, stride: int) -> int:
    return -(-n // stride)


def strided_conv1d(x: Tensor, kernel: Tensor, stride: int) -> Tensor:
    """1-d convolution over the sequence axis with right zero-padding.

    x: [seq, d_in], kernel: [k, d_in, d_out]. Output slot j aggregates
    input positions [j*stride, j*stride + k - 1]; the output length is
    ceil(seq / stride).
    """
    k = kernel.values.shape[0]
    if not (k >= stride >= 1):
        raise ValueError(f"need kernel width >= stride >= 1, got k={k}, stride={stride}")
    n, d_in = x.values.shape
    if kernel.values.shape[1] != d_in:
        raise ValueError("kernel input-channel mismatch")
    n_out = conv_output_length(n, stride)
    pad_len = (n_out - 1) * stride + k
    padded = np.zeros((pad_len, d_in))
    padded[:n] = x.values
    out_values = np.zeros((n_out, kernel.values.shape[2]))
    for t in range(k):
        taps = padded[t : t + (n_out - 1) * stride + 1 : stride]
        out_values += taps @ kernel.values[t]

    def _backward(g):
        if kernel.requires_grad:
            dk = np.zeros_like(kernel.values)
            for t in range(k):
                taps = padded[t : t + (n_out - 1) * stride + 1 : stride]
                dk[t] = taps.T @ g
            _accumulate(kernel, dk)
        if x.requires_grad:
            dpad = np.zeros_like(padded)
            for t in range(k):
                dpad[t : t + (n_out - 1) * stride + 1 : stride] += g @ kernel.values[t].T
            _accumulate(x, dpad[:n])

    return _make(out_values, (x, kernel), _backward)


def cross_entropy_lm(logits: Tensor, targets, mask) -> Tensor:
    """Mean negative log-likelihood (nats) of ``targets`` under the
    row-wise softmax of ``logits``, averaged over masked positions."""
    targets_arr = np.asarray(targets, dtype=np.int64)
    mask_arr = np.asarray(mask, dtype=bool)
    v = logits.values
    if v.ndim != 2 or targets_arr.shape[0] != v.shape[0] or mask_arr.shape[0] != v.shape[0]:
        raise ValueError("cross_entropy_lm: logits [seq, V] with seq-length targets and mask")
    n_scored = int(mask_arr.sum())
    if n_scored == 0:
        raise ValueError("cross_entropy_lm: empty scoring mask")
    rowmax = v.max(axis=-1, keepdims=True)
    logsumexp = rowmax[:, 0] + np.log(np.exp(v - rowmax).sum(axis=-1))
    nll = logsumexp - v[np.arange(v.shape[0]), targets_arr]
    out_values = nll[mask_arr].mean()

    def _backward(g):
        if logits.requires_grad:
            p = np.exp(v - rowmax)
            p /= p.sum(axis=-1, keepdims=True)
            p[np.arange(v.shape[0]), targets_arr] -= 1.0
            p *= (mask_arr / n_scored)[:, None] * g
            _accumulate(logits, p)

    return _make(out_values, (logits,), _backward)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
    """softmax(q kT / sqrt(d_k)) v with a boolean admissibility mask;
    a fully-masked query row yields a zero output vector."""
    d_k = q.values.shape[-1]
    scores = matmul(q, transpose(k, _swap_last_two(k.ndim)))
    scores = mul(scores, _as_tensor(1.0 / math.sqrt(d_k)))
    weights = softmax_lastdim(scores, mask)
    return matmul(weights, v)


def _swap_last_two(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
