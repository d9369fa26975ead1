"""Tensor type and reverse-mode autodiff tape.

A Tensor wraps a contiguous numpy array (row-major). Operations on tensors
record a node on an implicit tape whenever any input requires gradients;
``Tensor.backward()`` walks the recorded graph once in reverse topological
order and accumulates sum-of-paths gradients into ``.grad``.

Only what the pipeline needs is implemented: 2-D matmul, stride-1 conv2d,
2x2 max pooling, nearest-neighbour upsampling, the usual elementwise ops and
reductions (with numpy-style broadcasting), softmax, batch normalization, and
two graph primitives (``gather_rows`` / ``segment_sum``) that give the GNN
layers their scatter/gather machinery.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an operation."""


_state = threading.local()


def _dtype() -> np.dtype:
    return getattr(_state, "dtype", np.float32)


def default_dtype() -> np.dtype:
    """Dtype newly created tensors use (float32 unless overridden)."""
    return _dtype()


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default storage dtype.

    Gradient-check tests run inside ``use_dtype(np.float64)`` so that central
    finite differences are not drowned by float32 rounding.
    """
    prev = _dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (used for eval-mode forward passes)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class _Node:
    """Tape entry: op tag, parent tensors and the backward rule."""

    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: Sequence["Tensor"],
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.op = op
        self.parents = tuple(parents)
        self.backward = backward


class Tensor:
    """Dense tensor of 32-bit floats (64-bit in check mode)."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    # make ndarray OP Tensor defer to the reflected Tensor operators instead
    # of broadcasting into an object array
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _dtype())
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._ctx: _Node | None = None

    # ---- basic introspection -------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- graph plumbing --------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> dict["Tensor", np.ndarray]:
        """Backpropagate from a scalar, returning {tensor: gradient}.

        Every tensor with ``requires_grad`` reachable from this loss receives
        its accumulated gradient in ``.grad``. Each tape node is visited
        exactly once (reverse topological order), so shared subexpressions
        accumulate sum-of-paths gradients.
        """
        if self.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for p in node._ctx.parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.data)
        }
        result: dict[Tensor, np.ndarray] = {}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
                result[node] = node.grad
            if node._ctx is None:
                continue
            parent_grads = node._ctx.backward(g)
            for parent, pg in zip(node._ctx.parents, parent_grads):
                if pg is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        return result

    # ---- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # method forms used throughout the models
    def matmul(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def leaky_relu(self, slope: float = 0.2):
        return leaky_relu(self, slope)

    def elu(self):
        return elu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def clip(self, lo: float, hi: float):
        return clip(self, lo, hi)

    def __getitem__(self, idx):
        return index(self, idx)

    def softmax(self, axis: int = -1):
        return softmax(self, axis)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Convenience constructor honouring the active default dtype."""
    return Tensor(data, requires_grad=requires_grad)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    record = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = record
    out._ctx = _Node(op, parents, backward) if record else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so grad matches the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---- elementwise arithmetic ------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a, b = a, _wrap(b, a.dtype)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    a, b = a, _wrap(b, a.dtype)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, "sub", (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    a, b = a, _wrap(b, a.dtype)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(out, "mul", (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    a, b = a, _wrap(b, a.dtype)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, "div", (a, b), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, "exp", (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(out, "log", (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient flows only through unclamped entries."""
    out = np.clip(a.data, lo, hi)

    def backward(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _make(out, "clip", (a,), backward)


def index(a: Tensor, idx) -> Tensor:
    """Numpy-style indexing/slicing; backward scatter-adds into the source."""
    out = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(np.ascontiguousarray(out), "index", (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _make(out, "relu", (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(a.data > 0, a.data, a.data * slope)

    def backward(g):
        return (g * np.where(a.data > 0, 1.0, slope).astype(a.dtype),)

    return _make(out, "leaky_relu", (a,), backward)


def elu(a: Tensor) -> Tensor:
    out = np.where(a.data > 0, a.data, np.expm1(a.data))

    def backward(g):
        # d/dx expm1(x) = exp(x) = out + 1 on the negative branch
        return (g * np.where(a.data > 0, 1.0, out + 1.0).astype(a.dtype),)

    return _make(out, "elu", (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, "sigmoid", (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, "softmax", (a,), backward)


# ---- reductions, shape ops ---------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            for ax in sorted(ax % a.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False) + np.zeros_like(a.data),)

    return _make(np.asarray(out, dtype=a.dtype), "sum", (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax % a.ndim] for ax in axes]))
    return mul(reduce_sum(a, axis, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(out, "reshape", (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.ascontiguousarray(a.data.transpose(axes))
    inverse = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _make(out, "transpose", (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out, "concat", ts, backward)


# ---- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, "matmul", (a, b), backward)


# ---- convolution machinery ---------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, padding: int):
    """Return column matrix [B*Ho*Wo, C*kh*kw] for stride-1 convolution."""
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = h + 2 * padding - kh + 1
    wo = w + 2 * padding - kw + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # [B, C, Ho, Wo, kh, kw] -> [B, Ho, Wo, C, kh, kw] -> matrix
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols_grad: np.ndarray, x_shape, kh: int, kw: int, padding: int,
            ho: int, wo: int) -> np.ndarray:
    """Scatter-add column gradients back to input layout (inverse of _im2col)."""
    b, c, h, w = x_shape
    gx_pad = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols_grad.dtype)
    g6 = cols_grad.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for u in range(kh):
        for v in range(kw):
            gx_pad[:, :, u:u + ho, v:v + wo] += g6[:, :, :, :, u, v]
    if padding:
        return gx_pad[:, :, padding:-padding, padding:-padding]
    return gx_pad


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: int = 1) -> Tensor:
    """Stride-1 2-D convolution with zero padding.

    ``x`` is [batch, channels, H, W]; ``weight`` is [out, in, kh, kw];
    ``bias`` (optional) is [out]. Forward and backward route an im2col
    matrix through BLAS.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be [B, C, H, W], got {x.shape}")
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d: weight {weight.shape} incompatible with input {x.shape}")
    b, c, h, w = x.shape
    oc, _, kh, kw = weight.shape
    cols, ho, wo = _im2col(x.data, kh, kw, padding)
    wmat = weight.data.reshape(oc, c * kh * kw)
    out = (cols @ wmat.T).reshape(b, ho, wo, oc).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, oc, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, oc)
        gw = (gmat.T @ cols).reshape(weight.shape)
        gcols = gmat @ wmat
        gx = _col2im(gcols, x.shape, kh, kw, padding, ho, wo)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, "conv2d", parents, backward)


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. H and W must be even."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2: spatial dims must be even, got {x.shape}")
    ho, wo = h // 2, w // 2
    blocks = x.data.reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(b, c, ho, wo, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros((b, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(b, c, h, w).copy(),)

    return _make(np.ascontiguousarray(out), "max_pool2x2", (x,), backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling (decoder expansion step)."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        b, c, h2, w2 = g.shape
        return (g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return _make(out, "upsample_nearest2x", (x,), backward)


# ---- batch normalization ------------------------------------------------------


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over [B, C, H, W] (or [N, C]).

    Running statistics are plain arrays owned by the calling layer and are
    updated in place in training mode.
    """
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    n = x.size // x.shape[1]

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        if training:
            # standard batchnorm backward through batch statistics
            gxhat = g * gamma.data.reshape(shape)
            gx = (inv_std.reshape(shape) / n) * (
                n * gxhat
                - gxhat.sum(axis=axes).reshape(shape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(shape)
            )
        else:
            gx = g * gamma.data.reshape(shape) * inv_std.reshape(shape)
        return gx.astype(x.dtype, copy=False), gg, gb

    return _make(out.astype(x.dtype, copy=False), "batch_norm",
                 (x, gamma, beta), backward)


# ---- graph primitives ----------------------------------------------------------


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows ``x[index]``; backward scatter-adds into the source rows."""
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(out, "gather_rows", (x,), backward)


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets given per-row ids."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, segment_ids, x.data)

    def backward(g):
        return (g[segment_ids],)

    return _make(out, "segment_sum", (x,), backward)
