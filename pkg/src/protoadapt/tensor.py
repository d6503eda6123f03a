"""Dense float32 tensors with define-by-run reverse-mode differentiation.

Every op records a backward closure on its output. ``Tensor.backward`` replays
the closures in reverse creation order, which is the tape order. Spatial
tensors are channels-last, ``(h, w, c)`` or batched ``(n, h, w, c)``.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32

_counter = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
        return data
    if isinstance(data, np.floating):
        return np.asarray(data)
    return np.asarray(data, dtype=DTYPE)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents", "_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._id = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        """Backpropagate from this tensor through the recorded tape."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        # Collect every node reachable from here, then replay in reverse creation order.
        seen: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in seen:
                continue
            seen[t._id] = t
            stack.extend(t._parents)
        order = sorted(seen.values(), key=lambda t: t._id, reverse=True)
        grads: dict[int, np.ndarray] = {self._id: np.asarray(grad, dtype=self.data.dtype)}
        for t in order:
            g = grads.pop(t._id, None)
            if g is None:
                continue
            if t._backward is None:
                if t.requires_grad:
                    t._accumulate(g)
                continue
            for parent, pg in t._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        )

    return _make(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def back(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None),
        )

    return _make(out, (a, b), back)


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: ((x, 2.0 * x.data * g),))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: ((x, g * 0.5 / out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: ((x, g * out),))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return _make(np.abs(x.data), (x,), lambda g: ((x, g * np.sign(x.data)),))


def sigmoid(x: Tensor) -> Tensor:
    out = (1.0 / (1.0 + np.exp(-x.data))).astype(x.data.dtype)
    return _make(out, (x,), lambda g: ((x, g * out * (1.0 - out)),))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    return _make(x.data * scale, (x,), lambda g: ((x, g * scale),))


def detach(x: Tensor) -> Tensor:
    """Same values as ``x``; nothing flows back through it."""
    return Tensor(x.data)


# ------------------------------------------------------------------ shaping

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: ((x, g.reshape(src)),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: ((x, np.transpose(g, inv)),))


def flatten_spatial(x: Tensor) -> Tensor:
    """``(..., h, w, c)`` to ``(rows, c)`` without copying."""
    return reshape(x, (-1, x.shape[-1]))


def index(x: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return ((x, full),)

    return _make(x.data[idx], (x,), back)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_wrap(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(zip(xs, np.split(g, splits, axis=axis)))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, back)


# --------------------------------------------------------------- reductions

def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.shape)),)

    return _make(np.asarray(out), (x,), back)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.asarray(out).size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g / count, x.shape)),)

    return _make(np.asarray(out, dtype=x.data.dtype), (x,), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes of ``(h, w, c)`` or ``(n, h, w, c)``."""
    return reduce_mean(x, axis=(-3, -2))


def l2_norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return sqrt(reduce_sum(square(x), axis=axis, keepdims=keepdims))


# -------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        return (
            (a, g @ b.data.T if a.requires_grad else None),
            (b, a.data.T @ g if b.requires_grad else None),
        )

    return _make(a.data @ b.data, (a, b), back)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilised by subtracting the row max."""
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((x, out * (g - dot)),)

    return _make(out, (x,), back)


# ------------------------------------------------------------- convolutions

def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected (h, w, c) or (n, h, w, c), got {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation; kernels are ``(k, k, c_in, c_out)``."""
    k, k2, cin, cout = kernels.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"kernel must be square with odd extent, got {kernels.shape}")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    xb, squeeze = _batched(x.data)
    n, h, w, c = xb.shape
    if c != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"degenerate conv output {ho}x{wo} for input {x.shape}")
    xp = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xb
    # (n, ho, wo, c, k, k) view -> rows of patches ordered (ky, kx, c)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k * k * c)
    wmat = kernels.data.reshape(k * k * c, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)

    def back(g):
        g2 = g.reshape(n * ho * wo, cout)
        gk = (cols.T @ g2).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, k, k, c)
            gxp = np.zeros_like(xp)
            for dy in range(k):
                for dx in range(k):
                    gxp[:, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride] += gcols[:, :, :, dy, dx]
            gx = gxp[:, pad : pad + h, pad : pad + w] if pad else gxp
            if squeeze:
                gx = gx[0]
        return ((x, gx), (kernels, gk))

    return _make(out[0] if squeeze else out, (x, kernels), back)


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """Linear map for bilinear x2 upsampling along one axis (half-pixel centers, edge clamp)."""
    m = np.zeros((2 * n, n), dtype=dtype)
    for i in range(2 * n):
        src = (i + 0.5) / 2.0 - 0.5
        lo = int(np.floor(src))
        t = src - lo
        m[i, min(max(lo, 0), n - 1)] += 1.0 - t
        m[i, min(max(lo + 1, 0), n - 1)] += t
    return m


def upsample2x(x: Tensor) -> Tensor:
    xb, squeeze = _batched(x.data)
    uh = _upsample_matrix(xb.shape[1], xb.dtype)
    uw = _upsample_matrix(xb.shape[2], xb.dtype)
    out = np.einsum("ih,nhwc,jw->nijc", uh, xb, uw, optimize=True)

    def back(g):
        gb = g[None] if squeeze else g
        gx = np.einsum("ih,nijc,jw->nhwc", uh, gb, uw, optimize=True)
        return ((x, gx[0] if squeeze else gx),)

    return _make(out[0] if squeeze else out, (x,), back)


def box_mean3(x: Tensor) -> Tensor:
    """3x3 mean filter with reflect padding; output keeps the input extents."""
    xb, squeeze = _batched(x.data)
    n, h, w, c = xb.shape
    xp = np.pad(xb, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="reflect")
    out = np.zeros_like(xb)
    for dy in range(3):
        for dx in range(3):
            out += xp[:, dy : dy + h, dx : dx + w]
    out /= 9.0

    def back(g):
        gb = (g[None] if squeeze else g) / 9.0
        gp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                gp[:, dy : dy + h, dx : dx + w] += gb
        # fold reflected borders back onto their sources
        gp[:, :, 2] += gp[:, :, 0]
        gp[:, :, w - 1] += gp[:, :, w + 1]
        gp[:, 2] += gp[:, 0]
        gp[:, h - 1] += gp[:, h + 1]
        gx = gp[:, 1 : h + 1, 1 : w + 1]
        return ((x, gx[0] if squeeze else gx),)

    return _make(out[0] if squeeze else out, (x,), back)


# ----------------------------------------------------------- gradient check

def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-3,
    dtype=np.float64,
    coords: Iterable[tuple] | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must map ``x`` to a scalar tensor. The check runs in ``dtype``
    working precision (float64 by default) so that near-zero gradients are not
    swamped by float32 round-off; the ops themselves are unchanged. ``coords``
    restricts the comparison to a subset of indices of ``x``.
    """
    original = x.data
    saved_flag = x.requires_grad
    try:
        x.data = original.astype(dtype)
        x.requires_grad = True
        x.grad = None
        out = f(x)
        if out.data.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
        out.backward()
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.astype(dtype)
        idxs = list(coords) if coords is not None else list(np.ndindex(x.shape))
        worst = 0.0
        with no_grad():
            for i in idxs:
                keep = x.data[i]
                x.data[i] = keep + eps
                fp = float(f(x).data)
                x.data[i] = keep - eps
                fm = float(f(x).data)
                x.data[i] = keep
                cd = (fp - fm) / (2 * eps)
                an = float(analytic[i])
                err = np.abs(an - cd) / (np.abs(an) + np.abs(cd) + 1e-8)
                worst = max(worst, float(err))
        return worst
    finally:
        x.data = original
        x.requires_grad = saved_flag
        x.grad = None
