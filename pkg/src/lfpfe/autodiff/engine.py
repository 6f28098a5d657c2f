"""Dense n-d tensors with reverse-mode differentiation.

Each op builds its output with a closure mapping the output gradient to
one gradient per parent. ``Tensor.backward`` walks the recorded graph in
reverse topological order and accumulates into the ``grad`` of leaves.
Storage dtype follows the inputs (float32 by default); reductions
accumulate in float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

try:
    from . import _kernels
except ImportError:  # numba missing: fall back to numpy slicing
    _kernels = None

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_float(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray) and dtype is None and data.dtype in (np.float32, np.float64):
        return data
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_float(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor; gradients accumulate into leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __getitem__(self, idx):
        return index(self, idx)


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a, b = tensor(a), tensor(b)
    if a.dtype != b.dtype:
        # constants follow the differentiable operand's dtype
        if a.requires_grad and not b.requires_grad:
            b = Tensor(b.data.astype(a.dtype))
        elif b.requires_grad and not a.requires_grad:
            a = Tensor(a.data.astype(b.dtype))
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def scalar_mul(x, s: float) -> Tensor:
    x = tensor(x)
    s = x.data.dtype.type(s)
    return _result(x.data * s, (x,), lambda g: (g * s,))


def relu(x) -> Tensor:
    x = tensor(x)
    pos = x.data > 0
    return _result(np.maximum(x.data, x.dtype.type(0)), (x,), lambda g: (g * pos,))


def sigmoid(x) -> Tensor:
    x = tensor(x)
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _result(y, (x,), lambda g: (g * y * (1 - y),))


def log(x) -> Tensor:
    x = tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where clamping is active."""
    x = tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ----------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = tensor(x)
    axes = _norm_axes(axis, x.ndim)
    y = x.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    return _result(y, (x,), lambda g: (np.array(_expand(g, x.shape, axes, keepdims)),))


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    y = x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    scale = x.dtype.type(1.0 / count)
    return _result(y, (x,), lambda g: (np.array(_expand(g, x.shape, axes, keepdims)) * scale,))


def max(x, axis: int, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    x = tensor(x)
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    y = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g if keepdims else np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _result(y if keepdims else np.squeeze(y, axis), (x,), backward)


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error."""
    pred, target = _pair(pred, target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    y = np.abs(diff).mean(dtype=np.float64).astype(pred.dtype)
    scale = pred.dtype.type(1.0 / diff.size)

    def backward(g):
        s = np.sign(diff) * (g * scale)
        return s, -s

    return _result(np.asarray(y), (pred, target), backward)


# -------------------------------------------------------------------- shaping

def reshape(x, shape) -> Tensor:
    x = tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def permute(x, order) -> Tensor:
    x = tensor(x)
    order = tuple(order)
    inv = tuple(np.argsort(order))
    return _result(np.ascontiguousarray(x.data.transpose(order)), (x,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def broadcast_to(x, shape) -> Tensor:
    x = tensor(x)
    return _result(np.ascontiguousarray(np.broadcast_to(x.data, shape)), (x,),
                   lambda g: (_unbroadcast(g, x.shape),))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [tensor(x) for x in xs]
    ndim = xs[0].ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"concat axis {axis} out of range for {ndim}-d tensors")
    axis %= ndim
    try:
        y = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise ValueError(f"shape mismatch in concat: {[x.shape for x in xs]}") from e
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _result(y, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def index(x, idx) -> Tensor:
    """Basic (slice/integer) indexing."""
    x = tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        return (gx,)

    return _result(np.array(x.data[idx]), (x,), backward)


# ---------------------------------------------------------------- linear maps

def linear(x, w) -> Tensor:
    """Contract the last axis of ``x`` (size K) with ``w`` of shape ``(K, O)``."""
    x, w = tensor(x), tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"shape mismatch: {x.shape} @ {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])
    y = (x2 @ w.data).reshape(x.shape[:-1] + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        return gx, gw

    return _result(y, (x, w), backward)


def _plane_slices(ndim, a1, a2, i, j, n1, n2):
    sl = [slice(None)] * ndim
    sl[a1] = slice(i, i + n1)
    sl[a2] = slice(j, j + n2)
    return tuple(sl)


def _im2col_numpy(x: np.ndarray, a1: int, a2: int, kh: int, kw: int) -> np.ndarray:
    nd = x.ndim
    n1, n2 = x.shape[a1], x.shape[a2]
    pad = [(0, 0)] * nd
    pad[a1] = (kh // 2, kh // 2)
    pad[a2] = (kw // 2, kw // 2)
    xp = np.pad(x, pad)
    cols = np.stack([xp[_plane_slices(nd, a1, a2, i, j, n1, n2)] for i in range(kh) for j in range(kw)], axis=-2)
    return cols.reshape(-1, kh * kw * x.shape[-1])


def im2col(x: np.ndarray, a1: int, a2: int, kh: int, kw: int) -> np.ndarray:
    """Zero-padded patches of a channel-last array over axes ``a1 < a2``.

    Returns ``(positions, kh*kw*C)`` with columns ordered ``(i, j, c)`` and
    positions in the row-major order of ``x.shape[:-1]``.
    """
    if _kernels is None:
        return _im2col_numpy(x, a1, a2, kh, kw)
    shape = x.shape
    canon = (int(np.prod(shape[:a1])), shape[a1], int(np.prod(shape[a1 + 1:a2])), shape[a2],
             int(np.prod(shape[a2 + 1:-1])), shape[-1])
    out = np.empty(canon[:5] + (kh * kw, shape[-1]), dtype=x.dtype)
    _kernels.im2col(np.ascontiguousarray(x).reshape(canon), kh, kw, out)
    return out.reshape(-1, kh * kw * shape[-1])


def conv_plane(x, w, axes: tuple[int, int]) -> Tensor:
    """Zero-padded "same" cross-correlation over two axes of a channel-last tensor.

    ``x`` has shape ``(..., C)``; the two ``axes`` (not the last) span the
    convolved plane and every other leading axis acts as batch. ``w`` has
    shape ``(O, C, kh, kw)`` with odd ``kh, kw``. Output is ``(..., O)``.
    """
    x, w = tensor(x), tensor(w)
    O, C, kh, kw = w.shape
    if x.shape[-1] != C:
        raise ValueError(f"channel mismatch: input has {x.shape[-1]}, kernel expects {C}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel must be odd-sized, got {kh}x{kw}")
    nd = x.ndim
    a1, a2 = sorted(a % nd for a in axes)
    if a2 == nd - 1 or a1 == a2:
        raise ValueError(f"invalid conv axes {axes} for shape {x.shape}")
    if kh == 1 and kw == 1:
        return linear(x, _kernel_matrix(w))
    if (a1, a2) != tuple(a % nd for a in axes):
        # kernel rows follow the first named axis
        w = permute(w, (0, 1, 3, 2))
        kh, kw = kw, kh

    cols = im2col(x.data, a1, a2, kh, kw)
    wm = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * C, O)
    y = (cols @ wm).reshape(x.shape[:-1] + (O,))

    def backward(g):
        g = np.ascontiguousarray(g)
        g2 = g.reshape(-1, O)
        gw = None
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(kh, kw, C, O).transpose(3, 2, 0, 1)
        gx = None
        if x.requires_grad:
            # stride-1 "same" transpose conv = correlation with the flipped kernel
            wf = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(kh * kw * O, C)
            gx = (im2col(g, a1, a2, kh, kw) @ wf).reshape(x.shape)
        return gx, gw

    return _result(y, (x, w), backward)


def _kernel_matrix(w: Tensor) -> Tensor:
    """``(O, C, 1, 1)`` kernel as a differentiable ``(C, O)`` matrix."""
    O, C = w.shape[:2]
    return permute(reshape(w, (O, C)), (1, 0))


def conv2d(x, w, bias=None) -> Tensor:
    """Same-padded 2-D cross-correlation, ``x`` is ``(B, C, H, W)``, ``w`` is ``(O, C, kh, kw)``."""
    x = tensor(x)
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (B, C, H, W), got {x.shape}")
    y = conv_plane(permute(x, (0, 2, 3, 1)), w, axes=(1, 2))
    if bias is not None:
        y = add(y, bias)
    return permute(y, (0, 3, 1, 2))
