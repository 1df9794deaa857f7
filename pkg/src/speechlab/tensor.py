"""Reverse-mode autodiff on numpy arrays.

A Tensor wraps a float64 ndarray and, when gradients are enabled, remembers
the operation that produced it. backward() replays the recorded trace in
reverse topological order. Operations never mutate their inputs.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable trace recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self):
        """Populate .grad on every trainable tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        acc: dict[int, np.ndarray] = {}
        order = _toposort(self)
        acc[id(self)] = np.ones_like(self.data)
        for node in reversed(order):
            g = acc.get(id(node))
            if g is None or node._backward is None:
                continue
            node._backward(g, acc)
        for node in order:
            if node.requires_grad:
                node.grad = acc.get(id(node), np.zeros_like(node.data))


def _toposort(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(acc: dict[int, np.ndarray], t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._parents):
        return
    key = id(t)
    if key in acc:
        acc[key] = acc[key] + g
    else:
        acc[key] = g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(g, acc):
        _accum(acc, a, _unbroadcast(g, a.data.shape))
        _accum(acc, b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(g, acc):
        _accum(acc, a, _unbroadcast(g * b.data, a.data.shape))
        _accum(acc, b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bw(g, acc):
        _accum(acc, a, _unbroadcast(g / b.data, a.data.shape))
        _accum(acc, b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bw)


def power(a, exponent: float):
    a = as_tensor(a)
    data = a.data ** exponent

    def bw(g, acc):
        _accum(acc, a, g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), bw)


def sqrt(a):
    return power(a, 0.5)


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def bw(g, acc):
        _accum(acc, a, g * data)

    return _make(data, (a,), bw)


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def bw(g, acc):
        _accum(acc, a, g / a.data)

    return _make(data, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def bw(g, acc):
        _accum(acc, a, g * (1.0 - data * data))

    return _make(data, (a,), bw)


def sigmoid(a):
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))

    def bw(g, acc):
        _accum(acc, a, g * data * (1.0 - data))

    return _make(data, (a,), bw)


def relu(a):
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bw(g, acc):
        _accum(acc, a, g * (a.data > 0.0))

    return _make(data, (a,), bw)


def swish(a):
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))
    data = a.data * s

    def bw(g, acc):
        _accum(acc, a, g * (s + a.data * s * (1.0 - s)))

    return _make(data, (a,), bw)


def where(cond, a, b):
    """Select elementwise by a fixed boolean mask (not differentiated)."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    data = np.where(cond, a.data, b.data)

    def bw(g, acc):
        _accum(acc, a, _unbroadcast(np.where(cond, g, 0.0), a.data.shape))
        _accum(acc, b, _unbroadcast(np.where(cond, 0.0, g), b.data.shape))

    return _make(data, (a, b), bw)


# -- reductions & shape --------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, acc):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(acc, a, np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def bw(g, acc):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(acc, a, np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bw(g, acc):
        _accum(acc, a, g.reshape(a.data.shape))

    return _make(data, (a,), bw)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    data = a.data.swapaxes(ax1, ax2)

    def bw(g, acc):
        _accum(acc, a, g.swapaxes(ax1, ax2))

    return _make(data, (a,), bw)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def bw(g, acc):
        _accum(acc, a, g.transpose(inverse))

    return _make(data, (a,), bw)


def take(a, idx):
    """Numpy-style indexing; gradient scatter-adds into the source."""
    a = as_tensor(a)
    data = a.data[idx]

    def bw(g, acc):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        _accum(acc, a, z)

    return _make(data, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g, acc):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _accum(acc, t, g[tuple(sl)])
            start += n

    return _make(data, tuple(tensors), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def bw(g, acc):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        if ga.ndim > a.data.ndim:
            ga = ga.sum(axis=tuple(range(ga.ndim - a.data.ndim)))
        if gb.ndim > b.data.ndim:
            gb = gb.sum(axis=tuple(range(gb.ndim - b.data.ndim)))
        _accum(acc, a, ga)
        _accum(acc, b, gb)

    return _make(data, (a, b), bw)


# -- fused numerical ops -------------------------------------------------


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g, acc):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(acc, a, data * (g - dot))

    return _make(data, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def bw(g, acc):
        _accum(acc, a, g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), bw)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gain.data * xhat + bias.data

    def bw(g, acc):
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        _accum(acc, x, gx)
        red = tuple(range(g.ndim - 1))
        _accum(acc, gain, (g * xhat).sum(axis=red) if red else g * xhat)
        _accum(acc, bias, g.sum(axis=red) if red else g)

    return _make(data, (x, gain, bias), bw)


def conv2d(x, w, bias, stride: int = 2, padding: int = 1):
    """2D convolution, channels-last: x (T, F, Cin), w (kh, kw, Cin, Cout)."""
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    kh, kw, cin, cout = w.data.shape
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    to = (xp.shape[0] - kh) // stride + 1
    fo = (xp.shape[1] - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    patches = win[::stride, ::stride]  # (to, fo, cin, kh, kw)
    data = np.einsum("tfcij,ijco->tfo", patches, w.data, optimize=True) + bias.data

    def bw(g, acc):
        gw = np.einsum("tfcij,tfo->ijco", patches, g, optimize=True)
        _accum(acc, w, gw)
        _accum(acc, bias, g.sum(axis=(0, 1)))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + stride * to:stride, j:j + stride * fo:stride] += g @ w.data[i, j].T
        _accum(acc, x, gxp[padding:xp.shape[0] - padding, padding:xp.shape[1] - padding])

    return _make(data, (x, w, bias), bw)


def depthwise_conv1d(x, w, bias):
    """Per-channel 1D convolution with same padding: x (T, D), w (K, D)."""
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    k, d = w.data.shape
    if k % 2 != 1:
        raise ValueError("kernel size must be odd")
    t = x.data.shape[0]
    pad = k // 2
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    data = np.zeros((t, d))
    for i in range(k):
        data += xp[i:i + t] * w.data[i]
    data = data + bias.data

    def bw(g, acc):
        gw = np.stack([(xp[i:i + t] * g).sum(axis=0) for i in range(k)])
        _accum(acc, w, gw)
        _accum(acc, bias, g.sum(axis=0))
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[i:i + t] += g * w.data[i]
        _accum(acc, x, gxp[pad:pad + t])

    return _make(data, (x, w, bias), bw)


def dropout(x, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; identity when rng is None (eval) or rate is 0."""
    if rng is None or rate <= 0.0:
        return as_tensor(x)
    keep = (rng.random(as_tensor(x).data.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# -- gradient extraction -------------------------------------------------


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss for every named parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return out
