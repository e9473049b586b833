"""A small reverse-mode autodiff engine over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
that pushes ``out.grad`` back into them. Calling :meth:`Tensor.backward` on
a scalar walks the recorded graph in reverse topological order. Graph
recording is skipped when no input requires a gradient, so inference pays
only for the forward arithmetic.

Arrays keep whatever float dtype they come in with; the gradient checks run
the same code in float64.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior activations are not needed after propagation
                    node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b):
    """Broadcasting product; used for the per-channel and per-pixel gates."""
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _wrap(a), _wrap(b)
    pick_a = a.data >= b.data

    def backward(g):
        _accum(a, _unbroadcast(np.where(pick_a, g, 0), a.shape))
        _accum(b, _unbroadcast(np.where(pick_a, 0, g), b.shape))

    return _result(np.where(pick_a, a.data, b.data), (a, b), backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        _accum(x, g * mask)

    return _result(x.data * mask, (x,), backward)


def sigmoid(x):
    d = x.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)

    def backward(g):
        _accum(x, g * s * (1 - s))

    return _result(s, (x,), backward)


def concat(tensors, axis=1):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != axis):
            raise ShapeError(f"cannot concatenate shapes {tensors[0].shape} and {t.shape}")
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, part)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def spatial_mean(x):
    """N x C x H x W -> N x C global average pool."""
    n, c, h, w = x.shape

    def backward(g):
        _accum(x, np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.dtype))

    return _result(x.data.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype), (x,), backward)


def linear(x, w, b=None):
    """x: N x I, w: O x I, b: O."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear input has {x.shape[-1]} features, weight expects {w.shape[1]}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        if b is not None:
            _accum(b, g.sum(axis=0))

    return _result(out, parents, backward)


# ------------------------------------------------------------- convolution

def conv_output_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _im2col(xp, k, stride, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # N, C, Ho, Wo, k, k -> N, C*k*k, Ho*Wo
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of x (N x C x H x W) with w (O x C x k x k)."""
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c:
        raise ShapeError(f"conv2d input has {c} channels, kernel expects {ci}")
    if k != k2:
        raise ShapeError("only square kernels are supported")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {h}x{wd}, kernel {k}")
    wmat = w.data.reshape(o, c * k * k)

    if k == 1 and padding == 0:
        xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
        cols = xs.reshape(n, c, ho * wo)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = _im2col(xp, k, stride, ho, wo)
    out = np.matmul(wmat, cols).reshape(n, o, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gm = g.reshape(n, o, ho * wo)
        if w.requires_grad:
            _accum(w, np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, gm.sum(axis=(0, 2)))
        if not x.requires_grad:
            return
        dcols = np.matmul(wmat.T, gm)  # N, C*k*k, Ho*Wo
        if k == 1 and padding == 0:
            dx = dcols.reshape(n, c, ho, wo)
            if stride > 1:
                full = np.zeros(x.shape, dtype=dx.dtype)
                full[:, :, ::stride, ::stride][:, :, :ho, :wo] = dx
                dx = full
            _accum(x, dx)
            return
        dcols = dcols.reshape(n, c, k, k, ho, wo)
        dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=dcols.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
        _accum(x, dxp[:, :, padding:padding + h, padding:padding + wd])

    return _result(out, parents, backward)


# ------------------------------------------------------------------ pooling

def max_pool2d(x, size=2):
    """Non-overlapping max pool; ties route the gradient to the first (row-major) element."""
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d needs at least {size}x{size} input, got {h}x{w}")
    blocks = x.data[:, :, :ho * size, :wo * size].reshape(n, c, ho, size, wo, size)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size)
        dx = np.zeros(x.shape, dtype=g.dtype)
        dx[:, :, :ho * size, :wo * size] = gb
        _accum(x, dx)

    return _result(out, (x,), backward)


def _up_axis(a, axis):
    """x2 linear upsampling along one axis with half-pixel centres and edge clamping."""
    n = a.shape[axis]
    prev = np.take(a, np.r_[0, np.arange(n - 1)], axis=axis)
    nxt = np.take(a, np.r_[np.arange(1, n), n - 1], axis=axis)
    even = 0.75 * a + 0.25 * prev
    odd = 0.75 * a + 0.25 * nxt
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] = 2 * n
    return out.reshape(shape).astype(a.dtype, copy=False)


def _up_axis_T(g, axis):
    """Adjoint of :func:`_up_axis`."""
    n = g.shape[axis] // 2
    shape = list(g.shape)
    shape[axis:axis + 1] = [n, 2]
    g2 = g.reshape(shape)
    even = np.take(g2, 0, axis=axis + 1)
    odd = np.take(g2, 1, axis=axis + 1)
    out = 0.75 * (even + odd)
    # prev contribution: out[i-1] += 0.25*even[i] (i>=1), out[0] += 0.25*even[0]
    # next contribution: out[i+1] += 0.25*odd[i] (i<n-1), out[n-1] += 0.25*odd[n-1]
    idx = [slice(None)] * out.ndim

    def sl(s):
        idx[axis] = s
        return tuple(idx)

    out[sl(slice(0, n - 1))] += 0.25 * even[sl(slice(1, n))]
    out[sl(slice(0, 1))] += 0.25 * even[sl(slice(0, 1))]
    out[sl(slice(1, n))] += 0.25 * odd[sl(slice(0, n - 1))]
    out[sl(slice(n - 1, n))] += 0.25 * odd[sl(slice(n - 1, n))]
    return out.astype(g.dtype, copy=False)


def upsample2x(x):
    """Bilinear x2 upsampling (half-pixel centres, edge clamped)."""
    out = _up_axis(_up_axis(x.data, 2), 3)

    def backward(g):
        _accum(x, _up_axis_T(_up_axis_T(g, 3), 2))

    return _result(out, (x,), backward)


# ------------------------------------------------------------ normalization

def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch norm over (N, H, W).

    In training mode the batch statistics are used and the running buffers
    (plain arrays) are updated in place; in eval mode the buffers are used
    and the op is affine.
    """
    c = x.shape[1]
    if gamma.shape != (c,):
        raise ShapeError(f"batch_norm scale has shape {gamma.shape}, expected ({c},)")
    d = x.data
    shape = (1, c, 1, 1)
    if training:
        m = d.shape[0] * d.shape[2] * d.shape[3]
        mean = d.mean(axis=(0, 2, 3), dtype=np.float64)
        var = d.var(axis=(0, 2, 3), dtype=np.float64)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
        mean = mean.astype(d.dtype)
        var = var.astype(d.dtype)
    else:
        mean = running_mean.astype(d.dtype)
        var = running_var.astype(d.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    xhat = (d - mean.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        _accum(beta, g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        gx = g * gamma.data.reshape(shape)
        if training:
            gmean = gx.mean(axis=(0, 2, 3), keepdims=True)
            gxmean = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
            dx = (gx - gmean - xhat * gxmean) * inv.reshape(shape)
        else:
            dx = gx * inv.reshape(shape)
        _accum(x, dx)

    return _result(out, (x, gamma, beta), backward)


# -------------------------------------------------------------------- output

def log_softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
