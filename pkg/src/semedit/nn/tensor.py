"""Minimal reverse-mode autodiff over numpy arrays (NHWC layout).

Just the ops the generators/discriminators need; dtype follows the inputs so
the same graphs run in float32 for training and float64 for finite-difference
gradient checks.  Convolutions lower to im2col/col2im (see kernels backend)
plus BLAS matmuls.
"""

from __future__ import annotations

import contextlib

import numpy as np

from semedit.nn import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / detached passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g)  # copy: g may be shared with a sibling
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss tensor")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _const(x, dtype):
    return np.asarray(x, dtype=dtype)


def add(a: Tensor, b):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
        data = a.data + b.data

        def bwd(g):
            if a.requires_grad:
                a._accum(g)
            if b.requires_grad:
                b._accum(g)

        return _make(data, (a, b), bwd)
    c = _const(b, a.dtype)
    data = a.data + c
    if data.shape != a.shape:
        raise ValueError("constant may not broadcast the tensor up")

    def bwd(g):
        a._accum(g)

    return _make(data, (a,), bwd)


def mul(a: Tensor, b):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
        data = a.data * b.data

        def bwd(g):
            if a.requires_grad:
                a._accum(g * b.data)
            if b.requires_grad:
                b._accum(g * a.data)

        return _make(data, (a, b), bwd)
    c = _const(b, a.dtype)
    data = a.data * c
    if data.shape != a.shape:
        raise ValueError("constant may not broadcast the tensor up")

    def bwd(g):
        a._accum(g * c)

    return _make(data, (a,), bwd)


def scale(a: Tensor, s: float):
    s = float(s)

    def bwd(g):
        a._accum(g * s)

    return _make(a.data * s, (a,), bwd)


def concat(tensors, axis=-1):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(data, tensors, bwd)


def relu(a: Tensor):
    data = np.maximum(a.data, 0)

    def bwd(g):
        a._accum(g * (a.data > 0))

    return _make(data, (a,), bwd)


def leaky_relu(a: Tensor, slope=0.2):
    data = np.where(a.data >= 0, a.data, a.data * slope)

    def bwd(g):
        a._accum(g * np.where(a.data >= 0, 1.0, slope).astype(a.dtype))

    return _make(data, (a,), bwd)


def sigmoid(a: Tensor):
    data = _sigmoid(a.data)

    def bwd(g):
        a._accum(g * data * (1 - data))

    return _make(data, (a,), bwd)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Tensor):
    data = np.tanh(a.data)

    def bwd(g):
        a._accum(g * (1 - data * data))

    return _make(data, (a,), bwd)


def softmax(a: Tensor, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accum(data * (g - dot))

    return _make(data, (a,), bwd)


def mean(a: Tensor):
    inv = 1.0 / a.data.size

    def bwd(g):
        a._accum(np.full(a.shape, float(g) * inv, dtype=a.dtype))

    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), bwd)


def sum_all(a: Tensor):
    def bwd(g):
        a._accum(np.full(a.shape, float(g), dtype=a.dtype))

    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bwd)


def matmul(a: Tensor, b: Tensor):
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(data, (a, b), bwd)


def _pad4(pad):
    if isinstance(pad, int):
        return (pad, pad, pad, pad)
    return tuple(pad)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride=1, pad=0):
    """NHWC convolution; w is (KH, KW, Cin, Cout), pad is int or (t, b, l, r)."""
    pt, pb, pl, pr = _pad4(pad)
    kh, kw, cin, cout = w.shape
    n, h, wid, cx = x.shape
    if cx != cin:
        raise ValueError(f"conv2d channel mismatch: input {cx}, weight {cin}")
    xp = (np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
          if (pt or pb or pl or pr) else np.ascontiguousarray(x.data))
    hp, wp = xp.shape[1], xp.shape[2]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = kernels.im2col(xp, kh, kw, stride, stride)
    wm = w.data.reshape(kh * kw * cin, cout)
    y2 = cols @ wm
    if b is not None:
        y2 += b.data
    data = y2.reshape(n, oh, ow, cout)

    def bwd(g):
        g2 = g.reshape(-1, cout)
        if w.requires_grad:
            w._accum((cols.T @ g2).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=0))
        if x.requires_grad:
            dxp = kernels.col2im(np.ascontiguousarray(g2 @ wm.T), n, hp, wp, cin,
                                 kh, kw, stride, stride)
            x._accum(dxp[:, pt:hp - pb, pl:wp - pr, :] if (pt or pb or pl or pr) else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, bwd)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None, stride=2, pad=1, out_pad=0):
    """NHWC transposed convolution; w is (KH, KW, Cout, Cin).

    Output size is (H-1)*stride + KH - 2*pad + out_pad per spatial dim.
    """
    pt, pb, pl, pr = _pad4(pad)
    kh, kw, cout, cin = w.shape
    n, h, wid, cx = x.shape
    if cx != cin:
        raise ValueError(f"conv_transpose2d channel mismatch: input {cx}, weight {cin}")
    if pb - out_pad < 0 or pr - out_pad < 0:
        raise ValueError("out_pad may not exceed pad")
    hb = (h - 1) * stride + kh
    wb = (wid - 1) * stride + kw
    wm = w.data.reshape(kh * kw * cout, cin)
    x2 = x.data.reshape(-1, cin)
    yb = kernels.col2im(np.ascontiguousarray(x2 @ wm.T), n, hb, wb, cout,
                        kh, kw, stride, stride)
    data = yb[:, pt:hb - (pb - out_pad), pl:wb - (pr - out_pad), :]
    if b is not None:
        data = data + b.data
    data = np.ascontiguousarray(data)

    def bwd(g):
        gp = np.ascontiguousarray(
            np.pad(g, ((0, 0), (pt, pb - out_pad), (pl, pr - out_pad), (0, 0))))
        cols_g = kernels.im2col(gp, kh, kw, stride, stride)
        if w.requires_grad:
            w._accum((cols_g.T @ x2).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 1, 2)))
        if x.requires_grad:
            x._accum((cols_g @ wm).reshape(x.shape))

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, bwd)


def avg_pool2d(x: Tensor, k=2):
    n, h, w, c = x.shape
    if h % k or w % k:
        raise ValueError("avg_pool2d needs sizes divisible by the window")
    data = x.data.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def bwd(g):
        up = np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k)
        x._accum(up.astype(x.dtype))

    return _make(data, (x,), bwd)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-5):
    """Per-(sample, channel) normalization over the spatial axes, affine."""
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    data = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=(0, 1, 2)))
        if beta.requires_grad:
            beta._accum(g.sum(axis=(0, 1, 2)))
        if x.requires_grad:
            m = x.shape[1] * x.shape[2]
            dxhat = g * gamma.data
            s1 = dxhat.sum(axis=(1, 2), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
            x._accum((ivar / m) * (m * dxhat - s1 - xhat * s2))

    return _make(data, (x, gamma, beta), bwd)


def bce_with_logits_mean(z: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on logits; target is a constant array or scalar."""
    t = np.broadcast_to(_const(target, z.dtype), z.shape)
    zd = z.data
    per = np.maximum(zd, 0) - zd * t + np.log1p(np.exp(-np.abs(zd)))
    inv = 1.0 / zd.size

    def bwd(g):
        z._accum(float(g) * inv * (_sigmoid(zd) - t))

    return _make(np.asarray(per.mean(), dtype=z.dtype), (z,), bwd)


def softmax_ce_mean(z: Tensor, target) -> Tensor:
    """Mean per-pixel cross-entropy of channel softmax(z) against constant target
    distributions; target rows may sum to 0 (those pixels contribute nothing)."""
    t = _const(target, z.dtype)
    if t.shape != z.shape:
        raise ValueError("target shape must match logits")
    zmax = z.data.max(axis=-1, keepdims=True)
    ez = np.exp(z.data - zmax)
    sez = ez.sum(axis=-1, keepdims=True)
    lse = np.log(sez) + zmax
    tsum = t.sum(axis=-1, keepdims=True)
    ce = tsum[..., 0] * lse[..., 0] - (t * z.data).sum(axis=-1)
    npix = int(np.prod(z.shape[:-1]))
    inv = 1.0 / npix

    def bwd(g):
        p = ez / sez
        z._accum(float(g) * inv * (p * tsum - t))

    return _make(np.asarray(ce.sum() * inv, dtype=z.dtype), (z,), bwd)
