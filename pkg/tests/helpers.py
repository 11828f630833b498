"""Shared test oracles: finite-difference gradients and brute-force references."""

import numpy as np

from semedit.nn.tensor import Tensor


def fd_gradient(loss_fn, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar loss wrt every element of arr."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        dn = loss_fn()
        flat[i] = orig
        gflat[i] = (up - dn) / (2 * eps)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                abs_floor: float = 1e-8) -> float:
    """Worst-case relative error, ignoring entries where both are ~zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor)
    err = np.abs(a - n) / denom
    err[np.abs(a - n) < abs_floor] = 0.0
    return float(err.max()) if err.size else 0.0


def check_gradients(build_loss, tensors: dict[str, Tensor], rtol: float = 1e-4,
                    eps: float = 1e-6) -> dict[str, float]:
    """Compare autodiff gradients of build_loss() against central differences.

    All tensors must be float64 leaves with requires_grad=True.  Returns the
    per-tensor worst relative error; asserts it stays under rtol.
    """
    for name, t in tensors.items():
        assert t.data.dtype == np.float64, f"{name}: gradient checks need float64"
        t.grad = None
    loss = build_loss()
    loss.backward()
    errs = {}
    for name, t in tensors.items():
        assert t.grad is not None, f"{name}: no gradient reached this tensor"
        analytic = t.grad.copy()
        numeric = fd_gradient(lambda: build_loss().item(), t.data, eps=eps)
        errs[name] = max_rel_err(analytic, numeric)
        assert errs[name] < rtol, (
            f"{name}: max rel err {errs[name]:.3e} >= {rtol:g}")
    return errs


def conv2d_reference(x, w, b, stride=1, pad=(0, 0, 0, 0)):
    """Naive NHWC convolution (nested loops) used as a value oracle."""
    pt, pb, pl, pr = pad
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    n, hp, wp, cin = xp.shape
    kh, kw, _, cout = w.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    y = np.zeros((n, oh, ow, cout), dtype=x.dtype)
    for bi in range(n):
        for oy in range(oh):
            for ox in range(ow):
                patch = xp[bi, oy * stride:oy * stride + kh, ox * stride:ox * stride + kw, :]
                for co in range(cout):
                    y[bi, oy, ox, co] = (patch * w[:, :, :, co]).sum()
    if b is not None:
        y += b
    return y
