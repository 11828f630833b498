"""Pure-numpy patch extraction/accumulation kernels (fallback backend).

All convolutions in the network stack reduce to im2col + BLAS matmul for the
forward pass and matmul + col2im for the input gradient.  Inputs are NHWC and
already zero-padded by the caller; these kernels never pad.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Extract sliding patches from a padded NHWC array.

    Returns a (N*OH*OW, kh*kw*C) matrix whose rows are flattened patches.
    """
    n, hp, wp, c = xp.shape
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    sn, sy, sx, sc = xp.strides
    view = as_strided(
        xp,
        shape=(n, oh, ow, kh, kw, c),
        strides=(sn, sy * sh, sx * sw, sy, sx, sc),
        writeable=False,
    )
    return np.array(view, order="C").reshape(n * oh * ow, kh * kw * c)


def col2im(cols: np.ndarray, n: int, hp: int, wp: int, c: int,
           kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Scatter-add patch rows back onto a zeroed padded NHWC array.

    Exact adjoint of :func:`im2col`; overlapping patch positions accumulate.
    """
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    xp = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    cols6 = cols.reshape(n, oh, ow, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += cols6[:, :, :, i, j, :]
    return xp
