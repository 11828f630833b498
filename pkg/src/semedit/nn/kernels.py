"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set SEMEDIT_KERNELS=numpy or SEMEDIT_KERNELS=cython to force a backend
(forcing cython raises if the extension is missing).
"""

import os

from semedit.nn import kernels_numpy

_forced = os.environ.get("SEMEDIT_KERNELS", "").lower()

if _forced == "numpy":
    _impl = kernels_numpy
    BACKEND = "numpy"
else:
    try:
        from semedit.nn import _convkernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "SEMEDIT_KERNELS=cython but semedit.nn._convkernels is not built; "
                "run `pip install -e .` or `python setup.py build_ext --inplace`"
            )
        _impl = kernels_numpy
        BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
