"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built and ``TANMIL_PURE`` is not
set in the environment. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _pure

try:
    if os.environ.get("TANMIL_PURE"):
        raise ImportError("pure backend forced by TANMIL_PURE")
    from . import _native
except ImportError:
    _native = None

BACKEND = "native" if _native is not None else "pure"


def backends():
    """Map of available backend name to module."""
    out = {"pure": _pure}
    if _native is not None:
        out["native"] = _native
    return out


def im2col(x, kernel, stride, padding):
    if _native is not None and x.dtype in (np.float32, np.float64):
        return _native.im2col(np.ascontiguousarray(x), kernel, stride, padding)
    return _pure.im2col(x, kernel, stride, padding)


def col2im(cols, shape, kernel, stride, padding):
    if _native is not None and cols.dtype in (np.float32, np.float64):
        return _native.col2im(np.ascontiguousarray(cols), tuple(shape), kernel, stride, padding)
    return _pure.col2im(cols, shape, kernel, stride, padding)


def block_match(prev, nxt, block, radius):
    if _native is not None:
        return _native.block_match(prev, nxt, block, radius)
    return _pure.block_match(prev, nxt, block, radius)
