"""Central finite-difference gradient checking (float64)."""

import numpy as np


def numeric_gradient(f, array, h=1e-3, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``array`` (mutated in place).

    Returns a dense array when ``indices`` is None, else a 1-D array aligned
    with ``indices``.
    """
    if indices is None:
        out = np.zeros_like(array, dtype=np.float64)
        it = np.nditer(array, flags=["multi_index"])
        idx_list = [it.multi_index for _ in it]
    else:
        idx_list = [tuple(i) for i in indices]
        out = np.zeros(len(idx_list))
    for k, idx in enumerate(idx_list):
        old = array[idx]
        array[idx] = old + h
        fp = f()
        array[idx] = old - h
        fm = f()
        array[idx] = old
        val = (fp - fm) / (2 * h)
        if indices is None:
            out[idx] = val
        else:
            out[k] = val
    return out


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def sample_indices(rng, shape, k):
    """Up to ``k`` distinct multi-indices into an array of ``shape``."""
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(i, shape) for i in flat]
