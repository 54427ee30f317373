"""Numpy implementations of the hot kernels.

These are the reference versions; the compiled module in ``_native.pyx``
must agree with them bit for bit on integer inputs and to rounding on
floating point inputs.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kernel, stride, padding):
    """Unfold ``x`` (N, C, H, W) into rows of receptive fields.

    Returns an array of shape (C * kernel * kernel, N * OH * OW): row order
    (c, ky, kx), column order (n, oy, ox).
    """
    n, c, h, w = x.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    win = win[:, :, : stride * (oh - 1) + 1 : stride, : stride * (ow - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(
        c * kernel * kernel, n * oh * ow
    )


def col2im(cols, shape, kernel, stride, padding):
    """Scatter-add the rows produced by :func:`im2col` back into an image."""
    n, c, h, w = shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(c, kernel, kernel, n, oh, ow)
    for ky in range(kernel):
        ys = slice(ky, ky + stride * (oh - 1) + 1, stride)
        for kx in range(kernel):
            xs = slice(kx, kx + stride * (ow - 1) + 1, stride)
            out[:, :, ys, xs] += cols[:, ky, kx].transpose(1, 0, 2, 3)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def candidate_order(radius):
    """Displacements (dy, dx) sorted by magnitude, then lexicographically."""
    cands = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    cands.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
    return cands


def block_match(prev, nxt, block, radius):
    """Integer block-matching flow between two uint8 images.

    For every ``block``-sized tile of ``prev`` the displacement (dy, dx)
    within ``radius`` minimising the mean absolute difference against
    ``nxt`` is chosen. The mean runs over the part of the shifted tile that
    stays inside the image, so content leaving the frame is still tracked.
    Costs are compared exactly as integer cross products; the first
    candidate in :func:`candidate_order` wins ties. Returns int32 arrays
    (dy, dx) of shape (ceil(H/b), ceil(W/b)).
    """
    prev = prev.astype(np.int64)
    nxt = nxt.astype(np.int64)
    h, w = prev.shape
    row_starts = np.arange(0, h, block)
    col_starts = np.arange(0, w, block)
    by, bx = len(row_starts), len(col_starts)

    # best cost is best_sad / best_n; best_n = 0 means nothing accepted yet
    best_sad = np.ones((by, bx), dtype=np.int64)
    best_n = np.zeros((by, bx), dtype=np.int64)
    best_dy = np.zeros((by, bx), dtype=np.int32)
    best_dx = np.zeros((by, bx), dtype=np.int32)
    diff = np.empty((h, w), dtype=np.int64)
    inside = np.empty((h, w), dtype=np.int64)

    def block_sums(a):
        return np.add.reduceat(np.add.reduceat(a, row_starts, axis=0), col_starts, axis=1)

    for dy, dx in candidate_order(radius):
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        if y0 >= y1 or x0 >= x1:
            continue
        diff.fill(0)
        inside.fill(0)
        diff[y0:y1, x0:x1] = np.abs(
            prev[y0:y1, x0:x1] - nxt[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
        )
        inside[y0:y1, x0:x1] = 1
        sad = block_sums(diff)
        n = block_sums(inside)
        better = (n > 0) & (sad * best_n < best_sad * n)
        best_sad[better] = sad[better]
        best_n[better] = n[better]
        best_dy[better] = dy
        best_dx[better] = dx
    return best_dy, best_dx
