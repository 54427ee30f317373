# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the im2col/col2im and block-matching kernels."""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef inline (Py_ssize_t, Py_ssize_t) _valid_range(Py_ssize_t k, Py_ssize_t stride, Py_ssize_t padding,
                                                  Py_ssize_t w, Py_ssize_t ow) noexcept nogil:
    # outputs ox with 0 <= ox * stride + k - padding < w
    cdef Py_ssize_t lo = 0, hi = ow
    while lo < ow and lo * stride + k - padding < 0:
        lo += 1
    while hi > lo and (hi - 1) * stride + k - padding >= w:
        hi -= 1
    return lo, hi


def im2col(floating[:, :, :, ::1] x, int kernel, int stride, int padding):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * padding - kernel) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * padding - kernel) // stride + 1
    cdef Py_ssize_t kk = kernel * kernel
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((c * kk, n * oh * ow), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, ch, ky, kx, iy, row, col, lo, hi
    with nogil:
        for ch in range(c):
            for ky in range(kernel):
                for kx in range(kernel):
                    row = (ch * kernel + ky) * kernel + kx
                    lo, hi = _valid_range(kx, stride, padding, w, ow)
                    for b in range(n):
                        for oy in range(oh):
                            iy = oy * stride + ky - padding
                            if iy < 0 or iy >= h:
                                continue
                            col = (b * oh + oy) * ow
                            for ox in range(lo, hi):
                                out[row, col + ox] = x[b, ch, iy, ox * stride + kx - padding]
    return out_arr


def col2im(floating[:, ::1] cols, shape, int kernel, int stride, int padding):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t oh = (h + 2 * padding - kernel) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * padding - kernel) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, ch, ky, kx, iy, row, col, lo, hi
    # (ky, kx) accumulation order per output element matches the numpy
    # fallback, so float sums agree bitwise
    with nogil:
        for ky in range(kernel):
            for kx in range(kernel):
                for ch in range(c):
                    row = (ch * kernel + ky) * kernel + kx
                    lo, hi = _valid_range(kx, stride, padding, w, ow)
                    for b in range(n):
                        for oy in range(oh):
                            iy = oy * stride + ky - padding
                            if iy < 0 or iy >= h:
                                continue
                            col = (b * oh + oy) * ow
                            for ox in range(lo, hi):
                                out[b, ch, iy, ox * stride + kx - padding] += cols[row, col + ox]
    return out_arr


def block_match(prev_in, next_in, int block, int radius):
    cdef const unsigned char[:, ::1] prev = np.ascontiguousarray(prev_in, dtype=np.uint8)
    cdef const unsigned char[:, ::1] nxt = np.ascontiguousarray(next_in, dtype=np.uint8)
    cdef Py_ssize_t h = prev.shape[0], w = prev.shape[1]
    cdef Py_ssize_t by = (h + block - 1) // block, bx = (w + block - 1) // block

    from ._pure import candidate_order
    cands = np.asarray(candidate_order(radius), dtype=np.int32)
    cdef int[:, ::1] cand = cands
    cdef Py_ssize_t ncand = cands.shape[0]

    dy_arr = np.zeros((by, bx), dtype=np.int32)
    dx_arr = np.zeros((by, bx), dtype=np.int32)
    cdef int[:, ::1] out_dy = dy_arr
    cdef int[:, ::1] out_dx = dx_arr

    cdef Py_ssize_t i, j, k, y, x, y0, y1, x0, x1, ya, yb, xa, xb
    cdef int dy, dx, d
    cdef long long sad, n, best_sad, best_n
    with nogil:
        for i in range(by):
            y0 = i * block
            y1 = min(y0 + block, h)
            for j in range(bx):
                x0 = j * block
                x1 = min(x0 + block, w)
                best_sad = 1
                best_n = 0
                for k in range(ncand):
                    dy = cand[k, 0]
                    dx = cand[k, 1]
                    # part of the tile whose shifted position is inside the image
                    ya = max(y0, -dy)
                    yb = min(y1, h - dy)
                    xa = max(x0, -dx)
                    xb = min(x1, w - dx)
                    if ya >= yb or xa >= xb:
                        continue
                    n = (yb - ya) * (xb - xa)
                    sad = 0
                    for y in range(ya, yb):
                        for x in range(xa, xb):
                            d = <int>prev[y, x] - <int>nxt[y + dy, x + dx]
                            sad += d if d >= 0 else -d
                        if best_n > 0 and sad * best_n >= best_sad * n:
                            break
                    if sad * best_n < best_sad * n:
                        best_sad = sad
                        best_n = n
                        out_dy[i, j] = dy
                        out_dx[i, j] = dx
    return dy_arr, dx_arr
