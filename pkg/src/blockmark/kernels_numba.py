"""Numba-jitted 3x3 convolution kernels.

Same contracts as kernels_numpy.  Loops are ordered so the innermost index
runs over the output-channel axis, which is contiguous in both the kernel
and the output; prange parallelism only ever writes disjoint slices, so
results are deterministic for a fixed input.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _forward(x, w, b, out):
    n_, h_, w_, cin = x.shape
    cout = w.shape[3]
    for n in prange(n_):
        for i in range(h_):
            for j in range(w_):
                acc = b.copy()
                for di in range(3):
                    ii = i + di - 1
                    if ii < 0 or ii >= h_:
                        continue
                    for dj in range(3):
                        jj = j + dj - 1
                        if jj < 0 or jj >= w_:
                            continue
                        for c in range(cin):
                            xv = x[n, ii, jj, c]
                            wv = w[di, dj, c]
                            for k in range(cout):
                                acc[k] += xv * wv[k]
                out[n, i, j] = acc


@njit(cache=True, parallel=True)
def _weight_grad(x, dy, dw):
    n_, h_, w_, cin = x.shape
    cout = dy.shape[3]
    for c in prange(cin):
        for di in range(3):
            for dj in range(3):
                acc = np.zeros(cout, dtype=np.float64)
                for n in range(n_):
                    for i in range(h_):
                        ii = i + di - 1
                        if ii < 0 or ii >= h_:
                            continue
                        for j in range(w_):
                            jj = j + dj - 1
                            if jj < 0 or jj >= w_:
                                continue
                            xv = x[n, ii, jj, c]
                            dv = dy[n, i, j]
                            for k in range(cout):
                                acc[k] += xv * dv[k]
                dw[di, dj, c] = acc


def conv3x3_forward(x, w, b):
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    if b is None:
        b = np.zeros(cout, dtype=np.float64)
    out = np.empty((n, h, wd, cout), dtype=np.float64)
    _forward(
        np.ascontiguousarray(x),
        np.ascontiguousarray(w),
        np.ascontiguousarray(b),
        out,
    )
    return out


def conv3x3_input_grad(dy, w):
    wr = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    return conv3x3_forward(dy, wr, None)


def conv3x3_weight_grad(x, dy):
    cin = x.shape[3]
    cout = dy.shape[3]
    dw = np.empty((3, 3, cin, cout), dtype=np.float64)
    _weight_grad(
        np.ascontiguousarray(x),
        np.ascontiguousarray(dy),
        dw,
    )
    return dw
