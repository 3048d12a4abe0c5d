"""Pure-numpy 3x3 convolution kernels (im2col + BLAS matmul).

Layout conventions shared with kernels_numba:
  x  : (N, H, W, Cin)  float64
  w  : (3, 3, Cin, Cout)
  b  : (Cout,) or None
  y  : (N, H, W, Cout)   stride 1, zero padding 1 (spatial size preserved)
"""

import numpy as np


def _im2col(x):
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.empty((n, h, w, 9 * c), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[..., k * c:(k + 1) * c] = xp[:, di:di + h, dj:dj + w, :]
            k += 1
    return cols.reshape(n * h * w, 9 * c)


def conv3x3_forward(x, w, b):
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    y = _im2col(x) @ w.reshape(9 * cin, cout)
    if b is not None:
        y += b
    return y.reshape(n, h, wd, cout)


def conv3x3_input_grad(dy, w):
    # d/dx of a zero-padded conv is a conv of dy with the 180deg-rotated,
    # channel-transposed kernel.
    wr = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    return conv3x3_forward(dy, wr, None)


def conv3x3_weight_grad(x, dy):
    n, h, wd, cin = x.shape
    cout = dy.shape[3]
    dw = _im2col(x).T @ dy.reshape(n * h * wd, cout)
    return dw.reshape(3, 3, cin, cout)
