"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` that performs the same
floating point operations in the same order, so both backends produce
bitwise identical results.
"""

import numpy as np

NAME = "numpy"


def im2col3x3(x):
    """(B, H, W, C) -> (B*H*W, 9*C) patches for a 3x3 conv with zero pad 1.

    Column order is (ky, kx, c).
    """
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2, w + 2, c), dtype=np.float64)
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.empty((b, h, w, 3, 3, c), dtype=np.float64)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, :, ky, kx, :] = xp[:, ky:ky + h, kx:kx + w, :]
    return cols.reshape(b * h * w, 9 * c)


def col2im3x3(cols, shape):
    """Adjoint of :func:`im2col3x3`: scatter-add patch gradients."""
    b, h, w, c = shape
    cols = np.asarray(cols, dtype=np.float64).reshape(b, h, w, 3, 3, c)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=np.float64)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky:ky + h, kx:kx + w, :] += cols[:, :, :, ky, kx, :]
    return np.ascontiguousarray(dxp[:, 1:-1, 1:-1, :])


def maxpool2_forward(x):
    """2x2 stride-2 max pool. Returns (out, argmax) with argmax in 0..3.

    Ties resolve to the first position in (dy, dx) row-major order.
    """
    b, h, w, c = x.shape
    win = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    idx = np.argmax(win, axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(dout, idx):
    b, h2, w2, c = dout.shape
    dwin = np.zeros((b, h2, w2, c, 4), dtype=np.float64)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    dx = dwin.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * h2, 2 * w2, c)
    return np.ascontiguousarray(dx)


def conv1d_edge(img, weights, axis):
    """Symmetric 1-D convolution along ``axis`` (0 rows, 1 columns) of an
    (H, W, C) array with edge replication.

    Taps are accumulated as ``w0*x + w1*(x[-1]+x[+1]) + w2*(...)`` so the
    result does not depend on the traversal direction.
    """
    img = np.asarray(img, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    r = (len(weights) - 1) // 2
    n = img.shape[axis]
    pos = np.arange(n)
    take = lambda ix: np.take(img, ix, axis=axis)
    acc = weights[r] * img
    for k in range(1, r + 1):
        lo = take(np.clip(pos - k, 0, n - 1))
        hi = take(np.clip(pos + k, 0, n - 1))
        acc = acc + weights[r + k] * (lo + hi)
    return acc


def iou_matrix(a, b):
    """Pairwise IoU of (n, 4) and (m, 4) corner boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    iw = np.maximum(iw, 0.0)
    ih = np.maximum(ih, 0.0)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union
