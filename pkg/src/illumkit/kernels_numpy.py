"""Pure-numpy convolution and pooling kernels (im2col formulation).

Shapes: activations are (N, C, H, W), conv weights (Cout, Cin, k, k),
biases (Cout,). Max-pooling is fixed 2x2 stride 2; ties go to the first
window position in (row, col) scan order so both backends agree.
"""

from __future__ import annotations

import numpy as np


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
    return cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, _, h, wd = x.shape
    cout, cin, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = _pad(x, pad)
    cols = _im2col(xp, k, stride, ho, wo)
    mat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, cin * k * k)
    y = mat @ w.reshape(cout, -1).T + b
    return np.ascontiguousarray(y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, grad_y: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho, wo = grad_y.shape[2], grad_y.shape[3]

    xp = _pad(x, pad)
    cols = _im2col(xp, k, stride, ho, wo)
    mat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, cin * k * k)
    gy_mat = grad_y.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)

    grad_w = (gy_mat.T @ mat).reshape(w.shape)
    grad_b = gy_mat.sum(axis=0)

    gcols = (gy_mat @ w.reshape(cout, -1)).reshape(n, ho, wo, cin, k, k)
    gcols = gcols.transpose(0, 3, 4, 5, 1, 2)  # (n, cin, k, k, ho, wo)
    gxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += gcols[:, :, i, j]
    grad_x = gxp if pad == 0 else gxp[:, :, pad : pad + h, pad : pad + wd]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2x2_backward(idx: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    n, c, ho, wo = grad_y.shape
    gwin = np.zeros((n, c, ho, wo, 4), dtype=grad_y.dtype)
    np.put_along_axis(gwin, idx[..., None].astype(np.intp), grad_y[..., None], axis=-1)
    gx = gwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * 2, wo * 2)
    return np.ascontiguousarray(gx)
