"""Numba-jitted convolution and pooling kernels (direct loops).

Same contracts as kernels_numpy; single-threaded so results are
reproducible bit-for-bit run to run (fastmath changes rounding, not
determinism). Compiled lazily per dtype (float32 for training, float64
for gradient checks). The forward blocks four output channels per input
load and walks output columns contiguously so LLVM can vectorize the
hot accumulations; the backward splits the vectorizable input-gradient
pass from the weight-gradient reductions.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True, fastmath={"contract"})


@njit(**_JIT)
def _conv2d_forward_jit(xp, w, b, stride, ho, wo):
    n, cin = xp.shape[0], xp.shape[1]
    cout, k = w.shape[0], w.shape[2]
    y = np.empty((n, cout, ho, wo), dtype=xp.dtype)
    r0 = np.empty(wo, dtype=xp.dtype)
    r1 = np.empty(wo, dtype=xp.dtype)
    r2 = np.empty(wo, dtype=xp.dtype)
    r3 = np.empty(wo, dtype=xp.dtype)
    for sn in range(n):
        co = 0
        # four output channels at a time so each input load feeds four FMAs
        while co + 4 <= cout:
            for oi in range(ho):
                for oj in range(wo):
                    r0[oj] = b[co]
                    r1[oj] = b[co + 1]
                    r2[oj] = b[co + 2]
                    r3[oj] = b[co + 3]
                for ci in range(cin):
                    for ki in range(k):
                        ii = oi * stride + ki
                        for kj in range(k):
                            w0 = w[co, ci, ki, kj]
                            w1 = w[co + 1, ci, ki, kj]
                            w2 = w[co + 2, ci, ki, kj]
                            w3 = w[co + 3, ci, ki, kj]
                            for oj in range(wo):
                                xv = xp[sn, ci, ii, oj * stride + kj]
                                r0[oj] += w0 * xv
                                r1[oj] += w1 * xv
                                r2[oj] += w2 * xv
                                r3[oj] += w3 * xv
                for oj in range(wo):
                    y[sn, co, oi, oj] = r0[oj]
                    y[sn, co + 1, oi, oj] = r1[oj]
                    y[sn, co + 2, oi, oj] = r2[oj]
                    y[sn, co + 3, oi, oj] = r3[oj]
            co += 4
        while co < cout:
            for oi in range(ho):
                for oj in range(wo):
                    r0[oj] = b[co]
                for ci in range(cin):
                    for ki in range(k):
                        ii = oi * stride + ki
                        for kj in range(k):
                            w0 = w[co, ci, ki, kj]
                            for oj in range(wo):
                                r0[oj] += w0 * xp[sn, ci, ii, oj * stride + kj]
                for oj in range(wo):
                    y[sn, co, oi, oj] = r0[oj]
            co += 1
    return y


@njit(**_JIT)
def _conv2d_backward_input_jit(w, gy, stride, hp, wp):
    n = gy.shape[0]
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, cin, hp, wp), dtype=gy.dtype)
    for sn in range(n):
        for ci in range(cin):
            for ki in range(k):
                for kj in range(k):
                    co = 0
                    while co + 4 <= cout:
                        w0 = w[co, ci, ki, kj]
                        w1 = w[co + 1, ci, ki, kj]
                        w2 = w[co + 2, ci, ki, kj]
                        w3 = w[co + 3, ci, ki, kj]
                        for oi in range(ho):
                            ii = oi * stride + ki
                            for oj in range(wo):
                                gxp[sn, ci, ii, oj * stride + kj] += (
                                    w0 * gy[sn, co, oi, oj]
                                    + w1 * gy[sn, co + 1, oi, oj]
                                    + w2 * gy[sn, co + 2, oi, oj]
                                    + w3 * gy[sn, co + 3, oi, oj]
                                )
                        co += 4
                    while co < cout:
                        w0 = w[co, ci, ki, kj]
                        for oi in range(ho):
                            ii = oi * stride + ki
                            for oj in range(wo):
                                gxp[sn, ci, ii, oj * stride + kj] += w0 * gy[sn, co, oi, oj]
                        co += 1
    return gxp


# full fastmath: the gw/gb reductions only vectorize if LLVM may reassociate
@njit(cache=True, nogil=True, fastmath=True)
def _conv2d_backward_params_jit(xp, gy, stride, cin, k):
    n, cout, ho, wo = gy.shape
    gw = np.zeros((cout, cin, k, k), dtype=gy.dtype)
    gb = np.zeros(cout, dtype=gy.dtype)
    for sn in range(n):
        for co in range(cout):
            acc = gy.dtype.type(0.0)
            for oi in range(ho):
                for oj in range(wo):
                    acc += gy[sn, co, oi, oj]
            gb[co] += acc
            for ci in range(cin):
                for ki in range(k):
                    for kj in range(k):
                        s = gy.dtype.type(0.0)
                        for oi in range(ho):
                            ii = oi * stride + ki
                            for oj in range(wo):
                                s += gy[sn, co, oi, oj] * xp[sn, ci, ii, oj * stride + kj]
                        gw[co, ci, ki, kj] += s
    return gw, gb


@njit(**_JIT)
def _maxpool_forward_jit(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.uint8)
    for sn in range(n):
        for ch in range(c):
            for oi in range(ho):
                for oj in range(wo):
                    best = x[sn, ch, 2 * oi, 2 * oj]
                    code = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[sn, ch, 2 * oi + di, 2 * oj + dj]
                            if v > best:
                                best = v
                                code = 2 * di + dj
                    y[sn, ch, oi, oj] = best
                    idx[sn, ch, oi, oj] = code
    return y, idx


@njit(**_JIT)
def _maxpool_backward_jit(idx, gy):
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, ho * 2, wo * 2), dtype=gy.dtype)
    for sn in range(n):
        for ch in range(c):
            for oi in range(ho):
                for oj in range(wo):
                    code = idx[sn, ch, oi, oj]
                    gx[sn, ch, 2 * oi + code // 2, 2 * oj + code % 2] = gy[sn, ch, oi, oj]
    return gx


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    h, wd = x.shape[2], x.shape[3]
    k = w.shape[2]
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    return _conv2d_forward_jit(_pad(x, pad), np.ascontiguousarray(w), np.ascontiguousarray(b), stride, ho, wo)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, grad_y: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, wd = x.shape[2], x.shape[3]
    xp = _pad(x, pad)
    wc = np.ascontiguousarray(w)
    gyc = np.ascontiguousarray(grad_y)
    gxp = _conv2d_backward_input_jit(wc, gyc, stride, xp.shape[2], xp.shape[3])
    gw, gb = _conv2d_backward_params_jit(xp, gyc, stride, w.shape[1], w.shape[2])
    gx = gxp if pad == 0 else np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + wd])
    return gx, gw, gb


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _maxpool_forward_jit(np.ascontiguousarray(x))


def maxpool2x2_backward(idx: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    return _maxpool_backward_jit(idx, np.ascontiguousarray(grad_y))
