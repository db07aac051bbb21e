"""Classical statistical illuminant estimators (Minkowski framework).

gray_world, white_patch, shades_of_gray and gray_edge (1st/2nd order)
share one implementation: a per-channel Minkowski p-mean over a value
field, optionally Gaussian-smoothed and differentiated. Inputs are
pre-normalized by their max so every estimator is exactly invariant to
global positive scaling; masked pixels are zeroed before any spatial
filtering and excluded (with the filter-support ring) from statistics,
so painting the masked region can never change an estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .color import LinearImage, normalize_illuminant
from .errors import DegenerateStatisticError, SamplingError

BASELINE_METHODS = ("gray_world", "white_patch", "shades_of_gray", "gray_edge")

_GAUSS_TRUNCATE = 3.0


@dataclass(frozen=True)
class BaselineSpec:
    method: str
    minkowski_p: float = 6.0
    derivative_order: int = 1
    smoothing_sigma: float | None = None  # default: 1.0 for gray_edge, 0 otherwise

    def __post_init__(self):
        if self.method not in BASELINE_METHODS:
            raise ValueError(f"unknown baseline method {self.method!r}")
        if self.minkowski_p < 1:
            raise ValueError("minkowski_p must be >= 1")
        if self.derivative_order not in (1, 2):
            raise ValueError("derivative_order must be 1 or 2")
        if self.smoothing_sigma is not None and self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be nonnegative")

    @property
    def sigma(self) -> float:
        if self.smoothing_sigma is not None:
            return self.smoothing_sigma
        return 1.0 if self.method == "gray_edge" else 0.0


def _minkowski_mean(values: np.ndarray, p: float) -> float:
    if p == 1.0:
        return float(values.mean())
    return float(np.mean(values**p) ** (1.0 / p))


def _derivative_magnitude(channel: np.ndarray, order: int) -> np.ndarray:
    gy, gx = np.gradient(channel)
    if order == 1:
        return np.sqrt(gx * gx + gy * gy)
    gyy, _ = np.gradient(gy)
    _, gxx = np.gradient(gx)
    return np.sqrt(gxx * gxx + gyy * gyy)


def _excluded_after_filter(mask: np.ndarray, sigma: float, order: int) -> np.ndarray:
    """Mask dilated by the smoothing/derivative support."""
    reach = int(math.ceil(_GAUSS_TRUNCATE * sigma)) + order
    if reach == 0:
        return mask
    size = 2 * reach + 1
    return ndimage.maximum_filter(mask.astype(np.uint8), size=size).astype(bool)


def estimate_baseline(spec: BaselineSpec, image: LinearImage) -> np.ndarray:
    """Unit-norm illuminant estimate from a classical statistic."""
    mask = image.mask if image.mask is not None else np.zeros(image.pixels.shape[:2], bool)
    valid = ~mask
    if not valid.any():
        raise SamplingError("all pixels are masked")

    pixels = image.pixels.astype(np.float64)
    peak = float(pixels[valid].max())
    if peak <= 0:
        raise DegenerateStatisticError("image is black on the unmasked region")
    pixels = pixels / peak
    pixels[mask] = 0.0  # masked content must never reach any statistic

    stat = np.zeros(3)
    if spec.method == "gray_world":
        stat = pixels[valid].mean(axis=0)
    elif spec.method == "white_patch":
        stat = pixels[valid].max(axis=0)
    elif spec.method == "shades_of_gray":
        field = pixels
        keep = valid
        if spec.sigma > 0:
            field = np.stack(
                [
                    ndimage.gaussian_filter(pixels[..., c], spec.sigma, truncate=_GAUSS_TRUNCATE, mode="nearest")
                    for c in range(3)
                ],
                axis=-1,
            )
            keep = ~_excluded_after_filter(mask, spec.sigma, 0)
            if not keep.any():
                raise DegenerateStatisticError("mask leaves no pixels outside the filter support")
        stat = np.array([_minkowski_mean(field[keep][:, c], spec.minkowski_p) for c in range(3)])
    elif spec.method == "gray_edge":
        keep = ~_excluded_after_filter(mask, spec.sigma, spec.derivative_order)
        if not keep.any():
            raise DegenerateStatisticError("mask leaves no pixels outside the filter support")
        for c in range(3):
            channel = pixels[..., c]
            if spec.sigma > 0:
                channel = ndimage.gaussian_filter(channel, spec.sigma, truncate=_GAUSS_TRUNCATE, mode="nearest")
            magnitude = _derivative_magnitude(channel, spec.derivative_order)
            stat[c] = _minkowski_mean(magnitude[keep], spec.minkowski_p)

    if not np.all(np.isfinite(stat)) or float(np.linalg.norm(stat)) < 1e-12:
        raise DegenerateStatisticError(f"{spec.method} statistic degenerated to zero")
    return normalize_illuminant(stat)
