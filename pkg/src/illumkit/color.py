"""Color domain operations: illuminants, diagonal correction, gamma.

Illuminants are plain numpy 3-vectors; the canonical form is unit L2
norm with strictly positive components. Diagonal correction is scaled
so the neutral illuminant (1,1,1)/sqrt(3) is the identity map, which
makes render_under_illuminant its exact inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateIlluminantError, ShapeError

DISPLAY_GAMMA = 2.2
_SQRT3 = np.sqrt(3.0)
_MIN_CHANNEL = 1e-6


def neutral_illuminant() -> np.ndarray:
    return np.ones(3) / _SQRT3


@dataclass
class LinearImage:
    """Scene-linear H x W x 3 raster; mask True marks excluded pixels."""

    pixels: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"image must be HxWx3, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)) or np.any(self.pixels < 0):
            raise ShapeError("image pixels must be finite and nonnegative")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.pixels.shape[:2]:
                raise ShapeError(
                    f"mask shape {self.mask.shape} does not match image {self.pixels.shape[:2]}"
                )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def valid_pixels(self) -> np.ndarray:
        """Unmasked pixels as an (n, 3) array."""
        flat = self.pixels.reshape(-1, 3)
        if self.mask is None:
            return flat
        return flat[~self.mask.reshape(-1)]


def normalize_illuminant(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise DegenerateIlluminantError("illuminant has non-finite components")
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise DegenerateIlluminantError(f"illuminant norm {norm} below 1e-12")
    return v / norm


def angular_error(e, e_star) -> float:
    """Angle in degrees between two illuminant vectors.

    Uses atan2(|e x e*|, e . e*), which equals the clamped-arccos of the
    normalized dot product but is exact at 0 and well conditioned near
    0 and 180 degrees.
    """
    e = np.asarray(e, dtype=np.float64).reshape(3)
    e_star = np.asarray(e_star, dtype=np.float64).reshape(3)
    if float(np.linalg.norm(e)) < 1e-30 or float(np.linalg.norm(e_star)) < 1e-30:
        raise DegenerateIlluminantError("angular error undefined for zero vector")
    cross = float(np.linalg.norm(np.cross(e, e_star)))
    dot = float(np.dot(e, e_star))
    return float(np.degrees(np.arctan2(cross, dot)))


def _correction_scale(e) -> np.ndarray:
    e_hat = normalize_illuminant(e)
    if np.any(e_hat <= _MIN_CHANNEL):
        raise DegenerateIlluminantError(f"illuminant {e_hat} has a near-zero channel")
    return (1.0 / _SQRT3) / e_hat


def _apply_channel_scale(patch, scale: np.ndarray):
    if isinstance(patch, LinearImage):
        return LinearImage(patch.pixels * scale, mask=patch.mask)
    arr = np.asarray(patch)
    if arr.ndim >= 3 and arr.shape[-3] == 3:  # (..., 3, H, W) channels-first
        return arr * scale.astype(arr.dtype).reshape(3, 1, 1)
    raise ShapeError(f"expected LinearImage or channels-first tensor, got shape {arr.shape}")


def diagonal_correct(e, patch):
    """von Kries per-channel correction; identity for the neutral illuminant.

    Values are left unclamped; clipping to [0,1] happens only at image
    export.
    """
    return _apply_channel_scale(patch, _correction_scale(e))


def render_under_illuminant(canonical, e):
    """Exact inverse of diagonal_correct: re-light a canonical scene."""
    scale = 1.0 / _correction_scale(e)
    return _apply_channel_scale(canonical, scale)


def _apply_pointwise(image, fn):
    if isinstance(image, LinearImage):
        return LinearImage(fn(image.pixels), mask=image.mask)
    return fn(np.asarray(image))


def gamma_encode(image):
    """clip to [0,1] then power 1/2.2, per channel."""
    return _apply_pointwise(image, lambda a: np.clip(a, 0.0, 1.0) ** (1.0 / DISPLAY_GAMMA))


def gamma_decode(image):
    """Inverse of gamma_encode on [0,1] values."""
    return _apply_pointwise(image, lambda a: np.clip(a, 0.0, 1.0) ** DISPLAY_GAMMA)
