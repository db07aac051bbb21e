"""Bright/dark pixel ranking and constrained central/surround patch sampling.

Pixels are ranked by the scalar projection of their RGB value onto the
image mean color; the top/bottom d% become bright/dark sets. Central
patches must straddle both sets and avoid the exclusion mask. The d
schedule escalates until enough patches are accepted, then falls back
to unconstrained random windows (flagged). Network inputs are extracted
from the gamma-encoded raster; ranking and selection use linear pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .color import LinearImage, gamma_encode
from .errors import SamplingError


@dataclass
class PixelRanking:
    projections: np.ndarray  # H x W, -inf at masked pixels
    valid: np.ndarray  # H x W bool, True = usable


@dataclass
class PatchPair:
    central: np.ndarray  # (3, S, S) float32, gamma-encoded
    surround: np.ndarray  # (3, S, S) float32, box-downsampled 2S window
    center_xy: tuple[int, int]  # (x, y) center pixel
    d_used: float  # schedule percentage, 0.0 for random-mode windows
    mode: str  # "bright_dark" or "random"


@dataclass(frozen=True)
class SamplerConfig:
    patch_size: int = 32
    num_patches: int = 15
    d_schedule: tuple[float, ...] = (3.5, 5.0, 10.0)
    max_attempts_per_d: int = 0  # 0 -> 10 * num_patches
    mode: str = "bright_dark"
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 8:
            raise SamplingError("patch_size must be at least 8")
        if self.num_patches < 1:
            raise SamplingError("num_patches must be at least 1")
        if self.mode not in ("bright_dark", "random"):
            raise SamplingError(f"unknown sampling mode {self.mode!r}")
        ds = tuple(float(d) for d in self.d_schedule)
        if any(not 0 < d < 50 for d in ds) or any(a >= b for a, b in zip(ds, ds[1:])):
            raise SamplingError(f"d_schedule must be strictly ascending within (0, 50): {ds}")
        object.__setattr__(self, "d_schedule", ds)

    @property
    def attempts_per_d(self) -> int:
        return self.max_attempts_per_d if self.max_attempts_per_d > 0 else 10 * self.num_patches


@dataclass
class SampleResult:
    """List-like container of accepted pairs plus the fallback warning flag."""

    pairs: list[PatchPair] = field(default_factory=list)
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def rank_projections(image: LinearImage) -> PixelRanking:
    """Scalar projection of every pixel onto the mean color direction."""
    valid = np.ones(image.pixels.shape[:2], dtype=bool) if image.mask is None else ~image.mask
    if not valid.any():
        raise SamplingError("all pixels are masked")
    mean = image.pixels[valid].mean(axis=0, dtype=np.float64)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise SamplingError("mean color vector is degenerate (black image)")
    proj = image.pixels.astype(np.float64) @ (mean / norm)
    proj[~valid] = -np.inf
    return PixelRanking(projections=proj, valid=valid)


def selection_count(d: float, n_valid: int) -> int:
    """ceil((d/100) * n_valid), guarded against float artifacts."""
    return math.ceil(d * n_valid / 100.0 - 1e-9)


def select_bright_dark(ranking: PixelRanking, d: float) -> tuple[np.ndarray, np.ndarray]:
    """Top/bottom d% projection masks; ties broken by row-major index."""
    if not 0 < d < 50:
        raise SamplingError(f"d must be in (0, 50), got {d}")
    valid_idx = np.flatnonzero(ranking.valid.reshape(-1))
    proj = ranking.projections.reshape(-1)[valid_idx]
    k = selection_count(d, valid_idx.size)

    bright_order = valid_idx[np.argsort(-proj, kind="stable")]
    dark_order = valid_idx[np.argsort(proj, kind="stable")]

    shape = ranking.projections.shape
    bright = np.zeros(shape, dtype=bool)
    dark = np.zeros(shape, dtype=bool)
    bright.reshape(-1)[bright_order[:k]] = True
    dark.reshape(-1)[dark_order[:k]] = True
    return bright, dark


def extract_surround(image: LinearImage, center_xy: tuple[int, int], size: int) -> np.ndarray:
    """2x-size window around the center, edge-replicated, box-averaged to size.

    Returns a channels-first (3, size, size) tensor in the image's value
    space (no gamma applied here).
    """
    cx, cy = center_xy
    h, w = image.pixels.shape[:2]
    rows = np.clip(np.arange(cy - size, cy + size), 0, h - 1)
    cols = np.clip(np.arange(cx - size, cx + size), 0, w - 1)
    window = image.pixels[np.ix_(rows, cols)]  # (2S, 2S, 3)
    boxed = window.reshape(size, 2, size, 2, 3).mean(axis=(1, 3))
    return np.ascontiguousarray(boxed.transpose(2, 0, 1))


def _window_slices(cx: int, cy: int, size: int) -> tuple[slice, slice]:
    half = size // 2
    return slice(cy - half, cy - half + size), slice(cx - half, cx - half + size)


def _extract_pair(encoded: LinearImage, cx: int, cy: int, size: int, d: float, mode: str) -> PatchPair:
    rs, cs = _window_slices(cx, cy, size)
    central = np.ascontiguousarray(encoded.pixels[rs, cs].transpose(2, 0, 1), dtype=np.float32)
    surround = extract_surround(encoded, (cx, cy), size).astype(np.float32)
    return PatchPair(central=central, surround=surround, center_xy=(cx, cy), d_used=d, mode=mode)


def sample_patch_pairs(image: LinearImage, cfg: SamplerConfig) -> SampleResult:
    """Deterministic (image, cfg) -> patch pairs, escalating the d schedule."""
    size = cfg.patch_size
    h, w = image.pixels.shape[:2]
    if h < size or w < size:
        raise SamplingError(f"image {h}x{w} smaller than patch size {size}")

    rng = np.random.default_rng(cfg.seed)
    encoded = gamma_encode(image)
    half = size // 2
    cy_range = (half, h - size + half)  # inclusive bounds for center row
    cx_range = (half, w - size + half)
    mask = image.mask

    def draw_center() -> tuple[int, int]:
        cy = int(rng.integers(cy_range[0], cy_range[1] + 1))
        cx = int(rng.integers(cx_range[0], cx_range[1] + 1))
        return cx, cy

    def unmasked(cx: int, cy: int) -> bool:
        if mask is None:
            return True
        rs, cs = _window_slices(cx, cy, size)
        return not mask[rs, cs].any()

    result = SampleResult()

    if cfg.mode == "bright_dark":
        ranking = rank_projections(image)
        for d in cfg.d_schedule:
            if len(result) >= cfg.num_patches:
                break
            bright, dark = select_bright_dark(ranking, d)
            attempts = 0
            while len(result) < cfg.num_patches and attempts < cfg.attempts_per_d:
                attempts += 1
                cx, cy = draw_center()
                rs, cs = _window_slices(cx, cy, size)
                if unmasked(cx, cy) and bright[rs, cs].any() and dark[rs, cs].any():
                    result.pairs.append(_extract_pair(encoded, cx, cy, size, d, "bright_dark"))
        if len(result) < cfg.num_patches:
            result.fallback = True

    # random mode / fallback fill: only the mask can reject a window, so the
    # budget is independent of the bright/dark attempt cap
    attempts = 0
    fill_budget = max(cfg.attempts_per_d, 50 * cfg.num_patches)
    while len(result) < cfg.num_patches and attempts < fill_budget:
        attempts += 1
        cx, cy = draw_center()
        if unmasked(cx, cy):
            result.pairs.append(_extract_pair(encoded, cx, cy, size, 0.0, "random"))

    if len(result) < cfg.num_patches:
        raise SamplingError(
            f"accepted only {len(result)}/{cfg.num_patches} patches after exhausting attempts"
        )
    return result
