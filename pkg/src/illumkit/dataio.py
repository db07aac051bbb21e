"""Image decoding (NetPBM P6, PFM, PBM/PGM masks), dataset manifests and
the synthetic ground-truth scene generator.

P6 payloads are treated as gamma-encoded display values and linearized
with the inverse power law unless the caller flags them as linear; PFM
files are scene-linear float32 and round-trip bit-exactly. Synthetic
scenes are Voronoi mosaics of piecewise-constant reflectances, balanced
so the per-channel means are equal (a gray-world scene), rendered under
a random illuminant drawn from a configurable component range.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .color import LinearImage, gamma_decode, normalize_illuminant, render_under_illuminant
from .errors import DataFormatError, DegenerateIlluminantError

MANIFEST_HEADER = ["image", "mask", "r", "g", "b", "subset"]
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# NetPBM / PFM codecs
# ---------------------------------------------------------------------------


def _parse_header_tokens(data: bytes, start: int, count: int) -> tuple[list[bytes], int]:
    """Whitespace/comment-aware NetPBM header tokenizer.

    Returns raw tokens and the offset of the first payload byte (one
    whitespace character after the last token).
    """
    tokens: list[bytes] = []
    i = start
    while len(tokens) < count:
        while i < len(data):
            c = data[i : i + 1]
            if c in b" \t\r\n":
                i += 1
            elif c == b"#":
                nl = data.find(b"\n", i)
                i = len(data) if nl < 0 else nl + 1
            else:
                break
        j = i
        while j < len(data) and data[j : j + 1] not in b" \t\r\n#":
            j += 1
        if j == i:
            raise DataFormatError("truncated NetPBM header")
        tokens.append(data[i:j])
        i = j
    if i >= len(data) or data[i : i + 1] not in b" \t\r\n":
        raise DataFormatError("missing whitespace after NetPBM header")
    return tokens, i + 1


def _decode_p6(data: bytes, path: Path) -> np.ndarray:
    tokens, offset = _parse_header_tokens(data, 2, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad P6 header: {exc}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DataFormatError(f"{path}: bad P6 dimensions {width}x{height} maxval {maxval}")
    two_byte = maxval > 255
    needed = width * height * 3 * (2 if two_byte else 1)
    payload = data[offset : offset + needed]
    if len(payload) < needed:
        raise DataFormatError(f"{path}: truncated P6 payload ({len(payload)} of {needed} bytes)")
    dtype = ">u2" if two_byte else np.uint8
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width, 3)
    return raw.astype(np.float64) / maxval


def _decode_pfm(data: bytes, path: Path) -> np.ndarray:
    tokens, offset = _parse_header_tokens(data, 2, 3)
    try:
        width, height = int(tokens[0]), int(tokens[1])
        scale = float(tokens[2])
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad PFM header: {exc}") from None
    if width < 1 or height < 1 or scale == 0:
        raise DataFormatError(f"{path}: bad PFM dimensions or scale")
    color = data[:2] == b"PF"
    channels = 3 if color else 1
    dtype = "<f4" if scale < 0 else ">f4"
    needed = width * height * channels * 4
    payload = data[offset : offset + needed]
    if len(payload) < needed:
        raise DataFormatError(f"{path}: truncated PFM payload ({len(payload)} of {needed} bytes)")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    arr = np.flipud(arr)  # PFM rows are stored bottom-to-top
    if not color:
        arr = np.repeat(arr, 3, axis=2)
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"{path}: non-finite PFM samples")
    if arr.min() < -1e-6:
        raise DataFormatError(f"{path}: negative PFM samples")
    return np.ascontiguousarray(np.clip(arr.astype(np.float64), 0.0, None))


def decode_image(path, assume_linear: bool = False) -> LinearImage:
    """Decode a P6 or PFM file to a scene-linear image."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    magic = data[:2]
    if magic == b"P6":
        encoded = _decode_p6(data, path)
        pixels = encoded if assume_linear else gamma_decode(encoded)
        return LinearImage(pixels)
    if magic in (b"PF", b"Pf"):
        return LinearImage(_decode_pfm(data, path))
    raise DataFormatError(f"{path}: unknown magic {magic!r} (expected P6 or PFM)")


def decode_mask(path) -> np.ndarray:
    """PBM (P1/P4) or PGM (P2/P5) exclusion mask; True = excluded."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    magic = data[:2]
    if magic in (b"P1", b"P4"):
        tokens, offset = _parse_header_tokens(data, 2, 2)
        width, height = int(tokens[0]), int(tokens[1])
        if magic == b"P4":
            row_bytes = (width + 7) // 8
            needed = row_bytes * height
            payload = data[offset : offset + needed]
            if len(payload) < needed:
                raise DataFormatError(f"{path}: truncated P4 payload")
            bits = np.unpackbits(np.frombuffer(payload, np.uint8).reshape(height, row_bytes), axis=1)
            return bits[:, :width].astype(bool)
        values = data[offset - 1 :].split()
        if len(values) < width * height:
            raise DataFormatError(f"{path}: truncated P1 payload")
        arr = np.array([int(v) for v in values[: width * height]], dtype=np.uint8)
        return arr.reshape(height, width).astype(bool)
    if magic in (b"P2", b"P5"):
        tokens, offset = _parse_header_tokens(data, 2, 3)
        width, height, maxval = (int(t) for t in tokens)
        if magic == b"P5":
            dtype = ">u2" if maxval > 255 else np.uint8
            needed = width * height * (2 if maxval > 255 else 1)
            payload = data[offset : offset + needed]
            if len(payload) < needed:
                raise DataFormatError(f"{path}: truncated P5 payload")
            arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
        else:
            values = data[offset - 1 :].split()
            if len(values) < width * height:
                raise DataFormatError(f"{path}: truncated P2 payload")
            arr = np.array([int(v) for v in values[: width * height]]).reshape(height, width)
        return arr > maxval / 2
    raise DataFormatError(f"{path}: unknown mask magic {magic!r}")


def write_p6(path, encoded_pixels: np.ndarray, maxval: int = 255) -> None:
    """Write gamma-encoded [0,1] pixels as a binary PPM."""
    pixels = np.clip(np.asarray(encoded_pixels), 0.0, 1.0)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DataFormatError(f"P6 writer expects HxWx3, got {pixels.shape}")
    h, w = pixels.shape[:2]
    quant = np.round(pixels * maxval)
    raw = quant.astype(">u2" if maxval > 255 else np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(raw.tobytes())


def write_pfm(path, pixels: np.ndarray) -> None:
    """Write scene-linear pixels as little-endian float32 PFM (lossless)."""
    arr = np.asarray(pixels, dtype="<f4")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataFormatError(f"PFM writer expects HxWx3, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(np.flipud(arr)).tobytes())


def write_pgm(path, mask: np.ndarray) -> None:
    """Write a boolean exclusion mask as binary PGM (255 = excluded)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((mask.astype(np.uint8) * 255).tobytes())


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------


@dataclass
class ManifestRecord:
    image_path: Path
    gt: np.ndarray  # unit-norm ground-truth illuminant
    mask_path: Path | None = None
    subset: str = "default"

    @property
    def image_id(self) -> str:
        return self.image_path.stem


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path
    version: int = MANIFEST_VERSION


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    root = path.parent
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise DataFormatError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")

    records: list[ManifestRecord] = []
    problems: list[str] = []
    for idx, row in enumerate(rows[1:]):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            problems.append(f"record {idx}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            continue
        image_rel, mask_rel, r, g, b, subset = (c.strip() for c in row)
        image_path = root / image_rel
        if not image_path.is_file():
            problems.append(f"record {idx}: image not found: {image_path}")
            continue
        mask_path = None
        if mask_rel:
            mask_path = root / mask_rel
            if not mask_path.is_file():
                problems.append(f"record {idx}: mask not found: {mask_path}")
                continue
        try:
            gt = normalize_illuminant([float(r), float(g), float(b)])
        except (ValueError, DegenerateIlluminantError) as exc:
            problems.append(f"record {idx}: bad ground truth ({exc})")
            continue
        records.append(
            ManifestRecord(image_path=image_path, gt=gt, mask_path=mask_path, subset=subset or "default")
        )
    if problems:
        raise DataFormatError(f"{path}: invalid records:\n" + "\n".join(problems))
    return DatasetManifest(records=records, root=root)


def write_manifest(path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    root = path.parent
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            mask_rel = rec.mask_path.relative_to(root).as_posix() if rec.mask_path else ""
            writer.writerow(
                [rec.image_path.relative_to(root).as_posix(), mask_rel]
                + [f"{v:.17g}" for v in rec.gt]
                + [rec.subset]
            )


def load_record_image(record: ManifestRecord, assume_linear_p6: bool = False) -> LinearImage:
    image = decode_image(record.image_path, assume_linear=assume_linear_p6)
    mask = None
    if record.mask_path is not None:
        mask = decode_mask(record.mask_path)
        if mask.shape != image.pixels.shape[:2]:
            raise DataFormatError(
                f"{record.mask_path}: mask {mask.shape} does not match image {image.pixels.shape[:2]}"
            )
    return LinearImage(image.pixels, mask=mask)


# ---------------------------------------------------------------------------
# Synthetic scene generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSceneSpec:
    width: int = 128
    height: int = 128
    num_regions: int = 60
    reflectance_range: tuple[float, float] = (0.05, 0.55)
    illuminant_range: tuple[float, float] = (0.15, 1.0)
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.reflectance_range
        if not 0 <= lo < hi:
            raise DataFormatError(f"bad reflectance range {self.reflectance_range}")
        ilo, ihi = self.illuminant_range
        if not 0 < ilo < ihi:
            raise DataFormatError(f"bad illuminant range {self.illuminant_range}")
        # worst-case normalized component must stay above 0.1
        if ilo / np.sqrt(ilo * ilo + 2 * ihi * ihi) <= 0.1:
            raise DataFormatError(
                f"illuminant range {self.illuminant_range} allows components <= 0.1 after normalization"
            )
        if self.num_regions < 2 or self.width < 8 or self.height < 8 or self.noise_std < 0:
            raise DataFormatError("bad synthetic scene spec")


def synthesize_scene(spec: SyntheticSceneSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical reflectance mosaic and the illuminant for scene `index`.

    The mosaic is a Voronoi tiling of piecewise-constant reflectances,
    rescaled per channel so its mean color is neutral gray (gray-world
    holds exactly), then scaled so the rendered image cannot exceed 1.
    """
    rng = np.random.default_rng([spec.seed, index])
    lo, hi = spec.reflectance_range
    sites = rng.uniform(0, 1, (spec.num_regions, 2)) * [spec.height, spec.width]
    colors = rng.uniform(lo, hi, (spec.num_regions, 3))

    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width]
    d2 = (ys[..., None] - sites[:, 0]) ** 2 + (xs[..., None] - sites[:, 1]) ** 2
    canonical = colors[np.argmin(d2, axis=-1)]

    channel_means = canonical.reshape(-1, 3).mean(axis=0)
    canonical = canonical * (channel_means.mean() / channel_means)
    # cap so rendering (factor <= sqrt(3)) stays below 1: no saturation at encode
    cap = 0.98 / np.sqrt(3.0)
    peak = canonical.max()
    if peak > cap:
        canonical = canonical * (cap / peak)
    if canonical.std() <= 0:
        raise DataFormatError(f"scene {index}: degenerate mosaic (no bright/dark structure)")

    e = normalize_illuminant(rng.uniform(*spec.illuminant_range, 3))
    return canonical, e


def generate_synthetic(spec: SyntheticSceneSpec, n: int, out_dir) -> DatasetManifest:
    """Write n rendered scenes plus a manifest; deterministic in spec.seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for index in range(n):
        canonical, e = synthesize_scene(spec, index)
        rendered = render_under_illuminant(LinearImage(canonical), e).pixels
        if spec.noise_std > 0:
            rng = np.random.default_rng([spec.seed, index, 1])
            rendered = np.clip(rendered + rng.normal(0, spec.noise_std, rendered.shape), 0.0, None)
        image_path = out_dir / f"scene_{index:04d}.pfm"
        write_pfm(image_path, rendered)
        records.append(ManifestRecord(image_path=image_path, gt=e, subset="synthetic"))
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, records)
    return DatasetManifest(records=records, root=out_dir)
