"""Binary "ILLK" container for checkpoints and exported patch tensors.

Layout: magic "ILLK", format version u32 LE, manifest length u32 LE,
JSON manifest (utf-8), then raw little-endian float32 payload blocks in
manifest order. Checkpoint manifests list (name, shape, lr_mult) per
parameter plus the optimizer step, stage id and the architecture config;
each parameter stores value bytes followed by momentum bytes. Patch
sections store central/surround tensor blocks. Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .layers import Parameter

MAGIC = b"ILLK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    stage_id: str
    step: int
    arch: dict  # ArchConfig fields
    params: dict[str, Parameter]

    def param_names(self) -> list[str]:
        return sorted(self.params)


def _write_container(path, manifest: dict, blocks: list[bytes]) -> None:
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for block in blocks:
            fh.write(block)


def _read_container(path) -> tuple[dict, bytes]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (length,) = struct.unpack_from("<I", data, 8)
    manifest_bytes = data[12 : 12 + length]
    if len(manifest_bytes) < length:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(manifest_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad manifest: {exc}") from None
    return manifest, data[12 + length :]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries = []
    blocks = []
    for name in ckpt.param_names():
        p = ckpt.params[name]
        value = np.ascontiguousarray(p.value, dtype="<f4")
        momentum = np.ascontiguousarray(p.momentum_buf, dtype="<f4")
        entries.append({"name": name, "shape": list(p.value.shape), "lr_mult": p.lr_mult})
        blocks.append(value.tobytes())
        blocks.append(momentum.tobytes())
    manifest = {
        "section": "checkpoint",
        "stage_id": ckpt.stage_id,
        "step": ckpt.step,
        "arch": ckpt.arch,
        "params": entries,
    }
    _write_container(path, manifest, blocks)


def load_checkpoint(path) -> Checkpoint:
    manifest, payload = _read_container(path)
    if manifest.get("section") != "checkpoint":
        raise CheckpointError(f"{path}: not a checkpoint section: {manifest.get('section')!r}")
    params: dict[str, Parameter] = {}
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + 2 * nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at parameter {entry['name']}")
        value = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
        momentum = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
        p = Parameter(value, lr_mult=float(entry["lr_mult"]))
        p.momentum_buf = momentum
        params[entry["name"]] = p
    return Checkpoint(
        stage_id=manifest["stage_id"], step=int(manifest["step"]), arch=manifest["arch"], params=params
    )


def save_patches(path, image_ids: list[str], pairs_per_image: list[list]) -> None:
    """Patch tensor export: same container, section type 'patches'."""
    entries = []
    blocks = []
    for image_id, pairs in zip(image_ids, pairs_per_image):
        for pair in pairs:
            entries.append(
                {
                    "image_id": image_id,
                    "center_x": pair.center_xy[0],
                    "center_y": pair.center_xy[1],
                    "d_used": pair.d_used,
                    "mode": pair.mode,
                    "shape": list(pair.central.shape),
                }
            )
            blocks.append(np.ascontiguousarray(pair.central, dtype="<f4").tobytes())
            blocks.append(np.ascontiguousarray(pair.surround, dtype="<f4").tobytes())
    _write_container(path, {"section": "patches", "patches": entries}, blocks)


def load_patches(path) -> list[dict]:
    """Patch entries with 'central'/'surround' tensors restored."""
    manifest, payload = _read_container(path)
    if manifest.get("section") != "patches":
        raise CheckpointError(f"{path}: not a patches section: {manifest.get('section')!r}")
    out = []
    offset = 0
    for entry in manifest["patches"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        nbytes = count * 4
        if offset + 2 * nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated patch payload")
        central = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
        surround = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
        out.append({**entry, "central": central, "surround": surround})
    return out
