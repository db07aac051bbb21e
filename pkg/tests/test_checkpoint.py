"""ILLK container round-trips and error handling."""

import numpy as np
import pytest

from illumkit.checkpoint import Checkpoint, load_checkpoint, load_patches, save_checkpoint, save_patches
from illumkit.errors import CheckpointError
from illumkit.layers import Parameter
from illumkit.sampling import PatchPair


def make_checkpoint(rng):
    params = {}
    for name, shape, lr in [("a.w", (4, 3), 1.0), ("a.b", (4,), 1.0), ("frozen.w", (2, 2, 3, 3), 0.0)]:
        p = Parameter(rng.standard_normal(shape).astype(np.float32), lr_mult=lr)
        p.momentum_buf[...] = rng.standard_normal(shape).astype(np.float32)
        params[name] = p
    return Checkpoint(stage_id="2", step=1234, arch={"variant": "contextual", "input_size": 32}, params=params)


def test_bit_exact_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ckpt = make_checkpoint(rng)
    path = tmp_path / "c.bin"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded.stage_id == "2" and loaded.step == 1234
    assert loaded.arch == ckpt.arch
    assert set(loaded.params) == set(ckpt.params)
    for name, p in ckpt.params.items():
        q = loaded.params[name]
        assert q.value.tobytes() == p.value.astype("<f4").tobytes()
        assert q.momentum_buf.tobytes() == p.momentum_buf.astype("<f4").tobytes()
        assert q.lr_mult == p.lr_mult


def test_save_load_save_identical_bytes(tmp_path):
    rng = np.random.default_rng(1)
    ckpt = make_checkpoint(rng)
    p1, p2 = tmp_path / "c1.bin", tmp_path / "c2.bin"
    save_checkpoint(p1, ckpt)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_starts_file(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "c.bin"
    save_checkpoint(path, make_checkpoint(rng))
    assert path.read_bytes()[:4] == b"ILLK"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + bytes(100))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "c.bin"
    save_checkpoint(path, make_checkpoint(rng))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_patches_section_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    pairs = [
        PatchPair(
            central=rng.uniform(0, 1, (3, 8, 8)).astype(np.float32),
            surround=rng.uniform(0, 1, (3, 8, 8)).astype(np.float32),
            center_xy=(10, 12),
            d_used=3.5,
            mode="bright_dark",
        )
        for _ in range(3)
    ]
    path = tmp_path / "p.bin"
    save_patches(path, ["scene_0000"], [pairs])
    loaded = load_patches(path)
    assert len(loaded) == 3
    for entry, pair in zip(loaded, pairs):
        assert entry["image_id"] == "scene_0000"
        assert entry["mode"] == "bright_dark"
        assert (entry["center_x"], entry["center_y"]) == pair.center_xy
        assert entry["central"].tobytes() == pair.central.tobytes()
        assert entry["surround"].tobytes() == pair.surround.tobytes()


def test_sections_not_interchangeable(tmp_path):
    rng = np.random.default_rng(5)
    path = tmp_path / "c.bin"
    save_checkpoint(path, make_checkpoint(rng))
    with pytest.raises(CheckpointError, match="section"):
        load_patches(path)
