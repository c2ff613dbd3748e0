"""Checkpoint container tests: round-trips, byte stability, and the full
set of refusal paths (magic, version, checksum, truncation, trailing junk).
"""

import hashlib
import struct

import numpy as np
import pytest

from seccgan.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointBundle,
    CheckpointFormatError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)


def sample_bundle():
    rng = np.random.default_rng(0)
    return CheckpointBundle(
        train_cfg={"method": "sec_cgan", "lam": 0.6, "iterations": 10},
        net_cfg={"z_dim": 8, "image_size": 32},
        iteration=7,
        tensors={
            "g.param.w": rng.normal(size=(3, 4)).astype(np.float32),
            "d.adam_m.w": rng.normal(size=(2, 2, 2)).astype(np.float32),
            "c.param.scalarish": np.float32(1.25).reshape(()),
        },
        adam_steps={"g": 7, "d": 7, "c": 3},
        rng_states={"noise": {"state": 123, "inc": 5}},
    )


def test_roundtrip(tmp_path):
    path = str(tmp_path / "a.ckpt")
    b = sample_bundle()
    save_checkpoint(b, path)
    r = load_checkpoint(path)
    assert r.train_cfg == b.train_cfg
    assert r.net_cfg == b.net_cfg
    assert r.iteration == 7
    assert r.adam_steps == {"g": 7, "d": 7, "c": 3}
    assert r.rng_states == {"noise": {"state": 123, "inc": 5}}
    assert r.version == FORMAT_VERSION
    assert set(r.tensors) == set(b.tensors)
    for name, arr in b.tensors.items():
        got = r.tensors[name]
        assert got.shape == np.asarray(arr).shape
        np.testing.assert_array_equal(got, arr)


def test_repeated_saves_are_byte_identical(tmp_path):
    p1, p2 = str(tmp_path / "x1.ckpt"), str(tmp_path / "x2.ckpt")
    save_checkpoint(sample_bundle(), p1)
    save_checkpoint(sample_bundle(), p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_tensor_order_does_not_matter(tmp_path):
    b = sample_bundle()
    reordered = CheckpointBundle(
        b.train_cfg, b.net_cfg, b.iteration,
        dict(reversed(list(b.tensors.items()))), b.adam_steps, b.rng_states,
    )
    p1, p2 = str(tmp_path / "o1.ckpt"), str(tmp_path / "o2.ckpt")
    save_checkpoint(b, p1)
    save_checkpoint(reordered, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_bad_magic(tmp_path):
    path = str(tmp_path / "bad.ckpt")
    save_checkpoint(sample_bundle(), path)
    blob = bytearray(open(path, "rb").read())
    blob[:8] = b"NOTMAGIC"
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


def test_too_short_file(tmp_path):
    path = str(tmp_path / "tiny.ckpt")
    open(path, "wb").write(MAGIC)
    with pytest.raises(CheckpointFormatError, match="too short"):
        load_checkpoint(path)


def test_unsupported_version(tmp_path):
    path = str(tmp_path / "v2.ckpt")
    b = sample_bundle()
    b.version = 2
    save_checkpoint(b, path)
    with pytest.raises(CheckpointVersionError, match="version 2"):
        load_checkpoint(path)


def test_flipped_payload_byte_fails_checksum(tmp_path):
    path = str(tmp_path / "flip.ckpt")
    save_checkpoint(sample_bundle(), path)
    blob = bytearray(open(path, "rb").read())
    blob[len(blob) // 2] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointIntegrityError, match="checksum"):
        load_checkpoint(path)


def test_truncation_fails(tmp_path):
    path = str(tmp_path / "trunc.ckpt")
    save_checkpoint(sample_bundle(), path)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-40])
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)


def test_trailing_junk_detected(tmp_path):
    # appended bytes change the checksum; a recomputed checksum still fails
    # because the tensor table does not consume the extra bytes
    path = str(tmp_path / "junk.ckpt")
    save_checkpoint(sample_bundle(), path)
    blob = open(path, "rb").read()
    body = blob[:-32] + b"\x00\x00\x00\x00"
    open(path, "wb").write(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointIntegrityError, match="trailing"):
        load_checkpoint(path)


def test_tensors_stored_as_float32_le(tmp_path):
    path = str(tmp_path / "dtype.ckpt")
    save_checkpoint(
        CheckpointBundle({}, {}, 0, {"w": np.array([1.0, 2.5], dtype=np.float64)}),
        path,
    )
    r = load_checkpoint(path)
    assert r.tensors["w"].dtype == np.float32
    np.testing.assert_array_equal(r.tensors["w"], [1.0, 2.5])


def test_zero_dim_tensor_roundtrip(tmp_path):
    path = str(tmp_path / "scalar.ckpt")
    save_checkpoint(CheckpointBundle({}, {}, 0, {"s": np.float32(3.5)}), path)
    r = load_checkpoint(path)
    assert r.tensors["s"].shape == ()
    assert float(r.tensors["s"]) == 3.5


def test_loaded_tensors_are_writable_copies(tmp_path):
    path = str(tmp_path / "copy.ckpt")
    save_checkpoint(CheckpointBundle({}, {}, 0, {"w": np.zeros(3, np.float32)}), path)
    r = load_checkpoint(path)
    r.tensors["w"][0] = 9.0  # must not raise (not a frozen frombuffer view)
