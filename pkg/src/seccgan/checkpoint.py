"""Versioned binary checkpoint container.

Layout: magic, format version, JSON meta block (config echo, iteration, Adam
step counts, RNG stream states), named tensor table with shapes and
little-endian float32 payloads, trailing SHA-256 over everything before it.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CGANCKPT"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint file (magic/layout)."""


class CheckpointVersionError(CheckpointError):
    """Format version not supported by this code."""


class CheckpointIntegrityError(CheckpointError):
    """Truncated or corrupted payload (length/checksum)."""


@dataclass
class CheckpointBundle:
    train_cfg: dict
    net_cfg: dict
    iteration: int
    tensors: dict
    adam_steps: dict = field(default_factory=dict)
    rng_states: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def save_checkpoint(bundle, path):
    """Write the bundle; repeated saves of the same state are byte-identical."""
    meta = {
        "train_cfg": bundle.train_cfg,
        "net_cfg": bundle.net_cfg,
        "iteration": int(bundle.iteration),
        "adam_steps": bundle.adam_steps,
        "rng_states": bundle.rng_states,
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")

    parts = [MAGIC, struct.pack("<I", bundle.version)]
    parts.append(struct.pack("<Q", len(meta_blob)))
    parts.append(meta_blob)
    names = sorted(bundle.tensors)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        # ascontiguousarray would promote 0-d arrays to 1-d; keep ranks exact
        arr = np.asarray(bundle.tensors[name], dtype="<f4")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        nm = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nm)))
        parts.append(nm)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as f:
        f.write(blob)
        f.write(hashlib.sha256(blob).digest())


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointIntegrityError(
                f"{self.path}: truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.blob) - self.pos})"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    """Read and verify a checkpoint; raises before returning any partial state."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 4 + 32:
        raise CheckpointFormatError(f"{path}: too short to be a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {body[:len(MAGIC)]!r}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError(f"{path}: checksum mismatch")

    r = _Reader(body, path)
    r.take(len(MAGIC), "magic")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
        )
    (meta_len,) = r.unpack("<Q", "meta length")
    meta = json.loads(r.take(meta_len, "meta").decode("utf-8"))
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        (ndim,) = r.unpack("<B", "tensor rank")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}") if ndim else ()
        numel = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = r.take(4 * numel, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if r.pos != len(body):
        raise CheckpointIntegrityError(f"{path}: {len(body) - r.pos} trailing bytes")

    return CheckpointBundle(
        train_cfg=meta["train_cfg"],
        net_cfg=meta["net_cfg"],
        iteration=meta["iteration"],
        tensors=tensors,
        adam_steps=meta["adam_steps"],
        rng_states=meta["rng_states"],
        version=version,
    )
