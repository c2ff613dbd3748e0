"""Dataset ingestion, label-budget subsetting, imbalance induction,
label-preserving augmentation, and the two samplers the training loop
consumes: weighted real batches and class-balanced noise/label batches.
"""

import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from . import imageops
from .rng import RngStream


class DataError(Exception):
    """Dataset ingestion or consistency failure."""


class IdxFormatError(DataError):
    """Malformed IDX binary (magic, header, or truncated payload)."""


class ConsistencyError(DataError):
    """Images and labels disagree (counts, shapes)."""


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_IMAGE_EXTS = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled image set.

    images: (N, C, H, W) float32 in [0,1]; labels: (N,) int64 in [0, K).
    Classes with zero examples are allowed (folder loads warn about them);
    operations that need every class populated check for themselves.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_counts: np.ndarray = field(init=False, repr=False)
    _class_indices: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ConsistencyError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        n = self.images.shape[0]
        if n == 0:
            raise DataError("empty dataset (N must be > 0)")
        if self.labels.shape != (n,):
            raise ConsistencyError(f"{n} images but labels shape {self.labels.shape}")
        if self.num_classes < 1:
            raise ConsistencyError(f"num_classes must be >= 1, got {self.num_classes}")
        labels = self.labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ConsistencyError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        lo, hi = float(images.min()), float(images.max())
        if lo < 0.0 or hi > 1.0:
            raise ConsistencyError(f"pixels must lie in [0,1], got range [{lo}, {hi}]")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        counts = np.bincount(labels, minlength=self.num_classes).astype(np.int64)
        object.__setattr__(self, "class_counts", counts)
        object.__setattr__(
            self, "_class_indices",
            tuple(np.flatnonzero(labels == c) for c in range(self.num_classes)),
        )

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_size(self):
        return self.images.shape[2]

    @property
    def channels(self):
        return self.images.shape[1]

    def indices_for_class(self, c):
        return self._class_indices[c]


@dataclass(frozen=True)
class AugmentPolicy:
    """Label-preserving augmentation knobs; zeros disable each transform."""

    crop_padding: int = 0
    rotation_range: float = 0.0
    hflip_prob: float = 0.0

    def __post_init__(self):
        if self.crop_padding < 0:
            raise ValueError(f"crop_padding must be >= 0, got {self.crop_padding}")
        if self.rotation_range < 0:
            raise ValueError(f"rotation_range must be >= 0, got {self.rotation_range}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob must be in [0,1], got {self.hflip_prob}")

    @property
    def enabled(self):
        return self.crop_padding > 0 or self.rotation_range > 0 or self.hflip_prob > 0


@dataclass(frozen=True)
class SamplerWeights:
    """Per-class sampling weights, positive and normalized to sum 1."""

    per_class_weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.per_class_weight, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("per_class_weight must be a non-empty 1-d array")
        if (w <= 0).any():
            raise ValueError("all class weights must be > 0")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"class weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "per_class_weight", w)


@dataclass(frozen=True)
class LabeledBatch:
    """Real training batch: images in [-1,1] (m, C, H, W), int64 labels."""

    images: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise ValueError(f"images must be a non-empty (m, C, H, W) tensor, got {tuple(self.images.shape)}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels must be one per image")
        m = float(self.images.abs().max())
        if m > 1.0 + 1e-6:
            raise ValueError(f"batch images must lie in [-1,1], max abs {m}")

    def __len__(self):
        return self.images.shape[0]


@dataclass(frozen=True)
class NoiseLabelBatch:
    """Latent batch: z ~ N(0,1) of shape (k, z_dim), class-balanced labels."""

    z: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.z.ndim != 2 or self.z.shape[0] == 0:
            raise ValueError(f"z must be a non-empty (k, z_dim) tensor, got {tuple(self.z.shape)}")
        if self.labels.shape != (self.z.shape[0],):
            raise ValueError("labels must be one per latent vector")
        counts = torch.bincount(self.labels)
        counts = counts[counts > 0]
        if counts.numel() and int(counts.max() - counts.min()) > 1:
            raise ValueError("noise labels must be class-balanced (max-min count <= 1)")

    def __len__(self):
        return self.z.shape[0]


def normalize(pixels):
    """[0,1] pixels to the [-1,1] range the networks consume."""
    return pixels * 2.0 - 1.0


def denormalize(images):
    """[-1,1] network range back to [0,1] pixels."""
    return (images + 1.0) / 2.0


def _read_idx(path, expected_magic, header_fmt):
    with open(path, "rb") as f:
        blob = f.read()
    header_len = struct.calcsize(header_fmt)
    if len(blob) < header_len:
        raise IdxFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    fields = struct.unpack(header_fmt, blob[:header_len])
    magic = fields[0]
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    count = int(np.prod(fields[1:], dtype=np.int64))
    if len(blob) - header_len < count:
        raise IdxFormatError(
            f"{path}: truncated payload ({len(blob) - header_len} bytes, "
            f"header promises {count})"
        )
    data = np.frombuffer(blob, np.uint8, count=count, offset=header_len)
    return fields[1:], data


def load_idx(images_path, labels_path, channels=1, image_size=None):
    """Load an IDX image/label file pair.

    Pixels are scaled to [0,1]; grayscale is replicated to `channels` planes.
    If image_size is given and differs from the native size, images are
    resized bilinearly (e.g. 28x28 digit files at a 32px training size).
    """
    (n, h, w), raw = _read_idx(images_path, IDX_IMAGES_MAGIC, ">IIII")
    (n_labels,), raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC, ">II")
    if n != n_labels:
        raise ConsistencyError(
            f"{images_path} has {n} images but {labels_path} has {n_labels} labels"
        )
    if n == 0:
        raise DataError(f"{images_path}: empty dataset (N must be > 0)")
    images = raw.reshape(n, 1, h, w).astype(np.float32) / 255.0
    if channels > 1:
        images = np.repeat(images, channels, axis=1)
    if image_size is not None and (h, w) != (image_size, image_size):
        images = imageops.resize_bilinear(images, image_size)
        images = np.clip(images, 0.0, 1.0)
    labels = raw_labels.astype(np.int64)
    return Dataset(images, labels, int(labels.max()) + 1)


def load_image_folder(root, image_size, channels=3):
    """Load root/<class-name>/*.{png,jpg} with class = sorted directory order.

    Undecodable files are collected and reported together; an empty class
    directory is a warning and the class keeps count 0.
    """
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} is not a directory")
    class_names = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not class_names:
        raise DataError(f"dataset root {root!r} has no class subdirectories")

    mode = "L" if channels == 1 else "RGB"
    images, labels, failures = [], [], []
    for ci, name in enumerate(class_names):
        cdir = os.path.join(root, name)
        files = sorted(
            f for f in os.listdir(cdir)
            if os.path.splitext(f)[1].lower() in _IMAGE_EXTS
        )
        if not files:
            warnings.warn(f"class directory {name!r} has no images; kept with count 0")
            continue
        for fname in files:
            path = os.path.join(cdir, fname)
            try:
                with Image.open(path) as im:
                    arr = np.asarray(
                        im.convert(mode).resize((image_size, image_size), Image.BILINEAR)
                    )
            except Exception as exc:
                failures.append(f"{path}: {exc}")
                continue
            if arr.ndim == 2:
                arr = arr[None, :, :]
            else:
                arr = arr.transpose(2, 0, 1)
            images.append(arr.astype(np.float32) / 255.0)
            labels.append(ci)
    if failures:
        raise DataError("undecodable images:\n" + "\n".join(failures))
    if not images:
        raise DataError(f"dataset root {root!r} contains no images")
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64), len(class_names))


def _stratified_take(d, per_class_take, stream):
    keep = []
    for c in range(d.num_classes):
        take = per_class_take[c]
        idx = d.indices_for_class(c)
        if take > len(idx):
            raise ValueError(f"class {c}: cannot take {take} of {len(idx)}")
        if take > 0:
            keep.append(idx[stream.permutation(len(idx))[:take]])
    if not keep:
        raise DataError("subset would be empty")
    rows = np.sort(np.concatenate(keep))
    return Dataset(d.images[rows], d.labels[rows], d.num_classes)


def subset_fraction(d, fraction, seed):
    """Stratified label-budget subset: round(fraction * count) per class,
    drawn without replacement, deterministic in `seed`."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction * len(d) < d.num_classes:
        warnings.warn(
            f"fraction {fraction} keeps fewer examples ({fraction * len(d):.1f}) "
            f"than classes ({d.num_classes}); some classes may vanish"
        )
    take = [int(round(fraction * int(n))) for n in d.class_counts]
    return _stratified_take(d, take, RngStream("subset", seed))


def induce_imbalance(d, keep_fractions, seed):
    """Thin each class c to round(keep_fractions[c] * count_c) examples."""
    if len(keep_fractions) != d.num_classes:
        raise ValueError(
            f"need {d.num_classes} keep fractions, got {len(keep_fractions)}"
        )
    for c, f in enumerate(keep_fractions):
        if not 0.0 < f <= 1.0:
            raise ValueError(f"keep fraction for class {c} must be in (0, 1], got {f}")
    take = [
        int(round(f * int(n))) for f, n in zip(keep_fractions, d.class_counts)
    ]
    for c, t in enumerate(take):
        if t == 0:
            raise DataError(
                f"class {c} would be left empty "
                f"(keep fraction {keep_fractions[c]} of {int(d.class_counts[c])})"
            )
    return _stratified_take(d, take, RngStream("imbalance", seed))


def compute_class_weights(d):
    """Inverse-frequency weights, normalized to sum 1.

    Used as per-example sampling weights these equalize expected per-batch
    class counts on any imbalance.
    """
    if (d.class_counts == 0).any():
        missing = np.flatnonzero(d.class_counts == 0).tolist()
        raise ValueError(f"cannot weight classes with zero examples: {missing}")
    w = 1.0 / d.class_counts.astype(np.float64)
    return SamplerWeights(w / w.sum())


def augment(images, policy, stream):
    """Apply the policy to a (B, C, H, W) batch in [-1,1].

    Order: reflect-pad crop, rotation (bilinear, fill -1), horizontal flip.
    Disabled transforms consume no stream draws, so an all-zero policy is a
    bitwise identity regardless of stream state.
    """
    out = images
    b = images.shape[0]
    if policy.crop_padding > 0:
        p = policy.crop_padding
        offsets = stream.integers(0, 2 * p + 1, size=(b, 2))
        out = imageops.pad_reflect_crop(out, p, offsets)
    if policy.rotation_range > 0:
        angles = stream.uniform(-policy.rotation_range, policy.rotation_range, b)
        out = imageops.rotate_batch(out, angles, fill=-1.0)
    if policy.hflip_prob > 0:
        flips = stream.uniform(0.0, 1.0, b) < policy.hflip_prob
        out = imageops.hflip(out, flips)
    if out is images:
        out = images.copy()
    return np.clip(out, -1.0, 1.0, out=out)


def sample_weighted_batch(d, w, m, stream, policy=None, augment_stream=None):
    """Draw m examples with replacement, each example weighted by its class
    weight, then normalize to [-1,1] and augment.

    P(class c) is proportional to class_counts[c] * w[c]; with
    inverse-frequency weights that is exactly uniform over present classes.
    Index draws come from `stream`; pixel transforms draw from
    `augment_stream` (defaults to `stream`).
    """
    if m <= 0:
        raise ValueError(f"batch size must be > 0, got {m}")
    probs = d.class_counts * w.per_class_weight
    probs = probs / probs.sum()
    classes = stream.choice(d.num_classes, size=m, p=probs)
    members = stream.integers(0, d.class_counts[classes])
    rows = np.fromiter(
        (d.indices_for_class(c)[i] for c, i in zip(classes, members)),
        dtype=np.int64, count=m,
    )
    x = normalize(d.images[rows])
    if policy is not None and policy.enabled:
        x = augment(x, policy, augment_stream if augment_stream is not None else stream)
    return LabeledBatch(
        torch.from_numpy(np.ascontiguousarray(x)), torch.from_numpy(d.labels[rows])
    )


def sample_noise_labels(k, num_classes, z_dim, stream):
    """Draw z ~ N(0,1) with class-balanced labels: floor(k/K) per class plus
    one extra for the first k mod K classes, shuffled within the batch.

    Stream draw order is fixed (z, then the shuffle permutation).
    """
    if k <= 0:
        raise ValueError(f"synthetic batch size must be > 0, got {k}")
    base, extra = divmod(k, num_classes)
    counts = [base + 1 if c < extra else base for c in range(num_classes)]
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), counts)
    z = stream.normal((k, z_dim))
    labels = labels[stream.permutation(k)]
    return NoiseLabelBatch(torch.from_numpy(z), torch.from_numpy(labels))
