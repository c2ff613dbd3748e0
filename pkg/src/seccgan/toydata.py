"""Procedural 10-class digit images for self-contained experiments.

Renders 5x7 seven-segment-style glyphs at 32x32 with per-example scale,
rotation, offset, contrast and stroke-softness jitter plus faint mottle.
This is the `synthetic` dataset source of the digits32 profile: small enough
to train on a laptop core, hard enough that label budget matters.

Strokes are rendered soft (per-example Gaussian blur) on purpose: a small
transposed-convolution generator emits smooth images, and against razor-sharp
glyphs a discriminator wins on sharpness alone, which starves the adversarial
game and the confidence gate. Soft strokes keep the real manifold within the
generator's reach so discriminator confidence stays informative.
"""

import numpy as np

from . import imageops
from .rng import RngStream

_GLYPHS = """
01110 00100 01110 11111 00010 11111 00110 11111 01110 01110
10001 01100 10001 00010 00110 10000 01000 00001 10001 10001
10011 00100 00001 00100 01010 11110 10000 00010 10001 10001
10101 00100 00010 00010 10010 00001 11110 00100 01110 01111
11001 00100 00100 00001 11111 00001 10001 01000 10001 00001
10001 00100 01000 10001 00010 10001 10001 01000 10001 00010
01110 01110 11111 01110 00010 01110 01110 01000 01110 01100
"""


def _glyph_bank():
    rows = [line.split() for line in _GLYPHS.strip().splitlines()]
    bank = np.zeros((10, 7, 5), dtype=np.float64)
    for r, row in enumerate(rows):
        for digit, bits in enumerate(row):
            bank[digit, r] = [float(b) for b in bits]
    return bank


_BANK = _glyph_bank()


def make_digits(n, seed, image_size=32, name="toy-digits"):
    """Render n jittered digit images; labels cycle 0..9 then shuffle.

    Deterministic in (n, seed, image_size, name); pixel range [0,1].
    """
    if n <= 0:
        raise ValueError(f"n must be > 0, got {n}")
    stream = RngStream(name, seed)
    s = image_size

    labels = np.arange(n, dtype=np.int64) % 10
    labels = labels[stream.permutation(n)]

    # per-example jitter; ranges are wide enough that a handful of examples
    # per class cannot cover the pose and contrast manifold
    heights = stream.uniform(0.42 * s, 0.80 * s, n)      # glyph height in px
    angles = np.deg2rad(stream.uniform(-22.0, 22.0, n))
    jitter = stream.uniform(-0.12 * s, 0.12 * s, (n, 2))
    fg = stream.uniform(0.50, 1.0, n)
    bg = stream.uniform(0.0, 0.22, n)
    sigma = stream.uniform(0.02, 0.06, n)
    softness = stream.uniform(0.8, 1.4, n) * (s / 32.0)
    noise = stream.normal((n, 1, s, s)).astype(np.float64)

    # inverse affine from output pixels to glyph pixels:
    # p_glyph = (1/scale) R(-a) (p_out - center_out - jitter) + center_glyph
    gh, gw = _BANK.shape[1:]
    scale = heights / gh
    cos, sin = np.cos(angles), np.sin(angles)
    mats = np.zeros((n, 2, 2))
    mats[:, 0, 0] = cos / scale
    mats[:, 0, 1] = sin / scale
    mats[:, 1, 0] = -sin / scale
    mats[:, 1, 1] = cos / scale
    center_out = np.tile((s - 1) / 2.0, (n, 2)) + jitter
    center_glyph = np.array([(gh - 1) / 2.0, (gw - 1) / 2.0])
    offsets = center_glyph - np.einsum("nij,nj->ni", mats, center_out)

    glyphs = _BANK[labels][:, None, :, :]                # (n, 1, 7, 5)
    mask = imageops.affine_sample(glyphs, mats, offsets, out_hw=(s, s), fill=0.0)

    images = bg[:, None, None, None] + (fg - bg)[:, None, None, None] * mask
    images += sigma[:, None, None, None] * noise
    images = imageops.gaussian_blur(images, softness)
    np.clip(images, 0.0, 1.0, out=images)
    return images.astype(np.float32), labels


def make_digit_datasets(n_train, n_test, seed, image_size=32):
    """Disjoint train/test digit sets (separate named streams of one seed)."""
    from .data import Dataset

    train_x, train_y = make_digits(n_train, seed, image_size, name="toy-digits-train")
    test_x, test_y = make_digits(n_test, seed, image_size, name="toy-digits-test")
    return Dataset(train_x, train_y, 10), Dataset(test_x, test_y, 10)
