"""Batched bilinear geometry on (B, C, H, W) float arrays.

One inverse-affine sampler covers rotation, resizing and the synthetic digit
renderer; everything is vectorized over the batch so the training loop never
loops over images in Python for per-pixel work.
"""

import numpy as np


def affine_sample(images, inv_mats, inv_offsets, out_hw=None, fill=0.0, border="fill"):
    """Resample images at src = inv_mat @ (i, j) + inv_offset per output pixel.

    Coordinates are (row, col) pixel centers. Bilinear interpolation; with
    border="fill", sample corners outside the input read as `fill` (so edges
    blend smoothly, like grid-constant padding); with border="edge", indices
    clamp to the image (replicate padding, the usual resize convention).

    images: (B, C, H, W); inv_mats: (B, 2, 2); inv_offsets: (B, 2).
    """
    images = np.asarray(images)
    B, C, H, W = images.shape
    oh, ow = out_hw if out_hw is not None else (H, W)

    ii, jj = np.meshgrid(np.arange(oh, dtype=np.float64), np.arange(ow, dtype=np.float64), indexing="ij")
    coords = np.stack([ii.ravel(), jj.ravel()])             # (2, P)
    src = np.asarray(inv_mats, dtype=np.float64) @ coords   # (B, 2, P)
    src += np.asarray(inv_offsets, dtype=np.float64)[:, :, None]
    si, sj = src[:, 0], src[:, 1]                           # (B, P)

    i0 = np.floor(si)
    j0 = np.floor(sj)
    fi = si - i0
    fj = sj - j0
    i0 = i0.astype(np.int64)
    j0 = j0.astype(np.int64)

    bidx = np.arange(B)[:, None]
    out = np.zeros((B, coords.shape[1], C), dtype=np.float64)
    for di in (0, 1):
        for dj in (0, 1):
            idx_i = i0 + di
            idx_j = j0 + dj
            w = (fi if di else 1.0 - fi) * (fj if dj else 1.0 - fj)
            ci = np.clip(idx_i, 0, H - 1)
            cj = np.clip(idx_j, 0, W - 1)
            vals = images[bidx, :, ci, cj]                  # (B, P, C)
            if border == "fill":
                valid = (idx_i >= 0) & (idx_i < H) & (idx_j >= 0) & (idx_j < W)
                vals = np.where(valid[:, :, None], vals, fill)
            out += w[:, :, None] * vals

    out = out.transpose(0, 2, 1).reshape(B, C, oh, ow)
    return out.astype(images.dtype, copy=False)


def rotate_batch(images, angles_deg, fill=0.0):
    """Rotate each image about its center by its own angle, constant fill outside."""
    B, C, H, W = images.shape
    th = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    cos, sin = np.cos(th), np.sin(th)
    ci, cj = (H - 1) / 2.0, (W - 1) / 2.0
    mats = np.zeros((B, 2, 2))
    mats[:, 0, 0] = cos
    mats[:, 0, 1] = sin
    mats[:, 1, 0] = -sin
    mats[:, 1, 1] = cos
    centers = np.array([ci, cj])
    offsets = centers - mats @ centers
    return affine_sample(images, mats, offsets, fill=fill, border="fill")


def resize_bilinear(images, out_size):
    """Resize to (out_size, out_size) with half-pixel-center sampling, edge clamp."""
    B, C, H, W = images.shape
    oh = ow = int(out_size)
    if (oh, ow) == (H, W):
        return images.copy()
    mats = np.zeros((B, 2, 2))
    mats[:, 0, 0] = H / oh
    mats[:, 1, 1] = W / ow
    offsets = np.tile([0.5 * H / oh - 0.5, 0.5 * W / ow - 0.5], (B, 1))
    return affine_sample(images, mats, offsets, out_hw=(oh, ow), border="edge")


def pad_reflect_crop(images, padding, offsets):
    """Reflect-pad by `padding` then crop back to the original size.

    offsets: (B, 2) int array of (row, col) crop origins in [0, 2*padding].
    offsets == (padding, padding) is the identity crop.
    """
    B, C, H, W = images.shape
    p = int(padding)
    if p == 0:
        return images.copy()
    padded = np.pad(images, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    out = np.empty_like(images)
    for b in range(B):
        oy, ox = int(offsets[b, 0]), int(offsets[b, 1])
        out[b] = padded[b, :, oy : oy + H, ox : ox + W]
    return out


def hflip(images, mask):
    """Flip the selected images left-right."""
    out = images.copy()
    out[mask] = out[mask, :, :, ::-1]
    return out


def gaussian_blur(images, sigmas):
    """Separable Gaussian blur with a per-image sigma (in pixels).

    The kernel radius covers three standard deviations of the largest sigma;
    edges replicate so borders keep their brightness. sigma 0 is the identity.

    images: (B, C, H, W); sigmas: (B,).
    """
    images = np.asarray(images)
    sig = np.asarray(sigmas, dtype=np.float64)
    radius = int(np.ceil(3.0 * sig.max()))
    if radius == 0:
        return images.copy()
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(divide="ignore"):
        kernel = np.exp(-(taps**2) / (2.0 * np.maximum(sig, 1e-12)[:, None] ** 2))
    kernel[sig == 0] = (taps == 0).astype(np.float64)       # identity kernel
    kernel /= kernel.sum(axis=1, keepdims=True)             # (B, 2r+1)
    k = kernel[:, :, None, None, None]                      # (B, 2r+1, 1, 1, 1)

    out = images.astype(np.float64)
    for axis in (2, 3):
        pad = [(0, 0)] * 4
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        for t in range(2 * radius + 1):
            sl = [slice(None)] * 4
            sl[axis] = slice(t, t + out.shape[axis])
            acc += k[:, t] * padded[tuple(sl)]
        out = acc
    return out.astype(images.dtype, copy=False)
