"""Shared image conversions for the CLI and HTTP service.

Internal images hold float32 values nominally in [-1, 1]. On the way to
8-bit they are clamped and mapped to [0, 255] with half-away-from-zero
rounding; PNGs decode back with the inverse affine map. Both directions are
deterministic, so byte-level tests can rely on them.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .tensor import Tensor


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) float32 in [-1, 1] -> (3, H, W) uint8."""
    x = np.clip(img, -1.0, 1.0)
    y = (x.astype(np.float64) + 1.0) * 0.5 * 255.0
    return np.floor(y + 0.5).astype(np.uint8)  # y >= 0, so this rounds half away from zero


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """(3, H, W) uint8 -> float32 in [-1, 1]."""
    return (arr.astype(np.float32) / 255.0) * 2.0 - 1.0


def encode_png(img: np.ndarray) -> bytes:
    """Encode a (3, H, W) float32 [-1, 1] image as PNG bytes."""
    u8 = to_uint8(img)
    pil = Image.fromarray(u8.transpose(1, 2, 0), mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> Tensor:
    """Decode PNG bytes into a (3, H, W) float32 tensor in [-1, 1]."""
    pil = Image.open(io.BytesIO(data)).convert("RGB")
    arr = np.asarray(pil, dtype=np.uint8).transpose(2, 0, 1)
    return Tensor(from_uint8(arr))


def downsample_u8(img: np.ndarray, factor: int) -> np.ndarray:
    """Box-downsample a (3, H, W) uint8 image by 2^-free integer factor.

    Block means are taken in float64 and rounded half away from zero, so a
    zoom-1 tile equals the 2x downsample of its four zoom-0 children exactly.
    Ragged borders are averaged over the pixels that exist.
    """
    if factor == 1:
        return img
    _, h, w = img.shape
    oh, ow = -(-h // factor), -(-w // factor)
    out = np.zeros((3, oh, ow), np.uint8)
    for y in range(oh):
        for x in range(ow):
            block = img[:, y * factor:min((y + 1) * factor, h), x * factor:min((x + 1) * factor, w)]
            m = block.astype(np.float64).mean(axis=(1, 2))
            out[:, y, x] = np.floor(m + 0.5).astype(np.uint8)
    return out
