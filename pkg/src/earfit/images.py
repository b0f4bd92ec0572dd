"""8-bit PNG image I/O with sRGB <-> linear conversion at the boundary.

The whole pipeline works on H x W x 3 float64 arrays of linear RGB in [0, 1];
files on disk are standard 8-bit sRGB PNGs.  PNG writing is pinned to a fixed
encoder configuration so identical arrays produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def srgb_to_linear(srgb: np.ndarray) -> np.ndarray:
    srgb = np.asarray(srgb, dtype=float)
    return np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(np.asarray(linear, dtype=float), 0.0, 1.0)
    return np.where(linear <= 0.0031308, linear * 12.92, 1.055 * linear ** (1 / 2.4) - 0.055)


def read_png(path) -> np.ndarray:
    """Read a PNG as linear RGB floats in [0, 1], shape H x W x 3."""
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=float) / 255.0
    return srgb_to_linear(rgb)


def write_png(path, linear: np.ndarray) -> None:
    """Write linear RGB floats in [0, 1] as an 8-bit sRGB PNG."""
    linear = np.asarray(linear, dtype=float)
    if linear.ndim != 3 or linear.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {linear.shape}")
    srgb = np.round(linear_to_srgb(linear) * 255.0).astype(np.uint8)
    img = Image.fromarray(srgb, mode="RGB")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG", optimize=False, compress_level=6)
