"""8-bit image I/O: PNG and PPM (P6), mapped linearly to [0,1] float arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError

SUPPORTED_SUFFIXES = (".png", ".ppm")


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3,H,W) floats in [0,1] -> (H,W,3) uint8 with round-to-nearest."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"expected (3,H,W) image, got {img.shape}")
    quant = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return quant.transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def save_image(path, img: np.ndarray) -> None:
    path = Path(path)
    pil = Image.fromarray(to_uint8(img))
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    pil.save(path, format=fmt)


def load_image(path) -> np.ndarray:
    with Image.open(path) as pil:
        rgb = pil.convert("RGB")
        return from_uint8(np.asarray(rgb))
