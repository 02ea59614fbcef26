"""Per-pixel signal-to-noise map and its mirrored encoder branch.

The map treats a local box mean of the luminance as the clean signal
estimate and the absolute residual as noise:

    S = clamp(mean_k(g) / (|g - mean_k(g)| + eps), 0, s_max) / s_max

with luminance g = 0.299 R + 0.587 G + 0.114 B, box size k = 5 (edge
padding), eps = 1e-4 and s_max = 10, normalizing to [0, 1]. Smooth regions
saturate at 1; noisy regions fall toward 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError, NumericError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
BOX_SIZE = 5
EPS = 1e-4
S_MAX = 10.0


@dataclass
class SnrMap:
    """Single-channel map in [0, 1], spatially aligned with its source image."""
    values: Tensor  # (N, 1, H, W)


def box_mean(img: np.ndarray, k: int) -> np.ndarray:
    """k x k box mean over the last two axes with edge padding."""
    r = k // 2
    pad = [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(img, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(-2, -1))
    return win.mean(axis=(-2, -1), dtype=np.float64).astype(img.dtype)


def compute_snr_map(image) -> SnrMap:
    """SNR map of an RGB image (3,H,W) or batch (N,3,H,W) with values in [0,1].

    The result is a constant with respect to the autodiff graph: nothing
    learnable sits upstream of it.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    squeeze = data.ndim == 3
    if squeeze:
        data = data[None]
    if data.ndim != 4 or data.shape[1] != 3:
        raise DimensionError(f"expected (N,3,H,W) or (3,H,W) image, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise NumericError("compute_snr_map: non-finite input image")
    wr, wg, wb = LUMA_WEIGHTS
    g = wr * data[:, 0] + wg * data[:, 1] + wb * data[:, 2]
    mu = box_mean(g, BOX_SIZE)
    s = mu / (np.abs(g - mu) + np.float32(EPS))
    s = np.clip(s, 0.0, S_MAX) / np.float32(S_MAX)
    s = s[:, None]
    if squeeze:
        s = s[0]
    return SnrMap(Tensor(s.astype(np.float32)))
