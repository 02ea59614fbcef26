"""sRGB -> CIELAB / LCH conversions.

Two paths share the same constants: a differentiable path over autodiff
tensors (used by the training losses) and a float64 numpy path (used by the
quality metrics). Standard sRGB gamma, D65 white point.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError

SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
WHITE_D65 = (0.95047, 1.0, 1.08883)
_DELTA = 6.0 / 29.0
_DELTA3 = _DELTA ** 3


def _check_unit_range(data: np.ndarray) -> None:
    if data.min() < 0.0 or data.max() > 1.0:
        raise DomainError(
            f"sRGB values outside [0,1]: min {data.min():.4g}, max {data.max():.4g}")


def _lab_f(t: Tensor) -> Tensor:
    cube = ad.clamp(t, _DELTA3, None) ** (1.0 / 3.0)
    lin = t * (1.0 / (3.0 * _DELTA * _DELTA)) + 4.0 / 29.0
    return ad.where(t.data > _DELTA3, cube, lin)


def rgb_to_lab(img: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable conversion of (...,3,H,W) sRGB in [0,1] to (L, A, B)."""
    img = img if isinstance(img, Tensor) else Tensor(img)
    _check_unit_range(img.data)
    ax = img.ndim - 3
    chans = [ad.narrow(img, ax, i, 1) for i in range(3)]
    linear = []
    for v in chans:
        low = v * (1.0 / 12.92)
        high = ((v + 0.055) * (1.0 / 1.055)) ** 2.4
        linear.append(ad.where(v.data > 0.04045, high, low))
    xyz = []
    for row, wn in zip(SRGB_TO_XYZ, WHITE_D65):
        t = linear[0] * float(row[0]) + linear[1] * float(row[1]) \
            + linear[2] * float(row[2])
        xyz.append(_lab_f(t * (1.0 / wn)))
    fx, fy, fz = xyz
    lum = fy * 116.0 - 16.0
    a = (fx - fy) * 500.0
    b = (fy - fz) * 200.0
    return lum, a, b


def lab_to_lch(lum: Tensor, a: Tensor, b: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Chroma = sqrt(A^2 + B^2), hue = atan2(B, A) (0 at the gray axis)."""
    chroma = ad.tsqrt(a * a + b * b)
    hue = ad.atan2(b, a)
    return lum, chroma, hue


def rgb_to_lab_np(img: np.ndarray) -> np.ndarray:
    """Float64 reference conversion; channel axis is -3, same layout out."""
    img = np.asarray(img, dtype=np.float64)
    _check_unit_range(img)
    linear = np.where(img > 0.04045, ((img + 0.055) / 1.055) ** 2.4, img / 12.92)
    moved = np.moveaxis(linear, -3, -1)
    xyz = moved @ SRGB_TO_XYZ.T
    xyz = xyz / np.asarray(WHITE_D65)
    f = np.where(xyz > _DELTA3, np.cbrt(np.maximum(xyz, 0.0)),
                 xyz / (3 * _DELTA * _DELTA) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return np.moveaxis(lab, -1, -3)
