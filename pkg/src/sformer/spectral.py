"""2-d Fourier transforms and amplitude/phase decomposition.

Convention, fixed for the whole package: unnormalized forward transform
X[u,v] = sum_{h,w} x[h,w]·exp(-2πi(uh/H + vw/W)) and 1/(H·W) on the inverse,
so ``ifft2d(fft2d(x)) == x``. Complex grids are carried as separate real and
imaginary float32 tensors so gradients flow through both planes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, DomainError

_PI32 = np.float32(math.pi)


@dataclass
class ComplexGrid:
    """Real and imaginary planes of a 2-d spectrum, shapes identical."""
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise DimensionError(
                f"ComplexGrid planes differ: {self.re.shape} vs {self.im.shape}")


@dataclass
class SpectralPair:
    """Polar decomposition of a spectrum: amplitude >= 0, phase in (-pi, pi]."""
    amplitude: Tensor
    phase: Tensor

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise DimensionError(
                f"SpectralPair planes differ: {self.amplitude.shape} vs {self.phase.shape}")


def _pack(re: Tensor, im: Tensor) -> Tensor:
    shape = re.shape
    r = ad.reshape(re, shape[:-2] + (1,) + shape[-2:])
    i = ad.reshape(im, shape[:-2] + (1,) + shape[-2:])
    return ad.concat([r, i], axis=-3)


def _unpack(packed: Tensor) -> ComplexGrid:
    shape = packed.shape
    re = ad.narrow(packed, -3, 0, 1)
    im = ad.narrow(packed, -3, 1, 1)
    out_shape = shape[:-3] + shape[-2:]
    return ComplexGrid(ad.reshape(re, out_shape), ad.reshape(im, out_shape))


def fft2d(x) -> ComplexGrid:
    """Forward DFT over the last two axes of a real tensor or a ComplexGrid."""
    if isinstance(x, ComplexGrid):
        packed = _pack(x.re, x.im)
    else:
        x = x if isinstance(x, Tensor) else Tensor(x)
        packed = _pack(x, Tensor(np.zeros(x.shape, dtype=np.float32)))
    return _unpack(ad.fft2d_pair(packed))


def ifft2d(x: ComplexGrid) -> ComplexGrid:
    """Inverse DFT with 1/(H·W) normalization."""
    return _unpack(ad.ifft2d_pair(_pack(x.re, x.im)))


def _canonical_phase(p: Tensor) -> Tensor:
    # atan2 returns [-pi, pi]; fold the closed lower end onto +pi
    mask = p.data <= -_PI32
    if mask.any():
        p = ad.where(mask, p + 2.0 * _PI32, p)
    return p


def amp_phase(x: ComplexGrid) -> SpectralPair:
    """Amplitude √(re²+im²) and phase atan2(im, re) of a complex grid."""
    amp = ad.tsqrt(x.re * x.re + x.im * x.im)
    phase = _canonical_phase(ad.atan2(x.im, x.re))
    return SpectralPair(amp, phase)


def compose(pair: SpectralPair) -> ComplexGrid:
    """Rebuild a complex grid from amplitude and phase."""
    if pair.amplitude.data.min() < 0:
        raise DomainError(
            f"compose: negative amplitude (min {pair.amplitude.data.min():.3g})")
    return ComplexGrid(pair.amplitude * ad.tcos(pair.phase),
                       pair.amplitude * ad.tsin(pair.phase))


def wrap_phase(t: Tensor) -> Tensor:
    """Wrap arbitrary angles to (-pi, pi]; derivative is 1 away from seams."""
    return _canonical_phase(ad.atan2(ad.tsin(t), ad.tcos(t)))
