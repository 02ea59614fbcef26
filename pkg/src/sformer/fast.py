"""Fourier-attention skip block coupling RGB features with SNR features.

At each encoder scale the RGB feature map is projected to key/value tensors
and the SNR feature map to a query tensor (all 1x1 convs). Keys and queries
move to the frequency domain, their amplitude spectra and phase spectra are
multiplied element-wise (phases re-wrapped to (-pi, pi]), and the combined
spectrum returns to the spatial domain, keeping the real plane. That map
gates the value tensor through a channel layer norm, with a residual onto
the RGB input, followed by a per-position MLP refinement:

    x' = x + LN(F) * V
    out = x' + MLP(LN(x'))
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import spectral
from .autodiff import ParameterRegistry, Tensor
from .errors import DimensionError
from .layers import Conv2d, LayerNorm


class FourierAttentionBlock:
    def __init__(self, reg: ParameterRegistry, name: str, channels: int,
                 rng: np.random.Generator, mlp_ratio: int = 2):
        self.channels = channels
        self.k_proj = Conv2d(reg, f"{name}.k_proj", channels, channels, 1, rng)
        self.v_proj = Conv2d(reg, f"{name}.v_proj", channels, channels, 1, rng)
        self.q_proj = Conv2d(reg, f"{name}.q_proj", channels, channels, 1, rng)
        self.ln1 = LayerNorm(reg, f"{name}.ln1", (channels, 1, 1), axes=(1,))
        self.ln2 = LayerNorm(reg, f"{name}.ln2", (channels, 1, 1), axes=(1,))
        hidden = channels * mlp_ratio
        self.mlp_in = Conv2d(reg, f"{name}.mlp_in", channels, hidden, 1, rng)
        self.mlp_out = Conv2d(reg, f"{name}.mlp_out", hidden, channels, 1, rng)

    def __call__(self, rgb_feat: Tensor, snr_feat: Tensor,
                 return_diag: bool = False):
        """Fuse one skip level; output shape always equals rgb_feat's."""
        if rgb_feat.shape != snr_feat.shape:
            raise DimensionError(
                f"feature shapes differ: rgb {rgb_feat.shape} vs snr {snr_feat.shape}")
        if rgb_feat.shape[1] != self.channels:
            raise DimensionError(
                f"expected {self.channels} channels, got {rgb_feat.shape}")
        k = self.k_proj(rgb_feat)
        v = self.v_proj(rgb_feat)
        q = self.q_proj(snr_feat)

        rgb_spec = spectral.amp_phase(spectral.fft2d(k))
        snr_spec = spectral.amp_phase(spectral.fft2d(q))
        amp = rgb_spec.amplitude * snr_spec.amplitude
        phase = spectral.wrap_phase(rgb_spec.phase * snr_spec.phase)
        mixed = spectral.ifft2d(spectral.compose(spectral.SpectralPair(amp, phase)))
        fused = mixed.re  # feature maps are real; the imaginary plane is dropped

        gated = rgb_feat + self.ln1(fused) * v
        out = gated + self.mlp_out(ad.gelu(self.mlp_in(self.ln2(gated))))
        if not return_diag:
            return out
        real_e = float(np.sum(mixed.re.data.astype(np.float64) ** 2))
        imag_e = float(np.sum(mixed.im.data.astype(np.float64) ** 2))
        total = real_e + imag_e
        diag = {"imag_energy_frac": imag_e / total if total > 0 else 0.0}
        return out, diag
