"""Composite training objective: spatial, frequency, color, perceptual terms.

Color terms run in LAB and LCH. Continuous channels are softly quantized
into 64 uniform bins with a triangular two-nearest-center kernel, which
makes the histogram cross-entropy terms differentiable and reconstruction-
exact inside the bin range. The frequency term takes an L1 norm jointly
over the real and imaginary planes of the per-channel 2-d spectrum. The
perceptual term compares channel-normalized activations of a fixed,
seed-pinned random conv pyramid (no pretrained weights involved).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import spectral
from .autodiff import Tensor
from .colorspace import lab_to_lch, rgb_to_lab
from .errors import ConfigError, DimensionError
from .layers import kaiming_uniform

N_BINS = 64
AB_RANGE = (-110.0, 110.0)
L_RANGE = (0.0, 100.0)
LOG_FLOOR = 1e-8


@dataclass
class LossWeights:
    """Term weights (spatial, frequency, LAB, LCH, perceptual)."""
    alpha: float = 100.0
    beta: float = 10.0
    gamma: float = 0.0001
    mu: float = 1.0
    lam: float = 100.0
    wrap_hue: bool = False
    perceptual_seed: int = 0

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma", "mu", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.mu, self.lam)


def bin_centers(lo: float, hi: float) -> np.ndarray:
    return np.linspace(lo, hi, N_BINS, dtype=np.float32)


def soft_quantize(channel: Tensor, lo: float, hi: float) -> Tensor:
    """Triangular soft assignment onto 64 uniform centers; trailing bin axis.

    Values are clamped to [lo, hi] first; per-pixel weights are non-negative
    and sum to 1 (partition of unity of the triangular kernel).
    """
    if hi <= lo:
        raise ConfigError(f"quantization range ({lo}, {hi}) is empty")
    channel = channel if isinstance(channel, Tensor) else Tensor(channel)
    delta = (hi - lo) / (N_BINS - 1)
    centers = bin_centers(lo, hi)
    v = ad.reshape(ad.clamp(channel, lo, hi), channel.shape + (1,))
    w = ad.relu(1.0 - ad.tabs(v - Tensor(centers)) * (1.0 / delta))
    # renormalize away float32 rounding so weights sum to 1 exactly
    return w / w.sum(axis=-1, keepdims=True)


def soft_cross_entropy(pre_ch: Tensor, gt_ch: Tensor, lo: float, hi: float) -> Tensor:
    """Per-pixel CE of soft histograms, summed over bins, averaged over pixels."""
    q_pre = soft_quantize(pre_ch, lo, hi)
    q_gt = soft_quantize(gt_ch.detach() if isinstance(gt_ch, Tensor) else gt_ch, lo, hi)
    ce = -(Tensor(q_gt.data) * ad.tlog(ad.clamp(q_pre, LOG_FLOOR, None))).sum(axis=-1)
    return ce.mean()


def _as_pair(pre, gt) -> tuple[Tensor, Tensor]:
    pre = pre if isinstance(pre, Tensor) else Tensor(pre)
    gt = gt if isinstance(gt, Tensor) else Tensor(gt)
    if pre.shape != gt.shape:
        raise DimensionError(f"prediction {pre.shape} vs reference {gt.shape}")
    return pre, gt


def loss_lab(pre, gt) -> Tensor:
    """Squared luminance error plus soft CE over quantized A and B."""
    pre, gt = _as_pair(pre, gt)
    lp, ap, bp = rgb_to_lab(pre)
    lg, ag, bg = rgb_to_lab(gt.detach())
    lab_l2 = ((lp - Tensor(lg.data)) ** 2.0).mean()
    lo, hi = AB_RANGE
    return lab_l2 + soft_cross_entropy(ap, ag, lo, hi) \
        + soft_cross_entropy(bp, bg, lo, hi)


def loss_lch(pre, gt, wrap_hue: bool = False) -> Tensor:
    """Soft CE over quantized L plus squared chroma and hue differences."""
    pre, gt = _as_pair(pre, gt)
    lp, cp, hp = lab_to_lch(*rgb_to_lab(pre))
    lg, cg, hg = lab_to_lch(*rgb_to_lab(gt.detach()))
    ce = soft_cross_entropy(lp, lg, *L_RANGE)
    chroma = ((cp - Tensor(cg.data)) ** 2.0).mean()
    hdiff = hp - Tensor(hg.data)
    if wrap_hue:
        hdiff = spectral.wrap_phase(hdiff)
    return ce + chroma + (hdiff ** 2.0).mean()


def loss_spatial(pre, gt) -> Tensor:
    """Mean absolute difference over all elements."""
    pre, gt = _as_pair(pre, gt)
    return ad.tabs(pre - gt.detach()).mean()


def loss_freq(pre, gt) -> Tensor:
    """L1 over real and imaginary spectrum planes, normalized by the element
    count of the image (same T as the spatial term)."""
    pre, gt = _as_pair(pre, gt)
    spec_pre = spectral.fft2d(pre)
    gt_spec = np.fft.fft2(gt.data.astype(np.float64))
    t = pre.size
    dre = ad.tabs(spec_pre.re - Tensor(gt_spec.real.astype(np.float32)))
    dim = ad.tabs(spec_pre.im - Tensor(gt_spec.imag.astype(np.float32)))
    return (dre.sum() + dim.sum()) * (1.0 / t)


class RandomFeaturePyramid:
    """Fixed three-stage conv pyramid (3->8->16->32, stride 2, ReLU).

    Weights come from a pinned seed and are constants: gradients flow through
    the features to the image, never into the extractor.
    """

    CHANNELS = (8, 16, 32)

    def __init__(self, seed: int = 0):
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7EA7)))
        self.weights = []
        cin = 3
        for cout in self.CHANNELS:
            w = Tensor(kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9))
            b = Tensor(np.zeros(cout, dtype=np.float32))
            self.weights.append((w, b))
            cin = cout

    def __call__(self, img: Tensor) -> list[Tensor]:
        feats = []
        x = img
        for w, b in self.weights:
            x = ad.relu(ad.conv2d(x, w, b, stride=2, padding=1))
            feats.append(x)
        return feats


def _unit_normalize(feat: Tensor) -> Tensor:
    ax = feat.ndim - 3
    norm = ad.tsqrt((feat * feat).sum(axis=ax, keepdims=True) + 1e-10)
    return feat / norm


def loss_perceptual(pre, gt, extractor) -> Tensor:
    """Mean absolute difference of unit-normalized features across scales."""
    pre, gt = _as_pair(pre, gt)
    batched_pre = pre if pre.ndim == 4 else ad.reshape(pre, (1,) + pre.shape)
    batched_gt = Tensor(gt.data if gt.ndim == 4 else gt.data[None])
    total = None
    feats_pre = extractor(batched_pre)
    feats_gt = extractor(batched_gt)
    for fp, fg in zip(feats_pre, feats_gt):
        term = ad.tabs(_unit_normalize(fp) - Tensor(_unit_normalize(fg).data)).mean()
        total = term if total is None else total + term
    return total * (1.0 / len(feats_pre))


def total_loss(pre, gt, weights: LossWeights | None = None,
               extractor: RandomFeaturePyramid | None = None):
    """Weighted sum of all five terms; returns (scalar tensor, breakdown)."""
    weights = weights or LossWeights()
    weights.validate()
    if extractor is None:
        extractor = RandomFeaturePyramid(weights.perceptual_seed)
    ls = loss_spatial(pre, gt)
    lf = loss_freq(pre, gt)
    llab = loss_lab(pre, gt)
    llch = loss_lch(pre, gt, wrap_hue=weights.wrap_hue)
    lper = loss_perceptual(pre, gt, extractor)
    total = ls * weights.alpha + lf * weights.beta + llab * weights.gamma \
        + llch * weights.mu + lper * weights.lam
    breakdown = {
        "spatial": float(ls.data), "freq": float(lf.data),
        "lab": float(llab.data), "lch": float(llch.data),
        "perceptual": float(lper.data),
        "w_spatial": weights.alpha * float(ls.data),
        "w_freq": weights.beta * float(lf.data),
        "w_lab": weights.gamma * float(llab.data),
        "w_lch": weights.mu * float(llch.data),
        "w_perceptual": weights.lam * float(lper.data),
        "total": float(total.data),
    }
    return total, breakdown
