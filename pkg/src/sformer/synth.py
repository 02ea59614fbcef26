"""Synthetic paired data via a water-column image formation model.

A clean image J degrades along per-channel transmission t_c = exp(-beta_c *
depth): the camera sees J*t + B*(1-t) plus sensor noise, where B is the
ambient backlight. Red attenuates fastest, blue slowest, which produces the
characteristic blue-green cast. Clean images are procedural (color
gradients, simple shapes, texture noise) so datasets of any size are
reproducible from a single seed.

Also provides paired geometric augmentations (identical transform applied to
both images of a pair), mixup, and a directory-of-pairs loader.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .imgio import load_image
from .snr import box_mean

DEPTH_MAX = 2.0
BETA_R_RANGE = (1.0, 2.0)
BETA_G_RANGE = (0.4, 1.0)
BETA_B_RANGE = (0.2, 0.6)
BACKLIGHT_BASE = (0.1, 0.5, 0.6)
BACKLIGHT_JITTER = 0.1
NOISE_SIGMA_RANGE = (0.002, 0.02)


@dataclass
class DegradeParams:
    beta: np.ndarray          # (3,) per-channel attenuation, 1/depth-unit
    backlight: np.ndarray     # (3,) ambient light color in [0,1]
    depth_map: np.ndarray     # (H,W) in [0, DEPTH_MAX]
    noise_sigma: float = 0.0
    blur_radius: int = 0
    seed: int = 0

    def validate(self) -> None:
        if np.any(self.beta < 0):
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.backlight.min() < 0 or self.backlight.max() > 1:
            raise ValueError(f"backlight outside [0,1]: {self.backlight}")


@dataclass
class PairedSample:
    degraded: np.ndarray      # (3,H,W) float32 in [0,1]
    reference: np.ndarray     # (3,H,W) float32 in [0,1]
    id: str


def transmission(params: DegradeParams) -> np.ndarray:
    """(3,H,W) per-channel transmission exp(-beta*depth)."""
    return np.exp(-params.beta[:, None, None] * params.depth_map[None]).astype(np.float32)


def degrade(clean: np.ndarray, params: DegradeParams) -> np.ndarray:
    """Apply the formation model; output is clamped to [0,1], then blurred."""
    params.validate()
    clean = np.asarray(clean, dtype=np.float32)
    t = transmission(params)
    out = clean * t + params.backlight[:, None, None].astype(np.float32) * (1.0 - t)
    if params.noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence((params.seed, 0xD06)))
        out = out + rng.normal(0.0, params.noise_sigma, out.shape).astype(np.float32)
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    if params.blur_radius > 0:
        out = box_mean(out, 2 * params.blur_radius + 1)
    return out


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cells: int = 4) -> np.ndarray:
    """Low-frequency noise: a coarse random grid upsampled bilinearly."""
    coarse = rng.random((cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = coarse[y0][:, x0]
    tr = coarse[y0][:, x0 + 1]
    bl = coarse[y0 + 1][:, x0]
    br = coarse[y0 + 1][:, x0 + 1]
    return ((1 - fy) * ((1 - fx) * tl + fx * tr)
            + fy * ((1 - fx) * bl + fx * br)).astype(np.float32)


def make_depth_map(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth vertical gradient plus low-frequency noise, in [0, DEPTH_MAX]."""
    top, bottom = sorted(rng.uniform(0.0, DEPTH_MAX, size=2))
    ramp = np.linspace(top, bottom, h, dtype=np.float32)[:, None]
    ramp = np.broadcast_to(ramp, (h, w))
    depth = ramp + 0.3 * DEPTH_MAX * (_smooth_noise(rng, h, w) - 0.5)
    return np.clip(depth, 0.0, DEPTH_MAX).astype(np.float32)


def random_degrade_params(rng: np.random.Generator, h: int, w: int,
                          seed: int = 0) -> DegradeParams:
    beta = np.array([rng.uniform(*BETA_R_RANGE),
                     rng.uniform(*BETA_G_RANGE),
                     rng.uniform(*BETA_B_RANGE)], dtype=np.float32)
    backlight = np.clip(
        np.asarray(BACKLIGHT_BASE)
        + rng.uniform(-BACKLIGHT_JITTER, BACKLIGHT_JITTER, 3), 0.0, 1.0)
    return DegradeParams(
        beta=beta,
        backlight=backlight.astype(np.float32),
        depth_map=make_depth_map(rng, h, w),
        noise_sigma=float(rng.uniform(*NOISE_SIGMA_RANGE)),
        blur_radius=int(rng.integers(0, 2)),
        seed=seed,
    )


def make_clean_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Procedural scene: a two-color gradient, a few shapes, mild texture."""
    c0 = rng.uniform(0.1, 0.9, 3)
    c1 = rng.uniform(0.1, 0.9, 3)
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-6)
    img = c0[:, None, None] * (1 - ramp)[None] + c1[:, None, None] * ramp[None]

    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.05, 0.95, 3)
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0.1, 0.9, 2)
            r = rng.uniform(0.05, 0.25)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            y0, x0 = rng.uniform(0.0, 0.7, 2)
            dy, dx = rng.uniform(0.1, 0.3, 2)
            mask = (yy >= y0) & (yy <= y0 + dy) & (xx >= x0) & (xx <= x0 + dx)
        img[:, mask] = color[:, None]

    img += 0.08 * (_smooth_noise(rng, h, w, cells=8) - 0.5)[None]
    img += rng.normal(0.0, 0.01, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_dataset(n: int, resolution: int | tuple[int, int], seed: int) -> list[PairedSample]:
    """n reproducible (degraded, clean) pairs at the given resolution."""
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    h, w = (resolution, resolution) if isinstance(resolution, int) else resolution
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        clean = make_clean_image(rng, h, w)
        params = random_degrade_params(rng, h, w, seed=seed * 100003 + i)
        samples.append(PairedSample(degrade(clean, params), clean, f"synth_{i:04d}"))
    return samples


# ---------------------------------------------------------------------------
# paired augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentPolicy:
    flip: bool = True
    rotate: bool = True           # multiples of 90 degrees
    crop_size: int | None = None  # random crop to crop_size x crop_size
    scale: bool = False           # nearest-neighbor 0.5x downscale
    mixup_alpha: float = 0.0      # Beta(a, a) blending; 0 disables


def flip_pair(pair: PairedSample, axis: int) -> PairedSample:
    """axis 1 flips vertically, 2 horizontally (channel axis excluded)."""
    return replace(pair,
                   degraded=np.flip(pair.degraded, axis=axis).copy(),
                   reference=np.flip(pair.reference, axis=axis).copy())


def rot90_pair(pair: PairedSample, k: int) -> PairedSample:
    return replace(pair,
                   degraded=np.rot90(pair.degraded, k, axes=(1, 2)).copy(),
                   reference=np.rot90(pair.reference, k, axes=(1, 2)).copy())


def crop_pair(pair: PairedSample, top: int, left: int, size: int) -> PairedSample:
    _, h, w = pair.degraded.shape
    if size > h or size > w or top + size > h or left + size > w:
        raise DimensionError(f"crop {size} at ({top},{left}) exceeds image {h}x{w}")
    return replace(pair,
                   degraded=pair.degraded[:, top:top + size, left:left + size].copy(),
                   reference=pair.reference[:, top:top + size, left:left + size].copy())


def scale_pair(pair: PairedSample, factor: float) -> PairedSample:
    """Nearest-neighbor scaling, restricted to factors 1.0 and 0.5."""
    if factor == 1.0:
        return pair
    if factor != 0.5:
        raise ValueError(f"supported scale factors are 1.0 and 0.5, got {factor}")
    return replace(pair,
                   degraded=pair.degraded[:, ::2, ::2].copy(),
                   reference=pair.reference[:, ::2, ::2].copy())


def mixup_pair(a: PairedSample, b: PairedSample, lam: float) -> PairedSample:
    """Blend inputs and targets alike with coefficient lam on pair `a`."""
    lam = np.float32(lam)
    return PairedSample(
        degraded=lam * a.degraded + (1 - lam) * b.degraded,
        reference=lam * a.reference + (1 - lam) * b.reference,
        id=f"mix({a.id},{b.id})",
    )


def augment(pair: PairedSample, policy: AugmentPolicy,
            rng: np.random.Generator, partner: PairedSample | None = None,
            return_record: bool = False):
    """Apply the policy with randomness from `rng`; both images of the pair
    receive the identical geometric transform. Mixup uses `partner` with
    lam ~ Beta(alpha, alpha)."""
    record = {}
    if policy.scale and rng.random() < 0.5:
        pair = scale_pair(pair, 0.5)
        record["scale"] = 0.5
    if policy.crop_size is not None:
        _, h, w = pair.degraded.shape
        if policy.crop_size > min(h, w):
            raise DimensionError(
                f"crop size {policy.crop_size} exceeds image {h}x{w}")
        top = int(rng.integers(0, h - policy.crop_size + 1))
        left = int(rng.integers(0, w - policy.crop_size + 1))
        pair = crop_pair(pair, top, left, policy.crop_size)
        record["crop"] = (top, left, policy.crop_size)
    if policy.flip:
        if rng.random() < 0.5:
            pair = flip_pair(pair, 2)
            record["flip_h"] = True
        if rng.random() < 0.5:
            pair = flip_pair(pair, 1)
            record["flip_v"] = True
    if policy.rotate:
        k = int(rng.integers(0, 4))
        if k:
            pair = rot90_pair(pair, k)
        record["rot90"] = k
    if policy.mixup_alpha > 0 and partner is not None:
        lam = float(rng.beta(policy.mixup_alpha, policy.mixup_alpha))
        pair = mixup_pair(pair, partner, lam)
        record["mixup_lam"] = lam
    if return_record:
        return pair, record
    return pair


def load_pair_directory(root) -> list[PairedSample]:
    """Load pairs from <root>/input and <root>/gt with matching filenames."""
    root = Path(root)
    in_dir, gt_dir = root / "input", root / "gt"
    if not in_dir.is_dir() or not gt_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain input/ and gt/ directories")
    samples = []
    for in_path in sorted(in_dir.iterdir()):
        if in_path.suffix.lower() not in (".png", ".ppm"):
            continue
        gt_path = gt_dir / in_path.name
        if not gt_path.exists():
            raise FileNotFoundError(f"no reference for {in_path.name} in {gt_dir}")
        samples.append(PairedSample(load_image(in_path), load_image(gt_path),
                                    in_path.name))
    if not samples:
        raise FileNotFoundError(f"no image pairs found under {root}")
    return samples
