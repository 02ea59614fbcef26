"""Full-reference (PSNR, SSIM, color difference) and no-reference (UCIQE)
image quality metrics. All computation here is float64 numpy; images are
(3,H,W) sRGB in [0,1]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .colorspace import rgb_to_lab_np
from .errors import DimensionError

UCIQE_WEIGHTS = (0.4680, 0.2745, 0.2576)
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(pre, gt):
    pre = np.asarray(pre, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pre.shape != gt.shape:
        raise DimensionError(f"image shapes differ: {pre.shape} vs {gt.shape}")
    return pre, gt


def luminance(img: np.ndarray) -> np.ndarray:
    wr, wg, wb = LUMA_WEIGHTS
    return wr * img[0] + wg * img[1] + wb * img[2]


def psnr(pre, gt) -> float:
    """10*log10(1/MSE) on the unit dynamic range; identical images -> inf."""
    pre, gt = _check_pair(pre, gt)
    mse = np.mean((pre - gt) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _window_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", win, kernel, optimize=True)


def ssim(pre, gt) -> float:
    """Mean local SSIM on luminance, 11x11 Gaussian window (sigma 1.5)."""
    pre, gt = _check_pair(pre, gt)
    if min(pre.shape[-2:]) < SSIM_WINDOW:
        raise DimensionError(
            f"image {pre.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = luminance(pre)
    y = luminance(gt)
    w = _gaussian_window()
    mu_x = _window_filter(x, w)
    mu_y = _window_filter(y, w)
    sxx = _window_filter(x * x, w) - mu_x ** 2
    syy = _window_filter(y * y, w) - mu_y ** 2
    sxy = _window_filter(x * y, w) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def delta_e_lab(lab_a: np.ndarray, lab_b: np.ndarray) -> float:
    """Mean Euclidean distance between per-pixel LAB triples (CIE76)."""
    diff = np.asarray(lab_a, dtype=np.float64) - np.asarray(lab_b, dtype=np.float64)
    return float(np.mean(np.sqrt(np.sum(diff ** 2, axis=-3))))


def delta_e(pre, gt) -> float:
    pre, gt = _check_pair(pre, gt)
    return delta_e_lab(rgb_to_lab_np(pre), rgb_to_lab_np(gt))


def uciqe_components(img) -> dict:
    """Chroma spread, luminance percentile contrast, mean saturation.

    L and chroma are rescaled by 1/100 so every component lives on a unit-ish
    scale; saturation is chroma relative to the chroma-luminance magnitude.
    """
    img = np.asarray(img, dtype=np.float64)
    lab = rgb_to_lab_np(img)
    lum = lab[-3] / 100.0
    chroma = np.sqrt(lab[-2] ** 2 + lab[-1] ** 2) / 100.0
    mag = np.sqrt(chroma ** 2 + lum ** 2)
    sat = np.divide(chroma, mag, out=np.zeros_like(chroma), where=mag > 1e-12)
    return {
        "chroma_std": float(np.std(chroma)),
        "luma_contrast": float(np.percentile(lum, 99) - np.percentile(lum, 1)),
        "mean_saturation": float(np.mean(sat)),
        "weights": UCIQE_WEIGHTS,
    }


def uciqe(img) -> float:
    c = uciqe_components(img)
    w1, w2, w3 = UCIQE_WEIGHTS
    return w1 * c["chroma_std"] + w2 * c["luma_contrast"] + w3 * c["mean_saturation"]


@dataclass
class MetricRow:
    name: str
    psnr: float
    ssim: float
    delta_e: float
    uciqe: float


def evaluate_pair(name: str, pre, gt) -> MetricRow:
    return MetricRow(name, psnr(pre, gt), ssim(pre, gt), delta_e(pre, gt), uciqe(pre))


def mean_row(rows: list[MetricRow]) -> MetricRow:
    n = len(rows)
    return MetricRow(
        "MEAN",
        sum(r.psnr for r in rows) / n,
        sum(r.ssim for r in rows) / n,
        sum(r.delta_e for r in rows) / n,
        sum(r.uciqe for r in rows) / n,
    )


def format_report(rows: list[MetricRow]) -> str:
    """Tab-separated report: one row per image plus a trailing MEAN row."""
    out = ["name\tpsnr\tssim\tdelta_e\tuciqe"]
    for r in rows + [mean_row(rows)]:
        out.append(f"{r.name}\t{r.psnr:.6g}\t{r.ssim:.6g}"
                   f"\t{r.delta_e:.6g}\t{r.uciqe:.6g}")
    return "\n".join(out) + "\n"
