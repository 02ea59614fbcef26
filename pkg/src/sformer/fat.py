"""Frequency-adaptive transformer bottleneck and its plain-ViT ablation twin.

Bottleneck features (RGB and SNR streams) are cut into non-overlapping
patches by a strided conv, embedded as token sequences, and fused by
cross-attention (RGB tokens query the SNR tokens) plus a learned positional
embedding. A stack of pre-norm blocks follows; each block runs multi-head
self-attention and then the adaptive feed-forward stage, which splits the
normalized tokens into a spatially-constant low band (global average) and
its high-band residual, re-weights the bands with channel and spatial
attention, and fuses them through a depthwise conv + gated GELU:

    low  = GAP(LN(p));  high = LN(p) - low
    f    = CA(low) * low + SA(high) * high
    g1, g2 = chunk(DConv(f));  out = p + GELU(g1) * g2

A final linear de-embedding folds tokens back into the bottleneck map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterRegistry, Tensor
from .errors import DimensionError
from .layers import Conv2d, DepthwiseConv2d, LayerNorm, Linear


@dataclass
class FatConfig:
    patch: int = 4
    depth: int = 4
    heads: int = 4
    embed: int = 128

    def validate(self) -> None:
        if self.embed % self.heads:
            raise DimensionError(
                f"embed dim {self.embed} not divisible by heads {self.heads}")
        if self.embed % 4:
            raise DimensionError(
                f"embed dim {self.embed} not divisible by 4 (channel attention)")


def tokens_to_grid(tokens: Tensor, gh: int, gw: int) -> Tensor:
    n, t, d = tokens.shape
    return ad.transpose(ad.reshape(tokens, (n, gh, gw, d)), (0, 3, 1, 2))


def grid_to_tokens(grid: Tensor) -> Tensor:
    n, d, gh, gw = grid.shape
    return ad.reshape(ad.transpose(grid, (0, 2, 3, 1)), (n, gh * gw, d))


class MultiHeadAttention:
    """Scaled dot-product attention with packed per-head projections."""

    def __init__(self, reg: ParameterRegistry, name: str, dim: int, heads: int,
                 rng: np.random.Generator):
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(reg, f"{name}.q", dim, dim, rng)
        self.wk = Linear(reg, f"{name}.k", dim, dim, rng)
        self.wv = Linear(reg, f"{name}.v", dim, dim, rng)
        self.wo = Linear(reg, f"{name}.out", dim, dim, rng)

    def _split(self, t: Tensor) -> Tensor:
        n, tk, _ = t.shape
        return ad.transpose(ad.reshape(t, (n, tk, self.heads, self.head_dim)),
                            (0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor, return_attn: bool = False):
        if q_in.shape[-1] != self.dim or kv_in.shape[-1] != self.dim:
            raise DimensionError(
                f"token dim mismatch: {q_in.shape} / {kv_in.shape} vs dim {self.dim}")
        n, tq, _ = q_in.shape
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(kv_in))
        v = self._split(self.wv(kv_in))
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, v)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (n, tq, self.dim))
        out = self.wo(merged)
        if return_attn:
            return out, attn
        return out


class ChannelAttention:
    """Squeeze-excitation gate: GAP -> d/4 -> ReLU -> d -> sigmoid."""

    def __init__(self, reg: ParameterRegistry, name: str, dim: int,
                 rng: np.random.Generator):
        self.fc1 = Linear(reg, f"{name}.fc1", dim, dim // 4, rng)
        self.fc2 = Linear(reg, f"{name}.fc2", dim // 4, dim, rng)

    def __call__(self, grid: Tensor) -> Tensor:
        n, d, _, _ = grid.shape
        pooled = ad.reshape(grid.mean(axis=(2, 3)), (n, 1, d))
        gate = ad.sigmoid(self.fc2(ad.relu(self.fc1(pooled))))
        return ad.reshape(gate, (n, d, 1, 1))


class SpatialAttention:
    """Per-position gate from pooled channel statistics through a 3x3 conv."""

    def __init__(self, reg: ParameterRegistry, name: str,
                 rng: np.random.Generator):
        self.conv = Conv2d(reg, f"{name}.conv", 2, 1, 3, rng, padding=1)

    def __call__(self, grid: Tensor) -> Tensor:
        mean_c = grid.mean(axis=1, keepdims=True)
        max_c = grid.max(axis=1, keepdims=True)
        return ad.sigmoid(self.conv(ad.concat([mean_c, max_c], axis=1)))


class AdaptiveFeedForward:
    """The gated low/high-band feed-forward stage (residual included)."""

    def __init__(self, reg: ParameterRegistry, name: str, dim: int,
                 rng: np.random.Generator):
        self.dim = dim
        self.ln = LayerNorm(reg, f"{name}.ln", (dim,))
        self.ca = ChannelAttention(reg, f"{name}.ca", dim, rng)
        self.sa = SpatialAttention(reg, f"{name}.sa", rng)
        self.dconv = DepthwiseConv2d(reg, f"{name}.dconv", dim, rng, multiplier=2)

    def split_bands(self, tokens: Tensor, gh: int, gw: int):
        """LN then decompose into (low, high) spatial grids; low + high == LN."""
        y = tokens_to_grid(self.ln(tokens), gh, gw)
        low = y.mean(axis=(2, 3), keepdims=True) * Tensor(np.ones_like(y.data))
        high = y - low
        return y, low, high

    def __call__(self, tokens: Tensor, gh: int, gw: int) -> Tensor:
        n, t, d = tokens.shape
        if t != gh * gw or d != self.dim:
            raise DimensionError(
                f"tokens {tokens.shape} do not fit grid {gh}x{gw} with dim {self.dim}")
        _, low, high = self.split_bands(tokens, gh, gw)
        fused = self.ca(low) * low + self.sa(high) * high
        expanded = self.dconv(fused)
        g1 = ad.narrow(expanded, 1, 0, d)
        g2 = ad.narrow(expanded, 1, d, d)
        gate = grid_to_tokens(ad.gelu(g1) * g2)
        return tokens + gate


class TransformerLayer:
    """Pre-norm MHA followed by the adaptive feed-forward stage."""

    def __init__(self, reg: ParameterRegistry, name: str, dim: int, heads: int,
                 rng: np.random.Generator):
        self.ln = LayerNorm(reg, f"{name}.ln_attn", (dim,))
        self.mha = MultiHeadAttention(reg, f"{name}.mha", dim, heads, rng)
        self.affn = AdaptiveFeedForward(reg, f"{name}.affn", dim, rng)

    def __call__(self, p: Tensor, gh: int, gw: int) -> Tensor:
        y = self.ln(p)
        p = p + self.mha(y, y)
        return self.affn(p, gh, gw)


class PatchEmbed:
    """Non-overlapping patch embedding via a patch-strided conv."""

    def __init__(self, reg: ParameterRegistry, name: str, channels: int,
                 dim: int, patch: int, rng: np.random.Generator):
        self.patch = patch
        self.conv = Conv2d(reg, name, channels, dim, patch, rng, stride=patch)

    def __call__(self, feat: Tensor) -> Tensor:
        _, _, h, w = feat.shape
        if h % self.patch or w % self.patch:
            raise DimensionError(
                f"feature {feat.shape} not divisible by patch {self.patch}")
        return grid_to_tokens(self.conv(feat))


class FreqAdaptiveTransformer:
    """Full bottleneck: dual patch embed, cross-attention, L layers, de-embed."""

    def __init__(self, reg: ParameterRegistry, name: str, channels: int,
                 grid: tuple[int, int], cfg: FatConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.channels = channels
        self.grid = grid
        d = cfg.embed
        n_tok = grid[0] * grid[1]
        self.embed_rgb = PatchEmbed(reg, f"{name}.embed_rgb", channels, d, cfg.patch, rng)
        self.embed_snr = PatchEmbed(reg, f"{name}.embed_snr", channels, d, cfg.patch, rng)
        self.pos = reg.add(f"{name}.pos",
                           rng.normal(0.0, 0.02, size=(n_tok, d)).astype(np.float32))
        self.cross = MultiHeadAttention(reg, f"{name}.cross", d, cfg.heads, rng)
        self.layers = [TransformerLayer(reg, f"{name}.layer{i}", d, cfg.heads, rng)
                       for i in range(cfg.depth)]
        self.de_embed = Linear(reg, f"{name}.de_embed", d,
                               channels * cfg.patch * cfg.patch, rng)

    def cross_attend(self, rgb_tokens: Tensor, snr_tokens: Tensor,
                     return_attn: bool = False):
        """CrossAtt(T_rgb, T_snr) + T_rgb + positional embedding."""
        if rgb_tokens.shape != snr_tokens.shape:
            raise DimensionError(
                f"token shapes differ: {rgb_tokens.shape} vs {snr_tokens.shape}")
        if rgb_tokens.shape[1] != self.pos.shape[0]:
            raise DimensionError(
                f"{rgb_tokens.shape[1]} tokens but positional table has {self.pos.shape[0]}")
        if return_attn:
            mixed, attn = self.cross(rgb_tokens, snr_tokens, return_attn=True)
            return mixed + rgb_tokens + self.pos, attn
        return self.cross(rgb_tokens, snr_tokens) + rgb_tokens + self.pos

    def unfold(self, tokens: Tensor) -> Tensor:
        """Linear de-embedding then fold patches back to (N, C, h, w)."""
        gh, gw = self.grid
        p = self.cfg.patch
        n = tokens.shape[0]
        patches = self.de_embed(tokens)  # (N, T, C*p*p)
        patches = ad.reshape(patches, (n, gh, gw, self.channels, p, p))
        patches = ad.transpose(patches, (0, 3, 1, 4, 2, 5))
        return ad.reshape(patches, (n, self.channels, gh * p, gw * p))

    def __call__(self, rgb_feat: Tensor, snr_feat: Tensor) -> Tensor:
        if rgb_feat.shape != snr_feat.shape:
            raise DimensionError(
                f"bottleneck shapes differ: {rgb_feat.shape} vs {snr_feat.shape}")
        gh, gw = self.grid
        p = self.cross_attend(self.embed_rgb(rgb_feat), self.embed_snr(snr_feat))
        for layer in self.layers:
            p = layer(p, gh, gw)
        return self.unfold(p)


class PlainVitBottleneck:
    """Ablation bottleneck: patch embed + PE, pre-norm MHA/MLP blocks, no
    cross-attention and no adaptive feed-forward."""

    def __init__(self, reg: ParameterRegistry, name: str, channels: int,
                 grid: tuple[int, int], cfg: FatConfig, rng: np.random.Generator,
                 mlp_ratio: int = 2):
        cfg.validate()
        self.cfg = cfg
        self.channels = channels
        self.grid = grid
        d = cfg.embed
        n_tok = grid[0] * grid[1]
        self.embed = PatchEmbed(reg, f"{name}.embed", channels, d, cfg.patch, rng)
        self.pos = reg.add(f"{name}.pos",
                           rng.normal(0.0, 0.02, size=(n_tok, d)).astype(np.float32))
        self.blocks = []
        for i in range(cfg.depth):
            ln1 = LayerNorm(reg, f"{name}.layer{i}.ln_attn", (d,))
            mha = MultiHeadAttention(reg, f"{name}.layer{i}.mha", d, cfg.heads, rng)
            ln2 = LayerNorm(reg, f"{name}.layer{i}.ln_mlp", (d,))
            fc1 = Linear(reg, f"{name}.layer{i}.mlp_in", d, d * mlp_ratio, rng)
            fc2 = Linear(reg, f"{name}.layer{i}.mlp_out", d * mlp_ratio, d, rng)
            self.blocks.append((ln1, mha, ln2, fc1, fc2))
        self.de_embed = Linear(reg, f"{name}.de_embed", d,
                               channels * cfg.patch * cfg.patch, rng)

    def __call__(self, feat: Tensor) -> Tensor:
        gh, gw = self.grid
        p = self.embed(feat) + self.pos
        for ln1, mha, ln2, fc1, fc2 in self.blocks:
            y = ln1(p)
            p = p + mha(y, y)
            p = p + fc2(ad.gelu(fc1(ln2(p))))
        patch = self.cfg.patch
        n = p.shape[0]
        patches = self.de_embed(p)
        patches = ad.reshape(patches, (n, gh, gw, self.channels, patch, patch))
        patches = ad.transpose(patches, (0, 3, 1, 4, 2, 5))
        return ad.reshape(patches, (n, self.channels, gh * patch, gw * patch))
