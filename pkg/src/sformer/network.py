"""Dual-branch U-shaped enhancement network with ablation toggles.

An RGB encoder and a mirrored SNR-map encoder run four conv stages in
parallel. Skip connections optionally pass through Fourier-attention fusion
blocks; the bottleneck is either the frequency-adaptive transformer, a plain
ViT stack, or a conv block (the three ablation settings). A symmetric
decoder with transposed-conv upsampling and skip concatenation restores full
resolution, and a 1x1 head predicts an RGB residual added onto the input,
clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterRegistry, Tensor
from .errors import DimensionError, NumericError
from .fast import FourierAttentionBlock
from .fat import FatConfig, FreqAdaptiveTransformer, PlainVitBottleneck
from .layers import Conv2d, ConvBlock, ConvTranspose2d, EncoderBranch
from .snr import compute_snr_map


@dataclass
class ModelConfig:
    base_width: int = 16
    height: int = 256
    width: int = 256
    use_fast: bool = True
    use_fat: bool = True
    use_plain_vit: bool = False
    init_seed: int = 0
    fat: FatConfig = field(default_factory=FatConfig)

    def validate(self) -> None:
        if self.use_fat and self.use_plain_vit:
            raise DimensionError("use_fat and use_plain_vit are mutually exclusive")
        if self.base_width < 1:
            raise DimensionError(f"base_width must be positive, got {self.base_width}")
        div = 16 * (self.fat.patch if (self.use_fat or self.use_plain_vit) else 1)
        if self.height % div or self.width % div:
            raise DimensionError(
                f"resolution {self.height}x{self.width} must be divisible by {div}"
                " (4 pooling stages" +
                (f" x patch {self.fat.patch})" if div != 16 else ")"))
        if self.use_fat or self.use_plain_vit:
            self.fat.validate()

    @property
    def bottleneck_channels(self) -> int:
        return self.base_width * 8

    @property
    def bottleneck_size(self) -> tuple[int, int]:
        return self.height // 16, self.width // 16

    @property
    def token_grid(self) -> tuple[int, int]:
        bh, bw = self.bottleneck_size
        return bh // self.fat.patch, bw // self.fat.patch

    @property
    def uses_snr_branch(self) -> bool:
        return self.use_fast or self.use_fat

    def ablation_label(self) -> str:
        if self.use_fast and self.use_fat:
            return "full"
        if self.use_fast:
            return "fast"
        if self.use_fat:
            return "fat"
        if self.use_plain_vit:
            return "vit"
        return "bl"


def center_crop(t: Tensor, target_hw: tuple[int, int]) -> Tensor:
    """Center-crop the trailing two axes; identity when already matching."""
    h, w = t.shape[-2:]
    th, tw = target_hw
    if th > h or tw > w:
        raise DimensionError(f"cannot crop {h}x{w} up to {th}x{tw}")
    if th == h and tw == w:
        return t
    top = (h - th) // 2
    left = (w - tw) // 2
    return ad.narrow(ad.narrow(t, -2, top, th), -1, left, tw)


def _ensure_finite(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation in layer '{layer}'")
    return t


class SFormer:
    """The assembled network; construction fixes the parameter registry."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.registry = ParameterRegistry()
        reg = self.registry
        rng = np.random.default_rng(cfg.init_seed)
        c = cfg.base_width
        cb = cfg.bottleneck_channels

        self.rgb_encoder = EncoderBranch(reg, "enc_rgb", 3, c, rng)
        self.snr_encoder = (EncoderBranch(reg, "enc_snr", 1, c, rng)
                            if cfg.uses_snr_branch else None)
        if cfg.use_fast:
            self.fast_blocks = [
                FourierAttentionBlock(reg, f"fast{i + 1}", c * (2 ** i), rng)
                for i in range(4)]
        else:
            self.fast_blocks = None

        if cfg.use_fat:
            self.bottleneck = FreqAdaptiveTransformer(
                reg, "fat", cb, cfg.token_grid, cfg.fat, rng)
        elif cfg.use_plain_vit:
            self.bottleneck = PlainVitBottleneck(
                reg, "vit", cb, cfg.token_grid, cfg.fat, rng)
        else:
            self.bottleneck = ConvBlock(reg, "mid", cb, cb, rng)

        self.up = []
        self.dec = []
        prev = cb
        for i in reversed(range(4)):
            skip_ch = c * (2 ** i)
            self.up.append(ConvTranspose2d(reg, f"up{4 - i}", prev, skip_ch, rng))
            self.dec.append(ConvBlock(reg, f"dec{4 - i}", skip_ch * 2, skip_ch, rng))
            prev = skip_ch
        self.head = Conv2d(reg, "head", c, 3, 1, rng)

    # -- inference ----------------------------------------------------------
    def forward(self, x, trace: list | None = None) -> Tensor:
        """Enhance (N,3,H,W) or (3,H,W) input in [0,1]; output matches shape."""
        squeeze = False
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim == 3:
            x = ad.reshape(x, (1,) + x.shape)
            squeeze = True
        n, ch, h, w = x.shape
        if ch != 3 or h != self.cfg.height or w != self.cfg.width:
            raise DimensionError(
                f"input {x.shape} does not match configured resolution "
                f"3x{self.cfg.height}x{self.cfg.width}")

        def note(name: str, t: Tensor) -> Tensor:
            if trace is not None:
                trace.append((name, t.shape))
            return t

        note("input", x)
        skips, rgb_bottom = self.rgb_encoder(x)
        for i, s in enumerate(skips):
            note(f"enc_rgb.stage{i + 1}", s)
        _ensure_finite(rgb_bottom, "enc_rgb")
        note("enc_rgb.bottleneck", rgb_bottom)

        snr_skips = snr_bottom = None
        if self.cfg.uses_snr_branch:
            snr_map = compute_snr_map(x).values
            note("snr_map", snr_map)
            snr_skips, snr_bottom = self.snr_encoder(snr_map)
            for i, s in enumerate(snr_skips):
                note(f"enc_snr.stage{i + 1}", s)
            _ensure_finite(snr_bottom, "enc_snr")

        if self.cfg.use_fast:
            skips = [note(f"fast{i + 1}", blk(r, s)) for i, (blk, r, s) in
                     enumerate(zip(self.fast_blocks, skips, snr_skips))]
            _ensure_finite(skips[-1], "fast4")

        if self.cfg.use_fat:
            mid = self.bottleneck(rgb_bottom, snr_bottom)
        elif self.cfg.use_plain_vit:
            mid = self.bottleneck(rgb_bottom)
        else:
            mid = self.bottleneck(rgb_bottom)
        _ensure_finite(mid, "bottleneck")
        note("bottleneck", mid)

        y = mid
        for i, (up, dec) in enumerate(zip(self.up, self.dec)):
            y = up(y)
            skip = center_crop(skips[3 - i], y.shape[-2:])
            y = dec(ad.concat([skip, y], axis=1))
            note(f"dec{i + 1}", y)
        _ensure_finite(y, "decoder")

        residual = self.head(y)
        note("residual", residual)
        out = ad.clamp(x + residual, 0.0, 1.0)
        _ensure_finite(out, "output")
        note("output", out)
        if squeeze:
            out = ad.reshape(out, out.shape[1:])
        return out

    def encode_decode_trace(self, x) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes of every stage tensor in execution order."""
        trace: list[tuple[str, tuple[int, ...]]] = []
        self.forward(x, trace=trace)
        return trace

    def param_count(self) -> int:
        return self.registry.n_parameters()

    def load_state_from(self, source: ParameterRegistry) -> None:
        """Copy values from a loaded registry; names and shapes must match."""
        mine = set(self.registry.names())
        theirs = set(source.names())
        if mine != theirs:
            missing = sorted(mine - theirs)[:3]
            extra = sorted(theirs - mine)[:3]
            raise DimensionError(
                f"weight registry mismatch (missing {missing}, unexpected {extra})")
        for p in self.registry:
            src = source[p.name]
            if src.shape != p.shape:
                raise DimensionError(
                    f"shape mismatch for {p.name!r}: {src.shape} vs {p.shape}")
            p.data[...] = src.data
