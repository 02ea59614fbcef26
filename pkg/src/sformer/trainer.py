"""Optimization loop: AdamW with decoupled weight decay, cosine annealing
with periodic warm restarts, optional paired augmentation, checkpointing.

Every source of randomness is derived from (seed, step) so an interrupted
run resumed from a checkpoint replays exactly the same batches, augmentations
and updates as an uninterrupted one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ParameterRegistry, Tensor
from .errors import ConfigError, FormatError, NumericError
from .losses import LossWeights, RandomFeaturePyramid, total_loss
from .metrics import psnr
from .network import SFormer
from .synth import AugmentPolicy, PairedSample, augment
from .weights_io import load_weights, save_weights

CURVE_HEADER = ("step\tlr\ttotal\tspatial\tfreq\tlab\tlch\tperceptual\n")


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_min: float = 1e-6
    steps: int = 200
    batch: int = 4
    restart_period: int = 500
    weight_decay: float = 1e-4
    seed: int = 0
    clip_norm: float = 5.0        # 0 disables clipping
    checkpoint_every: int = 0     # 0 disables intermediate checkpoints
    loss: LossWeights = field(default_factory=LossWeights)
    augment_policy: AugmentPolicy | None = None

    def validate(self) -> None:
        if self.lr_min > self.lr0:
            raise ConfigError(f"lr_min {self.lr_min} exceeds lr0 {self.lr0}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.restart_period < 1:
            raise ConfigError(f"restart_period must be >= 1, got {self.restart_period}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        self.loss.validate()


def cosine_restart_lr(step: int, cfg: TrainConfig) -> float:
    """lr_min + (lr0-lr_min)/2 * (1 + cos(pi * (step mod T0) / T0))."""
    pos = step % cfg.restart_period
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (
        1.0 + math.cos(math.pi * pos / cfg.restart_period))


class AdamW:
    """Decoupled weight decay plus bias-corrected Adam moments."""

    def __init__(self, registry: ParameterRegistry, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.registry = registry
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in registry}
        self.v = {p.name: np.zeros_like(p.data) for p in registry}

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.registry:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {p.name!r}")
            if self.weight_decay:
                p.data *= np.float32(1.0 - lr * self.weight_decay)
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= np.float32(lr) * update


def clip_gradients(registry: ParameterRegistry, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in registry:
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = np.float32(max_norm / norm)
        for p in registry:
            p.grad *= scale
    return norm


def _batch_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, step, stream)))


def assemble_batch(dataset: list[PairedSample], cfg: TrainConfig, step: int):
    """Deterministic batch for a step: sample indices, augment, stack."""
    rng = _batch_rng(cfg.seed, step, 0)
    idx = rng.integers(0, len(dataset), size=cfg.batch)
    pairs = []
    for j, i in enumerate(idx):
        pair = dataset[int(i)]
        if cfg.augment_policy is not None:
            partner = dataset[int(rng.integers(0, len(dataset)))]
            pair = augment(pair, cfg.augment_policy,
                           _batch_rng(cfg.seed, step, 1 + j), partner=partner)
        pairs.append(pair)
    x = np.stack([p.degraded for p in pairs])
    y = np.stack([p.reference for p in pairs])
    return x, y


@dataclass
class TrainResult:
    registry: ParameterRegistry
    curve: list[dict]

    def curve_tsv(self) -> str:
        out = [CURVE_HEADER.rstrip("\n")]
        for row in self.curve:
            out.append("\t".join([
                str(row["step"]), f"{row['lr']:.8g}", f"{row['total']:.8g}",
                f"{row['spatial']:.8g}", f"{row['freq']:.8g}", f"{row['lab']:.8g}",
                f"{row['lch']:.8g}", f"{row['perceptual']:.8g}"]))
        return "\n".join(out) + "\n"


def train(model: SFormer, dataset: list[PairedSample], cfg: TrainConfig,
          checkpoint_dir=None, resume_from=None) -> TrainResult:
    """Run the optimization; returns final weights plus the loss curve."""
    cfg.validate()
    if not dataset:
        raise ConfigError("dataset is empty")
    extractor = RandomFeaturePyramid(cfg.loss.perceptual_seed)
    optimizer = AdamW(model.registry, weight_decay=cfg.weight_decay)
    start_step = 0
    if resume_from is not None:
        start_step = load_checkpoint(resume_from, model, optimizer)

    curve: list[dict] = []
    for step in range(start_step, cfg.steps):
        x, y = assemble_batch(dataset, cfg, step)
        lr = cosine_restart_lr(step, cfg)
        try:
            model.registry.zero_grad()
            pred = model.forward(Tensor(x))
            loss, parts = total_loss(pred, Tensor(y), cfg.loss, extractor)
            loss.backward()
            if cfg.clip_norm > 0:
                clip_gradients(model.registry, cfg.clip_norm)
            optimizer.step(lr)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        curve.append({"step": step, "lr": lr, **{k: parts[k] for k in
                      ("total", "spatial", "freq", "lab", "lch", "perceptual")}})
        if (checkpoint_dir is not None and cfg.checkpoint_every > 0
                and (step + 1) % cfg.checkpoint_every == 0):
            save_checkpoint(Path(checkpoint_dir) / f"step_{step + 1:06d}",
                            model, optimizer, step + 1, cfg.seed)
    return TrainResult(model.registry, curve)


def training_set_psnr(model: SFormer, dataset: list[PairedSample]) -> float:
    """Mean PSNR of the enhanced training inputs against their references."""
    vals = []
    for pair in dataset:
        out = model.forward(Tensor(pair.degraded[None]))
        vals.append(psnr(out.data[0], pair.reference))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def _moments_registry(moments: dict[str, np.ndarray]) -> ParameterRegistry:
    reg = ParameterRegistry()
    for name, arr in moments.items():
        reg.add(name, arr)
    return reg


def _file_checksum(path: Path) -> int:
    data = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    return int(data.sum(dtype=np.uint64))


def save_checkpoint(ckpt_dir, model: SFormer, optimizer: AdamW,
                    step: int, seed: int) -> None:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_weights(model.registry, ckpt_dir / "weights.sfw")
    save_weights(_moments_registry(optimizer.m), ckpt_dir / "adam_m.sfw")
    save_weights(_moments_registry(optimizer.v), ckpt_dir / "adam_v.sfw")
    state = [
        f"step = {step}",
        f"seed = {seed}",
        f"m_checksum = {_file_checksum(ckpt_dir / 'adam_m.sfw')}",
        f"v_checksum = {_file_checksum(ckpt_dir / 'adam_v.sfw')}",
    ]
    (ckpt_dir / "state.txt").write_text("\n".join(state) + "\n", encoding="utf-8")


def load_checkpoint(ckpt_dir, model: SFormer, optimizer: AdamW) -> int:
    """Restore weights and optimizer state; returns the step to resume at."""
    ckpt_dir = Path(ckpt_dir)
    state = {}
    for line in (ckpt_dir / "state.txt").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            state[key.strip()] = value.strip()
    for key, fname in (("m_checksum", "adam_m.sfw"), ("v_checksum", "adam_v.sfw")):
        if int(state[key]) != _file_checksum(ckpt_dir / fname):
            raise FormatError(f"{ckpt_dir}: {fname} checksum mismatch")
    model.load_state_from(load_weights(ckpt_dir / "weights.sfw"))
    for target, fname in ((optimizer.m, "adam_m.sfw"), (optimizer.v, "adam_v.sfw")):
        loaded = load_weights(ckpt_dir / fname)
        if set(loaded.names()) != set(target):
            raise FormatError(f"{ckpt_dir}: {fname} does not match the model")
        for p in loaded:
            target[p.name][...] = p.data
    step = int(state["step"])
    optimizer.t = step
    return step
