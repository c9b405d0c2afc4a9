"""Two-stage training, the joint baseline, and checkpoint persistence.

Stage 1 fits encoder and decoder on clean covers. Stage 2 freezes them and
fits only the restorer on (noised, clean) pairs. ``train_joint`` optimizes
everything at once through the noise layer for comparison.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .codec import KeyCodec, build_codec, weights_digest
from .keyfile import atomic_write
from .noise import NoiseConfig, apply_noise_pipeline
from .restorer import LossWeights, Restorer, stage2_loss
from .sgxor import SGXorParams

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "History",
    "stage1_loss",
    "cosine_warmup_lr",
    "make_codec",
    "train_stage1",
    "train_stage2",
    "train_joint",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    image_size: int = 512
    length: int = 1024
    feature_shape: tuple[int, int, int] = (1, 32, 32)
    batch_size: int = 16
    epochs_stage1: int = 150
    epochs_stage2: int = 150
    base_lr: float = 1e-3
    min_lr: float = 1e-5
    restorer_lr: float | None = None
    warmup_fraction: float = 0.05
    weight_decay: float = 0.02
    hidden: int = 16
    restorer_width: int = 16
    estimator: str = "sgxor"
    normalization: str = "calibrated"
    lambda_pix: float = 10.0
    lambda_str: float = 1.0
    multiscale_ssim: bool = False
    joint_decoder_weight: float = 1.0
    sgxor_m: float = 10.0
    sgxor_n: float = -0.5
    seed: int = 0

    def __post_init__(self):
        self.feature_shape = tuple(int(v) for v in self.feature_shape)
        c, h, w = self.feature_shape
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.length != c * h * w:
            raise ValueError(f"length {self.length} must equal C'*H'*W' = {c * h * w}")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.min_lr > self.base_lr or self.min_lr > self.restorer_peak_lr:
            raise ValueError("min_lr must not exceed the peak learning rates")

    @property
    def restorer_peak_lr(self) -> float:
        return self.base_lr if self.restorer_lr is None else self.restorer_lr

    @property
    def epochs_total(self) -> int:
        return self.epochs_stage1 + self.epochs_stage2

    @property
    def sgxor_params(self) -> SGXorParams:
        return SGXorParams(self.sgxor_m, self.sgxor_n)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_pix, self.lambda_str)

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        base = dict(image_size=64, length=64, feature_shape=(1, 8, 8), epochs_stage1=30, epochs_stage2=30,
                    base_lr=2e-2, restorer_lr=2e-3)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_shape"] = list(self.feature_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class History:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)


def stage1_loss(m_pre: torch.Tensor, message: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the message bits."""
    if m_pre.shape != message.shape:
        raise ValueError(f"shape mismatch: {tuple(m_pre.shape)} vs {tuple(message.shape)}")
    return F.mse_loss(m_pre, message)


def cosine_warmup_lr(step: int, total_steps: int, base_lr: float, min_lr: float, warmup_steps: int) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to ``min_lr`` on the last step."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - 1 - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


class _Schedule:
    """Per-step cosine/warmup schedule; each param group carries its own ``peak_lr``."""

    def __init__(self, optimizer, cfg: TrainConfig, total_steps: int):
        self.optimizer = optimizer
        self.cfg = cfg
        self.total = max(total_steps, 1)
        self.warmup = int(round(cfg.warmup_fraction * self.total))
        self.step_idx = 0

    def apply(self) -> float:
        lrs = []
        for group in self.optimizer.param_groups:
            group["lr"] = cosine_warmup_lr(self.step_idx, self.total, group["peak_lr"], self.cfg.min_lr, self.warmup)
            lrs.append(group["lr"])
        self.step_idx += 1
        return lrs[0]


def _batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]


def _random_messages(count: int, length: int, gen: torch.Generator) -> torch.Tensor:
    return torch.randint(0, 2, (count, length), generator=gen).float()


def _check_finite(loss: torch.Tensor, stage: str, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"{stage}: loss became {loss.item()} at step {step}")


def make_codec(cfg: TrainConfig, variant: str | None = None) -> KeyCodec:
    """Build a codec with deterministic initialization from ``cfg.seed``."""
    torch.manual_seed(cfg.seed)
    return build_codec(variant or cfg.estimator, cfg.image_size, cfg.feature_shape, cfg.length,
                       cfg.sgxor_params, cfg.hidden, cfg.normalization)


def make_restorer(cfg: TrainConfig) -> Restorer:
    torch.manual_seed(cfg.seed + 1)
    return Restorer(width=cfg.restorer_width)


def _steps(n: int, cfg: TrainConfig, epochs: int) -> int:
    return epochs * math.ceil(n / cfg.batch_size)


def _calibrate(codec: KeyCodec, images: torch.Tensor) -> None:
    if codec.moments.mode == "calibrated" and not bool(codec.moments.fitted):
        codec.moments.fit(images)


def train_stage1(codec: KeyCodec, images: torch.Tensor, cfg: TrainConfig,
                 callback: Callable[[int, float], None] | None = None) -> History:
    """Noise-free logic construction: decoder sees the clean cover."""
    if len(images) == 0:
        raise ValueError("empty training set")
    _calibrate(codec, images)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.AdamW([{"params": list(codec.parameters()), "peak_lr": cfg.base_lr}],
                            lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    sched = _Schedule(opt, cfg, _steps(len(images), cfg, cfg.epochs_stage1))
    hist = History()
    codec.train()
    step = 0
    for _ in range(cfg.epochs_stage1):
        for idx in _batches(len(images), cfg.batch_size, gen):
            cover = images[idx]
            msg = _random_messages(len(idx), cfg.length, gen)
            lr = sched.apply()
            _, m_pre = codec(cover, msg)
            loss = stage1_loss(m_pre, msg)
            _check_finite(loss, "stage 1", step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            hist.losses.append(loss.item())
            hist.lrs.append(lr)
            if callback:
                callback(step, hist.losses[-1])
            step += 1
    codec.eval()
    return hist


def train_stage2(codec: KeyCodec, restorer: Restorer, images: torch.Tensor, cfg: TrainConfig,
                 noise_cfg: NoiseConfig, callback: Callable[[int, float], None] | None = None) -> History:
    """Restoration learning with the codec frozen; raises if codec weights change."""
    if len(images) == 0:
        raise ValueError("empty training set")
    before = weights_digest(codec)
    for p in codec.parameters():
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(cfg.seed + 2)
    rng = np.random.default_rng([cfg.seed, 2])
    opt = torch.optim.AdamW([{"params": list(restorer.parameters()), "peak_lr": cfg.restorer_peak_lr}],
                            lr=cfg.restorer_peak_lr, weight_decay=cfg.weight_decay)
    sched = _Schedule(opt, cfg, _steps(len(images), cfg, cfg.epochs_stage2))
    weights = cfg.loss_weights
    hist = History()
    restorer.train()
    step = 0
    try:
        for _ in range(cfg.epochs_stage2):
            for idx in _batches(len(images), cfg.batch_size, gen):
                cover = images[idx]
                with torch.no_grad():
                    noised = apply_noise_pipeline(cover, noise_cfg, rng)
                lr = sched.apply()
                restored = restorer(noised)
                loss = stage2_loss(restored, cover, weights, cfg.multiscale_ssim)
                _check_finite(loss, "stage 2", step)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                hist.losses.append(loss.item())
                hist.lrs.append(lr)
                if callback:
                    callback(step, hist.losses[-1])
                step += 1
    finally:
        for p in codec.parameters():
            p.requires_grad_(True)
    restorer.eval()
    if weights_digest(codec) != before:
        raise RuntimeError("codec weights changed during stage 2")
    return hist


def train_joint(codec: KeyCodec, restorer: Restorer, images: torch.Tensor, cfg: TrainConfig,
                noise_cfg: NoiseConfig, callback: Callable[[int, float], None] | None = None) -> History:
    """Single-stage baseline: every module trained through noise and restoration."""
    if len(images) == 0:
        raise ValueError("empty training set")
    _calibrate(codec, images)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 3])
    groups = [
        {"params": list(codec.parameters()), "peak_lr": cfg.base_lr},
        {"params": list(restorer.parameters()), "peak_lr": cfg.restorer_peak_lr},
    ]
    opt = torch.optim.AdamW(groups, lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    sched = _Schedule(opt, cfg, _steps(len(images), cfg, cfg.epochs_total))
    weights = cfg.loss_weights
    hist = History()
    codec.train()
    restorer.train()
    step = 0
    for _ in range(cfg.epochs_total):
        for idx in _batches(len(images), cfg.batch_size, gen):
            cover = images[idx]
            msg = _random_messages(len(idx), cfg.length, gen)
            with torch.no_grad():
                noised = apply_noise_pipeline(cover, noise_cfg, rng)
            lr = sched.apply()
            restored = restorer(noised)
            _, m_pre = codec(cover, msg, restored)
            loss = cfg.joint_decoder_weight * stage1_loss(m_pre, msg) + stage2_loss(
                restored, cover, weights, cfg.multiscale_ssim)
            _check_finite(loss, "joint", step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            hist.losses.append(loss.item())
            hist.lrs.append(lr)
            if callback:
                callback(step, hist.losses[-1])
            step += 1
    codec.eval()
    restorer.eval()
    return hist


CHECKPOINT_FORMAT = "zerokey-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    codec: KeyCodec
    restorer: Restorer | None
    train_config: TrainConfig
    noise_config: NoiseConfig
    variant: str

    @property
    def digest(self) -> bytes:
        return weights_digest(self.codec)


def save_checkpoint(path: str | Path, codec: KeyCodec, restorer: Restorer | None, cfg: TrainConfig,
                    noise_cfg: NoiseConfig) -> bytes:
    """Write atomically; returns the codec digest stored alongside the weights."""
    digest = weights_digest(codec)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": codec.variant if codec.variant == "cat_conv" else codec.estimator,
        "train_config": cfg.to_dict(),
        "noise_config": noise_cfg.to_dict(),
        "codec": codec.state_dict(),
        "restorer": None if restorer is None else restorer.state_dict(),
        "digest": digest.hex(),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    atomic_write(Path(path), buf.getvalue())
    return digest


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint file")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload['version']}")
    cfg = TrainConfig.from_dict(payload["train_config"])
    noise_cfg = NoiseConfig(**payload["noise_config"])
    codec = build_codec(payload["variant"], cfg.image_size, cfg.feature_shape, cfg.length,
                        cfg.sgxor_params, cfg.hidden, cfg.normalization)
    codec.load_state_dict(payload["codec"])
    codec.eval()
    restorer = None
    if payload["restorer"] is not None:
        restorer = Restorer(width=cfg.restorer_width)
        restorer.load_state_dict(payload["restorer"])
        restorer.eval()
    if weights_digest(codec).hex() != payload["digest"]:
        raise ValueError("checkpoint digest does not match its weights")
    return Checkpoint(codec, restorer, cfg, noise_cfg, payload["variant"])
