"""Differentiable screen-shooting simulator.

Stages run in capture order: perspective warp, lightness shift, Moire
gratings, sensor noise. Every random draw comes from a numpy ``Generator``;
a batch gets one child stream per image so results do not depend on batch
composition. Images are (B, C, H, W) tensors in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "NoiseConfig",
    "NoiseModel",
    "NoiseLayer",
    "image_streams",
    "homography_from_points",
    "warp_homography",
    "perspective",
    "lightness",
    "moire",
    "gaussian",
    "apply_noise_pipeline",
]

Streams = Sequence[np.random.Generator]


@dataclass
class NoiseConfig:
    perspective_max_offset: float = 0.1
    lightness_b_range: tuple[float, float] = (0.5, 0.7)
    moire_prob: float = 0.2
    moire_amp: float = 0.05
    moire_freq_range: tuple[float, float] = (5.0, 50.0)
    moire_gratings: int = 2
    gauss_sigma: float = 0.02
    rng_seed: int = 0

    def __post_init__(self):
        self.lightness_b_range = tuple(float(v) for v in self.lightness_b_range)
        self.moire_freq_range = tuple(float(v) for v in self.moire_freq_range)
        lo, hi = self.lightness_b_range
        flo, fhi = self.moire_freq_range
        if not 0.0 <= self.moire_prob <= 1.0:
            raise ValueError("moire_prob must lie in [0, 1]")
        if min(self.perspective_max_offset, lo, hi, self.moire_amp, flo, fhi, self.gauss_sigma) < 0:
            raise ValueError("noise ranges must be nonnegative")
        if lo > hi or flo > fhi:
            raise ValueError("range bounds must be ordered (low, high)")

    @classmethod
    def disabled(cls) -> "NoiseConfig":
        return cls(perspective_max_offset=0.0, lightness_b_range=(0.0, 0.0), moire_prob=0.0, gauss_sigma=0.0)

    @classmethod
    def toy(cls, **overrides) -> "NoiseConfig":
        """Milder warp and lightness for 64x64 covers.

        At full strength the warp and brightness shift flip close to half of
        an 8x8 moment map's bits, leaving nothing for the restorer to recover.
        """
        base = dict(perspective_max_offset=0.02, lightness_b_range=(0.25, 0.35))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lightness_b_range"] = list(self.lightness_b_range)
        d["moire_freq_range"] = list(self.moire_freq_range)
        return d


class NoiseModel(Protocol):
    """Anything mapping (images, rng) to distorted images of the same shape."""

    def __call__(self, images: torch.Tensor, rng: np.random.Generator) -> torch.Tensor: ...


def image_streams(rng: np.random.Generator | Streams, count: int) -> list[np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        return list(rng.spawn(count))
    streams = list(rng)
    if len(streams) != count:
        raise ValueError(f"need {count} rng streams, got {len(streams)}")
    return streams


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 H with H @ [x, y, 1] ~ [x', y', 1] for four point pairs."""
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i], rhs[2 * i + 1] = u, v
    h = np.linalg.solve(a, rhs)
    return np.append(h, 1.0).reshape(3, 3)


def _sampling_grid(inverse: np.ndarray, h: int, w: int, dtype: torch.dtype) -> torch.Tensor:
    # output pixel centres (pixel-edge coordinates) mapped back into the source image
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)])
    src = inverse @ pts
    sx, sy = src[0] / src[2], src[1] / src[2]
    grid = np.stack([2.0 * sx / w - 1.0, 2.0 * sy / h - 1.0], axis=-1).reshape(h, w, 2)
    return torch.from_numpy(grid).to(dtype)


def warp_homography(images: torch.Tensor, homographies: Sequence[np.ndarray]) -> torch.Tensor:
    """Warp each image by its forward homography; bilinear, zeros outside."""
    b, _, h, w = images.shape
    grids = torch.stack([_sampling_grid(np.linalg.inv(hm), h, w, images.dtype) for hm in homographies])
    return F.grid_sample(images, grids.to(images.device), mode="bilinear", padding_mode="zeros", align_corners=False)


def _corners(h: int, w: int) -> np.ndarray:
    return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])


def _random_homography(gen: np.random.Generator, h: int, w: int, max_offset: float) -> np.ndarray:
    src = _corners(h, w)
    scale = np.array([w, h]) * max_offset
    for _ in range(100):
        dst = src + gen.uniform(-1.0, 1.0, size=(4, 2)) * scale
        try:
            hm = homography_from_points(src, dst)
        except np.linalg.LinAlgError:
            continue
        if np.isfinite(hm).all() and abs(np.linalg.det(hm)) > 1e-8 and np.linalg.cond(hm) < 1e8:
            return hm
    raise RuntimeError("could not draw a non-degenerate homography")


def perspective(images: torch.Tensor, rng, cfg: NoiseConfig) -> torch.Tensor:
    streams = image_streams(rng, images.shape[0])
    if cfg.perspective_max_offset == 0:
        return images
    _, _, h, w = images.shape
    hms = [_random_homography(g, h, w, cfg.perspective_max_offset) for g in streams]
    return warp_homography(images, hms)


def lightness(images: torch.Tensor, rng, cfg: NoiseConfig) -> torch.Tensor:
    streams = image_streams(rng, images.shape[0])
    lo, hi = cfg.lightness_b_range
    b = torch.tensor([g.uniform(lo, hi) for g in streams], dtype=images.dtype, device=images.device)
    return torch.clamp(images + b.view(-1, 1, 1, 1), 0.0, 1.0)


def moire_pattern(gen: np.random.Generator, h: int, w: int, cfg: NoiseConfig) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    pattern = np.zeros((h, w))
    for _ in range(cfg.moire_gratings):
        freq = gen.uniform(*cfg.moire_freq_range)
        theta = gen.uniform(0.0, math.pi)
        phase = gen.uniform(0.0, 2.0 * math.pi)
        pattern += cfg.moire_amp * np.cos(2.0 * math.pi * freq * (xs * math.cos(theta) + ys * math.sin(theta)) + phase)
    return pattern


def moire(images: torch.Tensor, rng, cfg: NoiseConfig, triggered: list | None = None) -> torch.Tensor:
    """Superimpose cosine gratings on each image with probability ``moire_prob``.

    ``triggered``, when given, receives one bool per image.
    """
    streams = image_streams(rng, images.shape[0])
    _, _, h, w = images.shape
    patterns = []
    for g in streams:
        hit = bool(g.random() < cfg.moire_prob)
        if triggered is not None:
            triggered.append(hit)
        patterns.append(moire_pattern(g, h, w, cfg) if hit else np.zeros((h, w)))
    if not any(np.any(p) for p in patterns):
        return images
    pat = torch.from_numpy(np.stack(patterns)).to(images.dtype).unsqueeze(1)
    return torch.clamp(images + pat.to(images.device), 0.0, 1.0)


def gaussian(images: torch.Tensor, rng, cfg: NoiseConfig) -> torch.Tensor:
    streams = image_streams(rng, images.shape[0])
    if cfg.gauss_sigma == 0:
        return images
    shape = images.shape[1:]
    noise = np.stack([g.normal(0.0, cfg.gauss_sigma, size=shape) for g in streams])
    return torch.clamp(images + torch.from_numpy(noise).to(images.dtype).to(images.device), 0.0, 1.0)


def apply_noise_pipeline(images: torch.Tensor, cfg: NoiseConfig, rng: np.random.Generator | Streams) -> torch.Tensor:
    streams = image_streams(rng, images.shape[0])
    x = perspective(images, streams, cfg)
    x = lightness(x, streams, cfg)
    x = moire(x, streams, cfg)
    return gaussian(x, streams, cfg)


class NoiseLayer(nn.Module):
    """Module wrapper; keeps its own generator unless one is passed per call."""

    def __init__(self, cfg: NoiseConfig | None = None):
        super().__init__()
        self.cfg = cfg or NoiseConfig()
        self.rng = np.random.default_rng(self.cfg.rng_seed)

    def forward(self, images: torch.Tensor, rng: np.random.Generator | None = None) -> torch.Tensor:
        return apply_noise_pipeline(images, self.cfg, self.rng if rng is None else rng)
