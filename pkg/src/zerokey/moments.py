"""Radial harmonic Fourier moment (RHFM) features on the pixel grid.

Pixel centres are mapped into the inscribed unit disk and each output slot
owns one kernel ``T_s(r) exp(-i k theta)`` scaled by the pixel area, so a
moment is a single dot product with the grayscale image. Magnitudes are
turned into a ``[0, 1]`` map either by per-map min-max, or by per-slot
calibration against a reference image set (the default used by the codec).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

__all__ = [
    "MomentKernelBank",
    "MomentExtractor",
    "to_gray",
    "radial_basis",
    "build_kernel_bank",
    "project",
    "moment_magnitudes",
    "extract_moment_map",
    "normalize_features",
]

LUMA = (0.299, 0.587, 0.114)
_MAG_EPS = 1e-12
_LOG_FLOOR = 1e-6


def to_gray(image: torch.Tensor) -> torch.Tensor:
    """BT.601 luminance. Accepts (3, H, W) or (B, 3, H, W); keeps the channel dim."""
    if image.dim() not in (3, 4) or image.shape[-3] != 3:
        raise ValueError(f"expected a 3-channel image, got shape {tuple(image.shape)}")
    r, g, b = image.unbind(dim=-3)
    return (LUMA[0] * r + LUMA[1] * g + LUMA[2] * b).unsqueeze(-3)


def radial_basis(s: int, r: np.ndarray) -> np.ndarray:
    """RHFM radial function, orthonormal on [0, 1] under weight r."""
    with np.errstate(divide="ignore"):
        if s == 0:
            return 1.0 / np.sqrt(r)
        if s % 2 == 1:
            return np.sqrt(2.0 / r) * np.sin(math.pi * (s + 1) * r)
        return np.sqrt(2.0 / r) * np.cos(math.pi * s * r)


@dataclass(frozen=True)
class MomentKernelBank:
    kernels: np.ndarray  # complex128, (count, H, W)
    order_layout: dict[tuple[int, int], int]
    feature_shape: tuple[int, int, int]

    @property
    def grid(self) -> tuple[int, int]:
        return self.kernels.shape[1], self.kernels.shape[2]

    def __len__(self) -> int:
        return self.kernels.shape[0]


def _polar_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys = (2.0 * np.arange(h) + 1.0 - h) / h
    xs = (2.0 * np.arange(w) + 1.0 - w) / w
    x, y = np.meshgrid(xs, ys)
    return np.hypot(x, y), np.arctan2(y, x)


def build_kernel_bank(h: int, w: int, c: int, fh: int, fw: int) -> MomentKernelBank:
    """Kernels for ``c * fh * fw`` (s, k) pairs enumerated row-major on a square order grid."""
    if h < 8 or w < 8:
        raise ValueError(f"image grid must be at least 8x8, got {h}x{w}")
    count = c * fh * fw
    if count < 1:
        raise ValueError("at least one kernel is required")
    side = math.ceil(math.sqrt(count))
    if side > min(h, w) // 4:
        raise ValueError(
            f"{count} kernels need orders up to {side - 1}, above the limit "
            f"{min(h, w) // 4 - 1} supported by a {h}x{w} grid"
        )
    r, theta = _polar_grid(h, w)
    inside = r <= 1.0
    area = (2.0 / h) * (2.0 / w)
    kernels = np.zeros((count, h, w), dtype=np.complex128)
    layout: dict[tuple[int, int], int] = {}
    for idx in range(count):
        s, k = divmod(idx, side)
        radial = np.where(inside, radial_basis(s, np.where(inside, r, 1.0)), 0.0)
        kernels[idx] = radial * np.exp(-1j * k * theta) * area / (2.0 * math.pi)
        layout[(s, k)] = idx
    return MomentKernelBank(kernels, layout, (c, fh, fw))


def project(gray: torch.Tensor, bank_re: torch.Tensor, bank_im: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Real and imaginary moment parts; linear in ``gray``. ``gray`` is (..., H, W)."""
    flat = gray.reshape(*gray.shape[:-2], -1)
    return flat @ bank_re.T, flat @ bank_im.T


def moment_magnitudes(gray: torch.Tensor, bank_re: torch.Tensor, bank_im: torch.Tensor) -> torch.Tensor:
    re, im = project(gray, bank_re, bank_im)
    return torch.sqrt(re * re + im * im + _MAG_EPS)


def normalize_features(magnitudes: torch.Tensor) -> torch.Tensor:
    """Min-max over the last dim; a constant vector maps to 0.5 everywhere."""
    if torch.isnan(magnitudes).any():
        raise ValueError("normalize_features received NaN")
    lo = magnitudes.amin(dim=-1, keepdim=True)
    hi = magnitudes.amax(dim=-1, keepdim=True)
    span = hi - lo
    flat = span == 0
    out = (magnitudes - lo) / torch.where(flat, torch.ones_like(span), span)
    return torch.where(flat, torch.full_like(out, 0.5), out)


class MomentExtractor(nn.Module):
    """Image branch of the key pipeline: RGB image -> (C', H', W') map in [0, 1].

    ``mode="calibrated"`` standardizes each slot's log-magnitude with the
    median and robust spread measured by :meth:`fit` and squashes with a
    sigmoid, so every slot thresholds at its own median. ``mode="minmax"``
    applies :func:`normalize_features` per map and needs no fitting.
    """

    def __init__(self, image_size: int, feature_shape: tuple[int, int, int], mode: str = "calibrated"):
        super().__init__()
        if mode not in ("calibrated", "minmax"):
            raise ValueError(f"unknown normalization mode {mode!r}")
        self.image_size = image_size
        self.feature_shape = tuple(feature_shape)
        self.mode = mode
        bank = build_kernel_bank(image_size, image_size, *self.feature_shape)
        count = len(bank)
        k = bank.kernels.reshape(count, -1)
        self.register_buffer("bank_re", torch.from_numpy(k.real.astype(np.float32)))
        self.register_buffer("bank_im", torch.from_numpy(k.imag.astype(np.float32)))
        self.register_buffer("center", torch.zeros(count))
        self.register_buffer("scale", torch.ones(count))
        self.register_buffer("fitted", torch.zeros((), dtype=torch.bool))

    def magnitudes(self, image: torch.Tensor) -> torch.Tensor:
        gray = to_gray(image).squeeze(-3)
        if tuple(gray.shape[-2:]) != (self.image_size, self.image_size):
            raise ValueError(
                f"image grid {tuple(gray.shape[-2:])} does not match the kernel bank "
                f"({self.image_size}, {self.image_size})"
            )
        return moment_magnitudes(gray, self.bank_re, self.bank_im)

    @torch.no_grad()
    def fit(self, images: torch.Tensor) -> "MomentExtractor":
        """Measure per-slot log-magnitude median and spread over ``images`` (B, 3, H, W)."""
        logm = torch.log(self.magnitudes(images).double() + _LOG_FLOOR)
        q25, q50, q75 = torch.quantile(logm, torch.tensor([0.25, 0.5, 0.75], dtype=logm.dtype), dim=0)
        spread = (q75 - q25) / 1.349
        spread = torch.where(spread > 1e-6, spread, torch.ones_like(spread))
        self.center.copy_(q50.float())
        self.scale.copy_(spread.float())
        self.fitted.fill_(True)
        return self

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        mags = self.magnitudes(image)
        if self.mode == "minmax":
            values = normalize_features(mags)
        else:
            if not bool(self.fitted):
                raise RuntimeError("calibrated moment normalizer used before fit()")
            z = (torch.log(mags + _LOG_FLOOR) - self.center) / self.scale
            values = torch.sigmoid(z)
        return values.reshape(*values.shape[:-1], *self.feature_shape)


def extract_moment_map(image: torch.Tensor, extractor: MomentExtractor) -> torch.Tensor:
    return extractor(image)
