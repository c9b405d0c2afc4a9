"""Image restorer and its structural-fidelity loss."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

__all__ = ["Restorer", "LossWeights", "ssim", "ms_ssim", "stage2_loss", "psnr"]

C1 = 0.01 ** 2
C2 = 0.03 ** 2
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.LeakyReLU(0.1, inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.LeakyReLU(0.1, inplace=True),
    )


class Restorer(nn.Module):
    """Three-level encoder-decoder with skip connections, predicting a residual.

    The last convolution starts at zero, so an untrained restorer returns its
    input unchanged.
    """

    def __init__(self, channels: int = 3, width: int = 16, min_size: int = 16, max_size: int = 4096):
        super().__init__()
        self.min_size, self.max_size = min_size, max_size
        w1, w2, w3 = width, 2 * width, 4 * width
        self.enc1 = _block(channels, w1)
        self.enc2 = _block(w1, w2)
        self.enc3 = _block(w2, w3)
        self.up2 = nn.ConvTranspose2d(w3, w2, 2, stride=2)
        self.dec2 = _block(2 * w2, w2)
        self.up1 = nn.ConvTranspose2d(w2, w1, 2, stride=2)
        self.dec1 = _block(2 * w1, w1)
        self.head = nn.Conv2d(w1, channels, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 4 or w % 4 or not (self.min_size <= min(h, w) and max(h, w) <= self.max_size):
            raise ValueError(f"restorer needs sides divisible by 4 within [{self.min_size}, {self.max_size}], got {h}x{w}")
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        e3 = self.enc3(F.avg_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([self.up2(e3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return torch.clamp(x + self.head(d1), 0.0, 1.0)


@dataclass(frozen=True)
class LossWeights:
    lambda_pix: float = 10.0
    lambda_str: float = 1.0

    def __post_init__(self):
        if self.lambda_pix < 0 or self.lambda_str < 0:
            raise ValueError("loss weights must be nonnegative")


def _gauss_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter(x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    # separable Gaussian, zero padded; callers renormalize by the filtered ones-map
    c = x.shape[1]
    pad = g.numel() // 2
    kx = g.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = g.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    x = F.conv2d(F.pad(x, (pad, pad, 0, 0)), kx, groups=c)
    return F.conv2d(F.pad(x, (0, 0, pad, pad)), ky, groups=c)


def _ssim_maps(a: torch.Tensor, b: torch.Tensor, window: int, sigma: float):
    g = _gauss_window(window, sigma, a.dtype, a.device)
    ones = torch.ones_like(a[:, :1])
    norm = _filter(ones, g)
    mean = lambda t: _filter(t, g) / norm  # noqa: E731
    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a ** 2
    var_b = mean(b * b) - mu_b ** 2
    cov = mean(a * b) - mu_a * mu_b
    cs = (2 * cov + C2) / (var_a + var_b + C2)
    lum = (2 * mu_a * mu_b + C1) / (mu_a ** 2 + mu_b ** 2 + C1)
    return lum * cs, cs


def _as_batch(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 2:
        a, b = a[None, None], b[None, None]
    elif a.dim() == 3:
        a, b = a[None], b[None]
    return a, b


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Single-scale SSIM averaged over pixels, channels and batch.

    Near the border the Gaussian window is truncated to the image and
    renormalized, so small images are handled without padding bias.
    """
    a, b = _as_batch(a, b)
    s, _ = _ssim_maps(a, b, window, sigma)
    return s.mean()


def ms_ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    a, b = _as_batch(a, b)
    levels = 1
    while levels < len(MS_WEIGHTS) and min(a.shape[-2:]) >> levels >= 4:
        levels += 1
    weights = torch.tensor(MS_WEIGHTS[:levels], dtype=a.dtype, device=a.device)
    weights = weights / weights.sum()
    out = torch.ones((), dtype=a.dtype, device=a.device)
    for i in range(levels):
        s, cs = _ssim_maps(a, b, window, sigma)
        term = s.mean() if i == levels - 1 else cs.mean()
        out = out * torch.relu(term) ** weights[i]
        if i < levels - 1:
            a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
    return out


def stage2_loss(restored: torch.Tensor, cover: torch.Tensor, w: LossWeights = LossWeights(), multiscale: bool = False):
    """``lambda_pix * MSE + lambda_str * (1 - SSIM)``."""
    if restored.shape != cover.shape:
        raise ValueError(f"shape mismatch: {tuple(restored.shape)} vs {tuple(cover.shape)}")
    structural = ms_ssim(restored, cover) if multiscale else ssim(restored, cover)
    return w.lambda_pix * F.mse_loss(restored, cover) + w.lambda_str * (1.0 - structural)


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """PSNR in dB for unit dynamic range; ``inf`` for identical inputs."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(torch.mean((a.double() - b.double()) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * torch.log10(torch.tensor(1.0 / mse, dtype=torch.float64)).item()
