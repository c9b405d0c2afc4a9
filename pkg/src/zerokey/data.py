"""Dataset ingestion and a procedural toy corpus."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

__all__ = ["ImageSet", "load_image", "save_image", "ingest_dataset", "synth_image", "write_toy_corpus"]

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff", ".ppm", ".pgm", ".webp", ".jpg", ".jpeg"}


@dataclass
class ImageSet:
    train: torch.Tensor  # (N, 3, S, S) float32 in [0, 1]
    test: torch.Tensor
    train_names: list[str]
    test_names: list[str]
    skipped: list[str]


def load_image(path: str | Path, size: int | None = None) -> torch.Tensor:
    """Read an image file as a (3, H, W) float tensor, optionally resized to size x size."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def save_image(image: torch.Tensor, path: str | Path) -> None:
    arr = image.detach().clamp(0, 1).mul(255).round().to(torch.uint8).permute(1, 2, 0).cpu().numpy()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _name_hash(name: str) -> str:
    return hashlib.sha256(name.encode()).hexdigest()


def ingest_dataset(path: str | Path, size: int, train_fraction: float = 100 / 120) -> ImageSet:
    """Load every readable image under ``path`` and split train/test by filename hash.

    Files are ranked by the SHA-256 of their name; the first
    ``round(train_fraction * N)`` go to train, so the split is stable across runs.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    images, names, skipped = [], [], []
    for file in sorted(p for p in root.iterdir() if p.is_file()):
        if file.suffix.lower() not in IMAGE_SUFFIXES:
            skipped.append(file.name)
            continue
        try:
            images.append(load_image(file, size))
            names.append(file.name)
        except (UnidentifiedImageError, OSError) as exc:
            log.warning("skipping unreadable image %s: %s", file.name, exc)
            skipped.append(file.name)
    if skipped:
        log.warning("skipped %d non-image or unreadable files", len(skipped))
    if not images:
        raise ValueError(f"no readable images in {root}")
    order = sorted(range(len(names)), key=lambda i: _name_hash(names[i]))
    n_train = int(round(train_fraction * len(names)))
    if len(names) > 1:
        n_train = min(max(n_train, 1), len(names) - 1)
    tr, te = order[:n_train], order[n_train:]
    stack = lambda idx: torch.stack([images[i] for i in idx]) if idx else torch.empty(0, 3, size, size)  # noqa: E731
    return ImageSet(stack(tr), stack(te), [names[i] for i in tr], [names[i] for i in te], skipped)


def _pink_field(rng: np.random.Generator, size: int) -> np.ndarray:
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.sqrt(fx ** 2 + fy ** 2)
    radius[0, 0] = 1.0
    spectrum = (rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))) / radius ** rng.uniform(1.8, 2.8)
    spectrum[0, 0] = 0.0
    field = np.real(np.fft.ifft2(spectrum))
    return (field - field.mean()) / (field.std() + 1e-12)


def synth_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """A natural-looking RGB image: correlated 1/f colour texture plus a few flat shapes."""
    base = np.stack([_pink_field(rng, size) for _ in range(3)])
    mix = 0.7 * np.eye(3) + 0.3 * rng.normal(size=(3, 3))
    img = np.einsum("ij,jhw->ihw", mix, base)
    img = rng.uniform(0.3, 0.7) + rng.uniform(0.1, 0.25) * img
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(1, 5)):
        colour = rng.uniform(0.0, 1.0, size=3)[:, None]
        if rng.random() < 0.5:
            cx, cy = rng.uniform(0, size, 2)
            rx, ry = rng.uniform(size / 16, size / 3, 2)
            mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        else:
            x0, y0 = rng.integers(0, size - 4, 2)
            x1, y1 = x0 + rng.integers(4, size // 2), y0 + rng.integers(4, size // 2)
            mask = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
        alpha = rng.uniform(0.5, 0.9)
        img[:, mask] = (1 - alpha) * img[:, mask] + alpha * colour
    return np.clip(img, 0.0, 1.0)


def write_toy_corpus(directory: str | Path, count: int = 120, size: int = 64, seed: int = 0) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        arr = synth_image(rng, size)
        p = out / f"toy_{i:04d}.png"
        Image.fromarray((arr.transpose(1, 2, 0) * 255).round().astype(np.uint8)).save(p)
        paths.append(p)
    return paths
