"""Metrics and the toy-scale ablation harness.

U-BER pairs each key with K other test images that went through the same
noise and restoration as the true cover. About 50% means the key is bound to
its image; near 0% means the key carries the message on its own.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .codec import KeyCodec, binarize_message
from .noise import NoiseConfig, apply_noise_pipeline
from .restorer import Restorer, psnr, ssim
from .training import TrainConfig, make_codec, make_restorer, train_joint, train_stage1, train_stage2

__all__ = [
    "EvalConfig",
    "ber",
    "uber",
    "psnr",
    "ssim",
    "EvalResult",
    "evaluate",
    "AblationRow",
    "AblationHarness",
    "run_ablation",
    "VARIANTS",
    "write_report",
    "config_digest",
]

log = logging.getLogger(__name__)

VARIANTS = ("sgxor", "ste", "cat_conv", "s1_only", "joint", "two_stage", "noise_swap")


@dataclass
class EvalConfig:
    K: int = 10
    noise_seeds: tuple[int, ...] = (0,)
    message_seed: int = 1234
    precision: int = 2

    def __post_init__(self):
        self.noise_seeds = tuple(int(s) for s in self.noise_seeds)
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not self.noise_seeds:
            raise ValueError("at least one noise seed is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise_seeds"] = list(self.noise_seeds)
        return d


def ber(pred: torch.Tensor, truth: torch.Tensor) -> float:
    """Bit error rate in percent over all elements."""
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {tuple(pred.shape)} vs {tuple(truth.shape)}")
    if pred.numel() == 0:
        raise ValueError("empty message")
    return 100.0 * (pred.round() != truth.round()).double().mean().item()


def uber(
    decode: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    key: torch.Tensor,
    message: torch.Tensor,
    refs: torch.Tensor,
    process: Callable[[torch.Tensor], torch.Tensor] | None = None,
    cfg: EvalConfig = EvalConfig(),
) -> float:
    """Mean BER (percent) of one key decoded against the first K unpaired references.

    ``key`` is (C', H', W'), ``message`` (L,), ``refs`` (N, 3, H, W). ``process``
    applies the noise + restoration chain; omitted for the clean channel.
    """
    if len(refs) < cfg.K:
        raise ValueError(f"U-BER needs at least K={cfg.K} references, got {len(refs)}")
    refs = refs[: cfg.K]
    if process is not None:
        refs = process(refs)
    keys = key.unsqueeze(0).expand(cfg.K, *key.shape)
    pred = binarize_message(decode(keys, refs))
    errs = (pred != message.unsqueeze(0)).double().mean(dim=1)
    return 100.0 * errs.mean().item()


@dataclass
class EvalResult:
    ber: float
    uber: float
    psnr_noised: float | None = None
    psnr_restored: float | None = None


def _other_indices(n: int, i: int, k: int, rng: np.random.Generator) -> np.ndarray:
    others = np.array([j for j in range(n) if j != i])
    return rng.choice(others, size=k, replace=False)


@torch.no_grad()
def evaluate(
    codec: KeyCodec,
    images: torch.Tensor,
    eval_cfg: EvalConfig = EvalConfig(),
    noise_cfg: NoiseConfig | None = None,
    restorer: Restorer | None = None,
) -> EvalResult:
    """BER and U-BER over a held-out set.

    With ``noise_cfg`` every image is noised (and restored when ``restorer`` is
    given) once per noise seed; covers and references share that processed set.
    """
    n = len(images)
    if n < eval_cfg.K + 1:
        raise ValueError(f"need at least K+1={eval_cfg.K + 1} images, got {n}")
    codec.eval()
    gen = torch.Generator().manual_seed(eval_cfg.message_seed)
    messages = torch.randint(0, 2, (n, codec.length), generator=gen).float()
    keys = codec.encode(images, messages)
    bers, ubers, p_no, p_re = [], [], [], []
    for seed in eval_cfg.noise_seeds if noise_cfg is not None else (None,):
        if noise_cfg is None:
            processed = images
        else:
            noised = apply_noise_pipeline(images, noise_cfg, np.random.default_rng([seed, 7]))
            p_no.append(psnr(noised, images))
            processed = noised if restorer is None else restorer(noised)
            if restorer is not None:
                p_re.append(psnr(processed, images))
        pred = binarize_message(codec.decode(keys, processed))
        bers.append(ber(pred, messages))
        rng = np.random.default_rng([eval_cfg.message_seed, 0 if seed is None else seed])
        for i in range(n):
            idx = _other_indices(n, i, eval_cfg.K, rng)
            ubers.append(uber(codec.decode, keys[i], messages[i], processed[idx], None, eval_cfg))
    mean = lambda v: float(np.mean(v)) if v else None  # noqa: E731
    return EvalResult(mean(bers), mean(ubers), mean(p_no), mean(p_re))


def config_digest(*configs) -> str:
    blob = json.dumps([c.to_dict() if hasattr(c, "to_dict") else c for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class AblationRow:
    name: str
    seed: int
    ber: float
    uber: float
    clean_ber: float
    clean_uber: float
    config_digest: str
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class AblationHarness:
    """Trains and evaluates ablation variants, sharing work between rows.

    Stage-1 codecs are cached per (estimator, seed), so ``s1_only`` and
    ``two_stage`` reuse the ``sgxor`` run, and the stage-2 restorer, which
    never sees the codec's gradients, is cached per (seed, noise config).
    """

    def __init__(self, train_images: torch.Tensor, test_images: torch.Tensor, train_cfg: TrainConfig,
                 noise_cfg: NoiseConfig = NoiseConfig(), eval_cfg: EvalConfig = EvalConfig(),
                 swap_noise_cfg: NoiseConfig | None = None):
        self.train_images = train_images
        self.test_images = test_images
        self.train_cfg = train_cfg
        self.noise_cfg = noise_cfg
        self.eval_cfg = eval_cfg
        self.swap_noise_cfg = swap_noise_cfg
        self._codecs: dict[tuple[str, int], KeyCodec] = {}
        self._restorers: dict[tuple[int, str], Restorer] = {}

    def _cfg(self, seed: int, **kw) -> TrainConfig:
        d = self.train_cfg.to_dict()
        d.update(seed=seed, **kw)
        return TrainConfig.from_dict(d)

    def stage1(self, variant: str, seed: int) -> KeyCodec:
        key = (variant, seed)
        if key not in self._codecs:
            cfg = self._cfg(seed, estimator="ste" if variant == "ste" else "sgxor")
            codec = make_codec(cfg, variant)
            train_stage1(codec, self.train_images, cfg)
            self._codecs[key] = codec
        return self._codecs[key]

    def restorer(self, codec: KeyCodec, seed: int, noise_cfg: NoiseConfig) -> Restorer:
        key = (seed, config_digest(noise_cfg))
        if key not in self._restorers:
            cfg = self._cfg(seed)
            restorer = make_restorer(cfg)
            train_stage2(codec, restorer, self.train_images, cfg, noise_cfg)
            self._restorers[key] = restorer
        return self._restorers[key]

    def run(self, variant: str, seed: int = 0) -> AblationRow:
        if variant not in VARIANTS:
            raise ValueError(f"unknown ablation variant {variant!r}; expected one of {VARIANTS}")
        if variant == "noise_swap" and self.swap_noise_cfg is None:
            raise ValueError("noise_swap needs an alternative NoiseConfig")
        t0 = time.perf_counter()
        train_noise = self.noise_cfg
        if variant == "joint":
            cfg = self._cfg(seed)
            codec = make_codec(cfg)
            restorer = make_restorer(cfg)
            train_joint(codec, restorer, self.train_images, cfg, self.noise_cfg)
        else:
            codec_variant = {"ste": "ste", "cat_conv": "cat_conv"}.get(variant, "sgxor")
            codec = self.stage1(codec_variant, seed)
            if variant == "s1_only":
                restorer = None
            else:
                if variant == "noise_swap":
                    train_noise = self.swap_noise_cfg
                restorer = self.restorer(codec, seed, train_noise)
        clean = evaluate(codec, self.test_images, self.eval_cfg)
        noisy = evaluate(codec, self.test_images, self.eval_cfg, self.noise_cfg, restorer)
        digest = config_digest(self._cfg(seed), train_noise, self.noise_cfg, self.eval_cfg)
        row = AblationRow(variant, seed, noisy.ber, noisy.uber, clean.ber, clean.uber, digest,
                          time.perf_counter() - t0,
                          {"psnr_noised": noisy.psnr_noised, "psnr_restored": noisy.psnr_restored})
        log.info("%s seed=%d BER=%.2f U-BER=%.2f clean BER=%.2f U-BER=%.2f", variant, seed,
                 row.ber, row.uber, row.clean_ber, row.clean_uber)
        return row


def run_ablation(variant: str, train_images, test_images, train_cfg: TrainConfig,
                 noise_cfg: NoiseConfig = NoiseConfig(), eval_cfg: EvalConfig = EvalConfig(), seed: int = 0,
                 swap_noise_cfg: NoiseConfig | None = None) -> AblationRow:
    harness = AblationHarness(train_images, test_images, train_cfg, noise_cfg, eval_cfg, swap_noise_cfg)
    return harness.run(variant, seed)


def format_table(rows: Sequence[AblationRow], precision: int = 2) -> str:
    head = ["variant", "seed", "BER(%)", "U-BER(%)", "clean BER(%)", "clean U-BER(%)"]
    lines = ["\t".join(head)]
    for r in rows:
        vals = [r.ber, r.uber, r.clean_ber, r.clean_uber]
        lines.append("\t".join([r.name, str(r.seed)] + [f"{v:.{precision}f}" for v in vals]))
    return "\n".join(lines)


def write_report(rows: Sequence[AblationRow], out_dir: str | Path, stem: str = "results", precision: int = 2):
    """Write ``<stem>.tsv`` (table) and ``<stem>.jsonl`` (one record per row)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.tsv").write_text(format_table(rows, precision) + "\n")
    with open(out / f"{stem}.jsonl", "w") as fh:
        for r in rows:
            rec = {"name": r.name, "BER": round(r.ber, precision), "U-BER": round(r.uber, precision),
                   "clean_BER": round(r.clean_ber, precision), "clean_U-BER": round(r.clean_uber, precision),
                   "seed": r.seed, "config_digest": r.config_digest}
            fh.write(json.dumps(rec) + "\n")
    return out / f"{stem}.tsv", out / f"{stem}.jsonl"
