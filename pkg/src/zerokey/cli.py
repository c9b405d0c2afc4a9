"""``zerokey`` command line.

Exit status: 0 on success or a passing verdict, 3 when ``verify`` rejects the
pair, 1 on any error (bad key file, digest mismatch, missing input).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import keyfile
from .codec import binarize_message
from .config import RunConfig, load_config, save_config
from .data import ingest_dataset, load_image, save_image, write_toy_corpus
from .evaluation import AblationHarness, AblationRow, VARIANTS, config_digest, evaluate, write_report
from .noise import apply_noise_pipeline
from .training import load_checkpoint, make_codec, make_restorer, save_checkpoint, train_stage1, train_stage2

log = logging.getLogger("zerokey")

EXIT_REJECTED = 3
DEFAULT_THRESHOLD = 5.0


class CommandError(RuntimeError):
    pass


# message I/O ---------------------------------------------------------------

def parse_message(text: str, length: int) -> np.ndarray:
    """Bits from a hex string (MSB first) or a file holding exactly L '0'/'1' characters."""
    path = Path(text)
    if path.is_file():
        raw = "".join(path.read_text().split())
        if len(raw) != length or set(raw) - {"0", "1"}:
            raise CommandError(f"{path}: expected exactly {length} characters of 0/1, found {len(raw)}")
        return np.array([int(c) for c in raw], dtype=np.uint8)
    digits = text[2:] if text.lower().startswith("0x") else text
    if length % 4:
        raise CommandError(f"L={length} is not a multiple of 4; pass the message as a bit file")
    if len(digits) != length // 4:
        raise CommandError(f"hex message must have {length // 4} digits for L={length}, got {len(digits)}")
    try:
        value = bytes.fromhex(digits if len(digits) % 2 == 0 else "0" + digits)
    except ValueError as exc:
        raise CommandError(f"not a hex string or existing file: {text!r}") from exc
    bits = np.unpackbits(np.frombuffer(value, dtype=np.uint8), bitorder="big")
    return bits[-length:]


def format_message(bits: np.ndarray) -> str:
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size % 4:
        return "".join(str(b) for b in bits)
    pad = (-bits.size) % 8
    packed = np.packbits(np.concatenate([np.zeros(pad, np.uint8), bits]), bitorder="big")
    return packed.tobytes().hex()[(pad // 4):]


# config plumbing -------------------------------------------------------------

def resolve_config(args) -> RunConfig:
    base = RunConfig.toy() if args.toy else RunConfig()
    cfg = load_config(args.config, base) if args.config else base
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg.out = str(args.out)
    if getattr(args, "data", None):
        cfg.dataset = str(args.data)
    return cfg


def _dataset(cfg: RunConfig):
    if cfg.dataset is None:
        corpus = Path(cfg.out) / "toy_corpus"
        if not corpus.is_dir() or not any(corpus.iterdir()):
            log.info("no dataset configured; writing a procedural corpus to %s", corpus)
            write_toy_corpus(corpus, size=cfg.train.image_size, seed=cfg.seed)
        cfg.dataset = str(corpus)
    ds = ingest_dataset(cfg.dataset, cfg.train.image_size)
    if ds.skipped:
        log.warning("skipped %d unreadable files", len(ds.skipped))
    log.info("dataset %s: %d train / %d test", cfg.dataset, len(ds.train), len(ds.test))
    return ds


def _read_cover(path: str, size: int) -> torch.Tensor:
    if not Path(path).is_file():
        raise CommandError(f"image not found: {path}")
    return load_image(path, size).unsqueeze(0)


def _load_ckpt(path: str):
    if not Path(path).is_file():
        raise CommandError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# commands --------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out)
    ds = _dataset(cfg)
    save_config(cfg, out / "config.yaml")
    codec = make_codec(cfg.train)
    t0 = time.perf_counter()
    h1 = train_stage1(codec, ds.train, cfg.train)
    log.info("stage 1: %d steps, final loss %.4f, %.1fs", len(h1.losses), h1.losses[-1] if h1.losses else math.nan,
             time.perf_counter() - t0)
    save_checkpoint(out / "stage1.pt", codec, None, cfg.train, cfg.noise)
    restorer = make_restorer(cfg.train)
    t0 = time.perf_counter()
    h2 = train_stage2(codec, restorer, ds.train, cfg.train, cfg.noise)
    log.info("stage 2: %d steps, final loss %.4f, %.1fs", len(h2.losses), h2.losses[-1] if h2.losses else math.nan,
             time.perf_counter() - t0)
    digest = save_checkpoint(out / "checkpoint.pt", codec, restorer, cfg.train, cfg.noise)
    print(f"checkpoint {out / 'checkpoint.pt'} digest {digest.hex()}")
    return 0


@torch.no_grad()
def cmd_generate_key(args) -> int:
    ck = _load_ckpt(args.checkpoint)
    cover = _read_cover(args.image, ck.train_config.image_size)
    bits = parse_message(args.message, ck.codec.length)
    msg = torch.from_numpy(bits.astype(np.float32)).unsqueeze(0)
    key = ck.codec.encode(cover, msg)[0].round().to(torch.uint8).numpy()
    vk = keyfile.VerificationKey(key, ck.codec.length, ck.digest)
    dest = Path(args.key) if args.key else Path(args.out or ".") / (Path(args.image).stem + ".nimk")
    keyfile.save(vk, dest)
    print(f"key {dest}")
    return 0


@torch.no_grad()
def cmd_verify(args) -> int:
    ck = _load_ckpt(args.checkpoint)
    vk = keyfile.load(args.key)
    vk.check_digest(ck.digest)
    if vk.shape != ck.codec.feature_shape or vk.length != ck.codec.length:
        raise CommandError(f"key shape {vk.shape}/L={vk.length} does not fit this checkpoint")
    ref = _read_cover(args.image, ck.train_config.image_size)
    if args.restore:
        if ck.restorer is None:
            raise CommandError("--restore given but the checkpoint has no restorer")
        ref = ck.restorer(ref)
    key = torch.from_numpy(vk.bits.astype(np.float32)).unsqueeze(0)
    recovered = binarize_message(ck.codec.decode(key, ref))[0].to(torch.uint8).numpy()
    print(f"message {format_message(recovered)}")
    if args.expected is None:
        return 0
    expected = parse_message(args.expected, vk.length)
    err = 100.0 * float(np.mean(recovered != expected))
    verdict = err <= args.threshold
    print(f"BER {err:.2f}%")
    print(f"verdict {'pass' if verdict else 'fail'} (threshold {args.threshold:g}%)")
    return 0 if verdict else EXIT_REJECTED


@torch.no_grad()
def cmd_attack(args) -> int:
    cfg = resolve_config(args)
    size = args.size
    if not Path(args.image).is_file():
        raise CommandError(f"image not found: {args.image}")
    img = load_image(args.image, size).unsqueeze(0)
    noised = apply_noise_pipeline(img, cfg.noise, np.random.default_rng([cfg.seed, cfg.noise.rng_seed]))
    dest = Path(cfg.out) / f"{Path(args.image).stem}_attacked.png"
    save_image(noised[0], dest)
    print(f"attacked {dest}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    ck = _load_ckpt(args.checkpoint)
    cfg.train = ck.train_config
    ds = _dataset(cfg)
    t0 = time.perf_counter()
    clean = evaluate(ck.codec, ds.test, cfg.eval)
    noisy = evaluate(ck.codec, ds.test, cfg.eval, cfg.noise, ck.restorer)
    row = AblationRow(ck.variant, cfg.seed, noisy.ber, noisy.uber, clean.ber, clean.uber,
                      config_digest(ck.train_config, cfg.noise, cfg.eval), time.perf_counter() - t0,
                      {"psnr_noised": noisy.psnr_noised, "psnr_restored": noisy.psnr_restored})
    tsv, jsonl = write_report([row], cfg.out, "eval", cfg.eval.precision)
    print(f"BER {row.ber:.2f}% U-BER {row.uber:.2f}% (clean {row.clean_ber:.2f}% / {row.clean_uber:.2f}%)")
    print(f"report {tsv} {jsonl}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    variants = args.variants or list(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise CommandError(f"unknown variants {bad}; choose from {list(VARIANTS)}")
    if "noise_swap" in variants and cfg.swap_noise is None:
        raise CommandError("noise_swap needs a 'swap_noise' section in the config")
    seeds = [cfg.seed] if args.seed is not None else list(cfg.ablation_seeds)
    ds = _dataset(cfg)
    harness = AblationHarness(ds.train, ds.test, cfg.train, cfg.noise, cfg.eval, cfg.swap_noise)
    rows = [harness.run(v, s) for s in seeds for v in variants]
    tsv, jsonl = write_report(rows, cfg.out, "ablation", cfg.eval.precision)
    print(tsv.read_text(), end="")
    print(f"report {tsv} {jsonl}")
    return 0


def cmd_toy_data(args) -> int:
    paths = write_toy_corpus(args.out or "toy_corpus", args.count, args.size, args.seed or 0)
    print(f"wrote {len(paths)} images to {paths[0].parent}")
    return 0


# parser ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="YAML run config")
    p.add_argument("--seed", type=int, metavar="N", help="override the master seed")
    p.add_argument("--toy", action="store_true", help="start from the 64x64 toy preset")
    p.add_argument("--out", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zerokey", description="Image-bound verification keys.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run stage 1 and stage 2, write checkpoints")
    _common(p)
    p.add_argument("--data", metavar="DIR", help="image directory (overrides config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate-key", help="bind a message to a cover image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="cover image (never modified)")
    p.add_argument("--message", required=True, help="hex string or file of L bits")
    p.add_argument("--key", metavar="PATH", help="key file path (default OUT/<image>.nimk)")
    p.set_defaults(func=cmd_generate_key)

    p = sub.add_parser("verify", help="recover the message from a key and a suspect image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--expected", help="expected message (hex or bit file) for a verdict")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="max BER in percent for a pass")
    p.add_argument("--restore", action="store_true",
                   help="run the checkpoint's restorer first (for screen captures, not pristine covers)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="write a simulated screen-shot of an image")
    _common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--size", type=int, default=None, help="resize to SIZE x SIZE first")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="BER / U-BER of a checkpoint on the held-out split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", metavar="DIR")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score ablation variants")
    _common(p)
    p.add_argument("variants", nargs="*", metavar="VARIANT", help=f"any of {', '.join(VARIANTS)}; default all")
    p.add_argument("--data", metavar="DIR")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("toy-data", help="write the procedural toy corpus")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--count", type=int, default=120)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, metavar="N")
    p.set_defaults(func=cmd_toy_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, keyfile.KeyFormatError, keyfile.DigestMismatch, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
