"""Run configuration and its YAML form.

Top-level keys::

    dataset: path to an image directory (null: synthesize a toy corpus)
    out: output directory
    seed: master seed, copied into train.seed
    ablation_seeds: seeds used by ``ablate``
    train: TrainConfig fields, minus sgxor_m / sgxor_n
    sgxor: {m, n}
    noise: NoiseConfig fields
    swap_noise: NoiseConfig fields for the noise_swap row, or null
    eval: EvalConfig fields

Unknown keys are rejected so typos surface immediately.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .evaluation import EvalConfig
from .noise import NoiseConfig
from .sgxor import SGXorParams
from .training import TrainConfig

__all__ = ["RunConfig", "load_config", "save_config"]

_TOP = {"dataset", "out", "seed", "ablation_seeds", "train", "sgxor", "noise", "swap_noise", "eval"}


def _fields_of(cls) -> set[str]:
    return set(cls.__dataclass_fields__)


def _build(cls, section: str, data: dict | None):
    data = dict(data or {})
    unknown = set(data) - _fields_of(cls)
    if unknown:
        raise ValueError(f"unknown keys in '{section}': {sorted(unknown)}")
    return cls(**data)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    dataset: str | None = None
    out: str = "runs"
    seed: int = 0
    ablation_seeds: tuple[int, ...] = (0, 1, 2)
    swap_noise: NoiseConfig | None = None

    def __post_init__(self):
        self.ablation_seeds = tuple(int(s) for s in self.ablation_seeds)
        if not self.ablation_seeds:
            raise ValueError("ablation_seeds must not be empty")
        if self.train.seed != self.seed:
            self.train = replace(self.train, seed=self.seed)

    @property
    def sgxor(self) -> SGXorParams:
        return self.train.sgxor_params

    @classmethod
    def toy(cls, **overrides) -> "RunConfig":
        return cls(train=TrainConfig.toy(), noise=NoiseConfig.toy(), **overrides)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        m, n = train.pop("sgxor_m"), train.pop("sgxor_n")
        train.pop("seed")
        return {
            "dataset": self.dataset,
            "out": self.out,
            "seed": self.seed,
            "ablation_seeds": list(self.ablation_seeds),
            "train": train,
            "sgxor": {"m": m, "n": n},
            "noise": self.noise.to_dict(),
            "swap_noise": None if self.swap_noise is None else self.swap_noise.to_dict(),
            "eval": self.eval.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict | None, base: "RunConfig | None" = None) -> "RunConfig":
        """Build from a parsed mapping; sections absent from ``data`` come from ``base``."""
        data = dict(data or {})
        unknown = set(data) - _TOP
        if unknown:
            raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
        base = base or cls()
        ref = base.to_dict()
        seed = int(data.get("seed", base.seed))
        train = {**ref["train"], **(data.get("train") or {})}
        if "seed" in train:
            raise ValueError("set the seed at top level, not under 'train'")
        sg = {**ref["sgxor"], **(data.get("sgxor") or {})}
        if set(sg) - {"m", "n"}:
            raise ValueError(f"unknown keys in 'sgxor': {sorted(set(sg) - {'m', 'n'})}")
        SGXorParams(float(sg["m"]), float(sg["n"]))
        train.update(sgxor_m=float(sg["m"]), sgxor_n=float(sg["n"]), seed=seed)
        swap = data.get("swap_noise", ref["swap_noise"])
        return cls(
            train=_build(TrainConfig, "train", train),
            noise=_build(NoiseConfig, "noise", {**ref["noise"], **(data.get("noise") or {})}),
            eval=_build(EvalConfig, "eval", {**ref["eval"], **(data.get("eval") or {})}),
            dataset=data.get("dataset", base.dataset),
            out=str(data.get("out", base.out)),
            seed=seed,
            ablation_seeds=tuple(data.get("ablation_seeds", base.ablation_seeds)),
            swap_noise=None if swap is None else _build(NoiseConfig, "swap_noise", swap),
        )


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping at top level")
    return RunConfig.from_dict(data, base)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
