"""Non-intrusive image verification keys.

A key is ``round(moments(cover)) xor round(process(message))``; the cover is
never modified. Decoding needs both the key and an image whose moment bits
match the cover's, which a learned restorer helps to recover after capture.
"""

from .codec import KeyCodec, ShortcutCodec, build_codec, weights_digest
from .config import RunConfig, load_config, save_config
from .evaluation import EvalConfig, ber, evaluate, uber
from .keyfile import VerificationKey
from .noise import NoiseConfig, apply_noise_pipeline
from .restorer import Restorer, psnr, ssim
from .sgxor import SGXorParams, sgxor, ste_xor
from .training import TrainConfig, load_checkpoint, save_checkpoint, train_joint, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "KeyCodec", "ShortcutCodec", "build_codec", "weights_digest",
    "RunConfig", "load_config", "save_config",
    "EvalConfig", "ber", "evaluate", "uber",
    "VerificationKey",
    "NoiseConfig", "apply_noise_pipeline",
    "Restorer", "psnr", "ssim",
    "SGXorParams", "sgxor", "ste_xor",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train_joint", "train_stage1", "train_stage2",
]
