"""Key encoder / decoder.

``encode`` builds the key ``round(X1) xor round(X2)`` from moment features of
the cover (X1) and processed message features (X2). ``decode`` XORs the key
with the binarized features of a reference image, which recovers
``round(X2)`` when the reference is the cover, and maps that code back to
L message probabilities.
"""
from __future__ import annotations

import hashlib

import torch
from torch import nn

from .moments import MomentExtractor
from .sgxor import DEFAULT_PARAMS, SGXorParams, hard_round, logic_xor

__all__ = [
    "MessageProcessor",
    "ReverseProcessor",
    "KeyCodec",
    "ShortcutCodec",
    "build_codec",
    "binarize_message",
    "weights_digest",
]


class MessageProcessor(nn.Module):
    """Reshape a length-L message to (C', H', W') and refine it with three same-size convs.

    The conv stack is residual on the +/-1 message map, then squashed to [0, 1].
    """

    def __init__(self, feature_shape: tuple[int, int, int], hidden: int = 16):
        super().__init__()
        c = feature_shape[0]
        self.feature_shape = tuple(feature_shape)
        self.layers = nn.Sequential(
            nn.Conv2d(c, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, c, 3, padding=1),
        )

    def forward(self, message: torch.Tensor) -> torch.Tensor:
        length = message.shape[-1]
        c, h, w = self.feature_shape
        if length != c * h * w:
            raise ValueError(f"message length {length} does not match feature map {c}x{h}x{w}")
        x = (2.0 * message - 1.0).reshape(-1, c, h, w)
        return torch.sigmoid(x + self.layers(x))


class ReverseProcessor(nn.Module):
    """(C', H', W') map -> L probabilities.

    A residual same-size conv trunk, then two stride-2 convs when the map
    holds more cells than the message has bits, then a dense layer.
    """

    def __init__(self, in_channels: int, spatial: tuple[int, int], length: int, hidden: int = 16):
        super().__init__()
        h, w = spatial
        self.trunk = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, in_channels, 3, padding=1),
        )
        self.down = nn.Identity()
        if h * w > length and h % 4 == 0 and w % 4 == 0:
            self.down = nn.Sequential(
                nn.Conv2d(in_channels, hidden, 3, stride=2, padding=1),
                nn.ReLU(inplace=True),
                nn.Conv2d(hidden, in_channels, 3, stride=2, padding=1),
            )
            h, w = h // 4, w // 4
        self.dense = nn.Linear(in_channels * h * w, length)

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        x = 2.0 * fmap - 1.0
        x = self.down(x + self.trunk(fmap))
        return torch.sigmoid(self.dense(x.flatten(1)))


def binarize_message(m_pre: torch.Tensor) -> torch.Tensor:
    """Threshold at 0.5; ties go to 1."""
    return (m_pre >= 0.5).to(m_pre.dtype)


class KeyCodec(nn.Module):
    """XOR-bound encoder/decoder pair sharing one moment extractor."""

    variant = "sgxor"

    def __init__(
        self,
        image_size: int,
        feature_shape: tuple[int, int, int],
        length: int,
        estimator: str = "sgxor",
        params: SGXorParams = DEFAULT_PARAMS,
        hidden: int = 16,
        normalization: str = "calibrated",
    ):
        super().__init__()
        c, h, w = feature_shape
        if length != c * h * w:
            raise ValueError(f"L={length} must equal C'*H'*W'={c * h * w}")
        self.image_size = image_size
        self.feature_shape = tuple(feature_shape)
        self.length = length
        self.estimator = estimator
        self.params = params
        self._xor = logic_xor(estimator, params)
        self.moments = MomentExtractor(image_size, self.feature_shape, mode=normalization)
        self.processor = MessageProcessor(self.feature_shape, hidden)
        self.reverse = ReverseProcessor(c, (h, w), length, hidden)

    def _check_image(self, image: torch.Tensor) -> None:
        if image.dim() != 4 or tuple(image.shape[1:]) != (3, self.image_size, self.image_size):
            raise ValueError(
                f"expected images of shape (B, 3, {self.image_size}, {self.image_size}), got {tuple(image.shape)}"
            )

    def image_features(self, image: torch.Tensor) -> torch.Tensor:
        self._check_image(image)
        return self.moments(image)

    def message_features(self, message: torch.Tensor) -> torch.Tensor:
        return self.processor(message)

    def encode(self, image: torch.Tensor, message: torch.Tensor) -> torch.Tensor:
        x1 = self.image_features(image)
        x2 = self.message_features(message)
        return self._xor(x1, x2)

    def decode(self, key: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
        if tuple(key.shape[1:]) != self.feature_shape:
            raise ValueError(f"key shape {tuple(key.shape[1:])} does not match {self.feature_shape}")
        x1_ref = self.image_features(image)
        fused = self._xor(key, x1_ref)
        return self.reverse(fused)

    def forward(self, image: torch.Tensor, message: torch.Tensor, reference: torch.Tensor | None = None):
        key = self.encode(image, message)
        m_pre = self.decode(key, image if reference is None else reference)
        return key, m_pre


class _HardSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return hard_round(x)

    @staticmethod
    def backward(ctx, grad):
        return grad


class ShortcutCodec(KeyCodec):
    """Concatenation + convolution fusion in place of XOR.

    Nothing forces the key to depend on the image, so training is free to
    route the message around the image features entirely.
    """

    variant = "cat_conv"

    def __init__(self, image_size, feature_shape, length, hidden: int = 16, normalization: str = "calibrated"):
        super().__init__(image_size, feature_shape, length, "ste", DEFAULT_PARAMS, hidden, normalization)
        c, h, w = self.feature_shape
        self.fuse = nn.Sequential(
            nn.Conv2d(2 * c, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, c, 3, padding=1),
        )
        self.skip = nn.Conv2d(2 * c, c, 1)
        self.reverse = ReverseProcessor(2 * c, (h, w), length, hidden)

    def encode(self, image, message):
        x1 = self.image_features(image)
        x2 = self.message_features(message)
        z = 2.0 * torch.cat([x1, x2], dim=1) - 1.0
        soft = torch.sigmoid(self.skip(z) + self.fuse(z))
        return _HardSTE.apply(soft)

    def decode(self, key, image):
        if tuple(key.shape[1:]) != self.feature_shape:
            raise ValueError(f"key shape {tuple(key.shape[1:])} does not match {self.feature_shape}")
        x1_ref = self.image_features(image)
        return self.reverse(torch.cat([key, x1_ref], dim=1))


def build_codec(variant: str, image_size: int, feature_shape, length: int, params: SGXorParams = DEFAULT_PARAMS,
                hidden: int = 16, normalization: str = "calibrated") -> KeyCodec:
    if variant in ("sgxor", "ste"):
        return KeyCodec(image_size, feature_shape, length, variant, params, hidden, normalization)
    if variant == "cat_conv":
        return ShortcutCodec(image_size, feature_shape, length, hidden, normalization)
    raise ValueError(f"unknown codec variant {variant!r}")


def weights_digest(module: nn.Module) -> bytes:
    """SHA-256 over every named parameter and buffer (name, dtype, shape, raw bytes)."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        t = tensor.detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes() if t.dtype != torch.bool else t.to(torch.uint8).numpy().tobytes())
    return h.digest()
