"""Sigmoid-gated XOR estimator.

The forward pass is the exact hard operation ``round(x1) xor round(x2)``.
The backward pass differentiates the smooth surrogate
``f(p1, p2) = p1 + p2 - 2 p1 p2`` with ``p = sigmoid(m (x + n))``.
A straight-through variant is kept for the gradient-estimator ablation.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = [
    "SGXorParams",
    "soft_binarize",
    "hard_round",
    "xor_proxy",
    "sgxor_forward",
    "sgxor_backward",
    "ste_backward",
    "sgxor",
    "ste_xor",
    "logic_xor",
]


@dataclass(frozen=True)
class SGXorParams:
    m: float = 10.0
    n: float = -0.5

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"steepness m must be positive, got {self.m}")


DEFAULT_PARAMS = SGXorParams()


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def soft_binarize(x: torch.Tensor, params: SGXorParams = DEFAULT_PARAMS) -> torch.Tensor:
    """Parameterized sigmoid ``1 / (1 + exp(-m (x + n)))``."""
    if not torch.isfinite(x).all():
        raise ValueError("soft_binarize received non-finite values")
    return torch.sigmoid(params.m * (x + params.n))


def hard_round(x: torch.Tensor) -> torch.Tensor:
    # half-up: exactly 0.5 maps to 1
    return (x >= 0.5).to(x.dtype)


def xor_proxy(p1: torch.Tensor, p2: torch.Tensor) -> torch.Tensor:
    _check_pair(p1, p2)
    return p1 + p2 - 2.0 * p1 * p2


def sgxor_forward(x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
    """Binary key ``round(x1) xor round(x2)`` in the dtype of ``x1``."""
    _check_pair(x1, x2)
    return torch.logical_xor(x1 >= 0.5, x2 >= 0.5).to(x1.dtype)


def sgxor_backward(
    grad_w: torch.Tensor,
    x1: torch.Tensor,
    x2: torch.Tensor,
    params: SGXorParams = DEFAULT_PARAMS,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Logic gradient times sigmoid gate, evaluated at the saved inputs."""
    _check_pair(x1, x2)
    _check_pair(grad_w, x1)
    p1 = soft_binarize(x1, params)
    p2 = soft_binarize(x2, params)
    gate1 = params.m * p1 * (1.0 - p1)
    gate2 = params.m * p2 * (1.0 - p2)
    grad_x1 = grad_w * (1.0 - 2.0 * p2) * gate1
    grad_x2 = grad_w * (1.0 - 2.0 * p1) * gate2
    return grad_x1, grad_x2


def ste_backward(grad_w: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return grad_w, grad_w


class _SGXor(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x1, x2, m, n):
        ctx.save_for_backward(x1, x2)
        ctx.params = SGXorParams(m, n)
        return sgxor_forward(x1, x2)

    @staticmethod
    def backward(ctx, grad_w):
        x1, x2 = ctx.saved_tensors
        g1, g2 = sgxor_backward(grad_w, x1, x2, ctx.params)
        return g1, g2, None, None


class _STEXor(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x1, x2):
        return sgxor_forward(x1, x2)

    @staticmethod
    def backward(ctx, grad_w):
        return ste_backward(grad_w)


def sgxor(x1: torch.Tensor, x2: torch.Tensor, params: SGXorParams = DEFAULT_PARAMS) -> torch.Tensor:
    """Autograd-aware SG-XOR: hard forward, surrogate backward."""
    return _SGXor.apply(x1, x2, params.m, params.n)


def ste_xor(x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
    """Autograd-aware XOR with identity (straight-through) gradients."""
    return _STEXor.apply(x1, x2)


def logic_xor(kind: str, params: SGXorParams = DEFAULT_PARAMS):
    """Return a binary XOR callable for ``kind`` in {"sgxor", "ste"}."""
    if kind == "sgxor":
        return lambda a, b: sgxor(a, b, params)
    if kind == "ste":
        return ste_xor
    raise ValueError(f"unknown gradient estimator {kind!r}")
