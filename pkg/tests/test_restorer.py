import math

import numpy as np
import pytest
import torch

from zerokey.restorer import LossWeights, Restorer, ms_ssim, psnr, ssim, stage2_loss


def loop_ssim_at(a: np.ndarray, b: np.ndarray, y: int, x: int, size=11, sigma=1.5) -> float:
    """SSIM at one pixel with a Gaussian window truncated to the image and renormalized."""
    half = size // 2
    h, w = a.shape
    wsum = ma = mb = 0.0
    terms = []
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                wt = math.exp(-(dy * dy + dx * dx) / (2 * sigma * sigma))
                terms.append((wt, a[yy, xx], b[yy, xx]))
                wsum += wt
    ma = sum(t * p for t, p, _ in terms) / wsum
    mb = sum(t * q for t, _, q in terms) / wsum
    va = sum(t * p * p for t, p, _ in terms) / wsum - ma * ma
    vb = sum(t * q * q for t, _, q in terms) / wsum - mb * mb
    cv = sum(t * p * q for t, p, q in terms) / wsum - ma * mb
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    return ((2 * ma * mb + c1) * (2 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))


class TestRestorer:
    def test_identity_at_init(self):
        x = torch.rand(2, 3, 32, 32)
        assert torch.equal(Restorer()(x), x)

    def test_shape_and_range(self):
        r = Restorer(width=8)
        torch.nn.init.normal_(r.head.weight)
        out = r(torch.rand(1, 3, 64, 48))
        assert out.shape == (1, 3, 64, 48)
        assert out.min() >= 0 and out.max() <= 1

    @pytest.mark.parametrize("shape", [(1, 3, 30, 32), (1, 3, 8, 8)])
    def test_rejects_bad_sizes(self, shape):
        with pytest.raises(ValueError):
            Restorer()(torch.rand(shape))


class TestSSIM:
    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.random((20, 24))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        ta, tb = torch.from_numpy(a), torch.from_numpy(b)
        want = np.mean([[loop_ssim_at(a, b, y, x) for x in range(24)] for y in range(20)])
        assert ssim(ta, tb).item() == pytest.approx(want, rel=1e-9)

    def test_identical_is_one(self):
        x = torch.rand(2, 3, 32, 32, dtype=torch.float64)
        assert ssim(x, x).item() == pytest.approx(1.0, abs=1e-12)
        assert ms_ssim(x, x).item() == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_and_bounded(self):
        g = torch.Generator().manual_seed(1)
        a = torch.rand(1, 3, 32, 32, generator=g, dtype=torch.float64)
        b = torch.rand(1, 3, 32, 32, generator=g, dtype=torch.float64)
        assert ssim(a, b).item() == pytest.approx(ssim(b, a).item(), abs=1e-12)
        assert ssim(a, b).item() < 0.2

    def test_monotone_in_noise(self):
        g = torch.Generator().manual_seed(2)
        a = torch.rand(1, 1, 32, 32, generator=g, dtype=torch.float64)
        e = torch.randn(1, 1, 32, 32, generator=g, dtype=torch.float64)
        vals = [ssim(a, a + s * e).item() for s in (0.01, 0.05, 0.2)]
        assert vals[0] > vals[1] > vals[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(torch.zeros(8, 8), torch.zeros(8, 9))


class TestLoss:
    def test_zero_at_optimum_with_vanishing_gradient(self):
        img = torch.rand(2, 3, 32, 32, dtype=torch.float64)
        x = img.clone().requires_grad_(True)
        loss = stage2_loss(x, img)
        assert loss.item() == 0.0
        loss.backward()
        assert x.grad.norm().item() < 1e-6

    def test_weights(self):
        a, b = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
        pix_only = stage2_loss(a, b, LossWeights(10.0, 0.0))
        assert pix_only.item() == pytest.approx(10 * torch.mean((a - b) ** 2).item(), rel=1e-6)
        str_only = stage2_loss(a, b, LossWeights(0.0, 1.0))
        assert str_only.item() == pytest.approx(1 - ssim(a, b).item(), rel=1e-6)

    def test_multiscale_flag(self):
        a, b = torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64)
        assert stage2_loss(a, b, multiscale=True).item() != stage2_loss(a, b).item()

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0)


class TestPSNR:
    def test_identical_is_inf(self):
        x = torch.rand(3, 8, 8)
        assert psnr(x, x) == float("inf")

    def test_known_value(self):
        a = torch.zeros(1, 3, 8, 8)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-5)
