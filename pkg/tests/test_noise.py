import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from zerokey.noise import (
    NoiseConfig,
    NoiseLayer,
    apply_noise_pipeline,
    gaussian,
    homography_from_points,
    image_streams,
    lightness,
    moire,
    moire_pattern,
    perspective,
    warp_homography,
)


def images(n=4, size=32, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, size, size, generator=g, dtype=dtype) * 0.6 + 0.2


class TestConfig:
    def test_defaults(self):
        c = NoiseConfig()
        assert c.perspective_max_offset == 0.1
        assert c.lightness_b_range == (0.5, 0.7)
        assert c.moire_prob == 0.2 and c.gauss_sigma == 0.02

    @pytest.mark.parametrize("kw", [
        dict(moire_prob=1.5),
        dict(gauss_sigma=-0.1),
        dict(lightness_b_range=(0.7, 0.5)),
        dict(moire_freq_range=(10, 5)),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NoiseConfig(**kw)

    def test_toy_preset_is_milder(self):
        toy = NoiseConfig.toy()
        assert toy.perspective_max_offset < NoiseConfig().perspective_max_offset
        assert toy.lightness_b_range[1] < NoiseConfig().lightness_b_range[0]
        assert toy.moire_prob == NoiseConfig().moire_prob

    def test_dict_round_trip(self):
        c = NoiseConfig(moire_gratings=3, rng_seed=9)
        assert NoiseConfig(**c.to_dict()) == c


class TestPerspective:
    def test_zero_offset_is_identity(self):
        x = images()
        cfg = NoiseConfig(perspective_max_offset=0.0)
        assert torch.equal(perspective(x, np.random.default_rng(0), cfg), x)

    def test_identity_homography_warp(self):
        x = images()
        out = warp_homography(x, [np.eye(3)] * 4)
        assert (out - x).abs().max().item() < 1e-6

    def test_homography_recovers_known_matrix(self):
        true = np.array([[1.02, 0.03, -1.5], [-0.01, 0.98, 2.0], [1e-4, -2e-4, 1.0]])
        src = np.array([[0, 0], [32, 0], [32, 32], [0, 32]], dtype=float)
        pts = np.c_[src, np.ones(4)] @ true.T
        dst = pts[:, :2] / pts[:, 2:]
        np.testing.assert_allclose(homography_from_points(src, dst), true, rtol=1e-10, atol=1e-12)

    def test_integer_translation_shifts_pixels(self):
        x = images(1, 16)
        shift = np.array([[1.0, 0, 2], [0, 1.0, 1], [0, 0, 1.0]])
        out = warp_homography(x, [shift])
        torch.testing.assert_close(out[..., 1:, 2:], x[..., :-1, :-2], atol=1e-6, rtol=0)
        assert out[..., 0, :].abs().max() == 0 and out[..., :, :2].abs().max() == 0

    def test_offsets_respect_bound(self):
        # corners of a white image land within max_offset * side of the originals
        x = torch.ones(1, 1, 64, 64, dtype=torch.float64)
        out = perspective(x, np.random.default_rng(3), NoiseConfig(perspective_max_offset=0.05))
        inner = out[..., 4:-4, 4:-4]
        assert inner.min().item() > 0.99


class TestLightness:
    def test_constant_shift_on_unclamped(self):
        x = images(6)
        rng = np.random.default_rng(1)
        cfg = NoiseConfig(lightness_b_range=(0.05, 0.3))
        out = lightness(x, rng, cfg)
        for i in range(6):
            d = out[i] - x[i]
            free = out[i] < 1.0
            assert free.any()
            shift = d[free]
            assert (shift - shift[0]).abs().max().item() < 1e-12
            assert 0.05 <= shift[0].item() <= 0.3
            assert torch.all(out[i][~free] == 1.0)


class TestMoire:
    def test_trigger_rate(self):
        cfg = NoiseConfig(moire_prob=0.2)
        hits = []
        moire(torch.zeros(10_000, 1, 4, 4, dtype=torch.float64), np.random.default_rng(0), cfg, hits)
        assert 0.18 <= np.mean(hits) <= 0.22

    def test_never_and_always(self):
        x = images(8)
        assert torch.equal(moire(x, np.random.default_rng(0), NoiseConfig(moire_prob=0.0)), x)
        hits = []
        moire(x, np.random.default_rng(0), NoiseConfig(moire_prob=1.0), hits)
        assert all(hits)

    def test_pattern_amplitude(self):
        cfg = NoiseConfig(moire_amp=0.05, moire_gratings=2)
        p = moire_pattern(np.random.default_rng(4), 64, 64, cfg)
        assert np.abs(p).max() <= 2 * 0.05 + 1e-12
        assert p.std() > 0.01


class TestGaussian:
    def test_sigma(self):
        cfg = NoiseConfig(gauss_sigma=0.02)
        x = torch.full((4, 3, 64, 64), 0.5, dtype=torch.float64)
        d = gaussian(x, np.random.default_rng(2), cfg) - x
        assert abs(d.std().item() - 0.02) < 0.05 * 0.02
        assert abs(d.mean().item()) < 1e-3

    def test_zero_sigma(self):
        x = images()
        assert torch.equal(gaussian(x, np.random.default_rng(0), NoiseConfig(gauss_sigma=0.0)), x)


class TestPipeline:
    def test_disabled_is_identity(self):
        x = images()
        assert torch.equal(apply_noise_pipeline(x, NoiseConfig.disabled(), np.random.default_rng(0)), x)

    def test_deterministic(self):
        x = images()
        a = apply_noise_pipeline(x, NoiseConfig(), np.random.default_rng(5))
        b = apply_noise_pipeline(x, NoiseConfig(), np.random.default_rng(5))
        assert torch.equal(a, b)

    def test_per_image_streams_ignore_batch_composition(self):
        x = images(4)
        full = apply_noise_pipeline(x, NoiseConfig(moire_prob=0.5), np.random.default_rng(8).spawn(4))
        lone = apply_noise_pipeline(x[2:3], NoiseConfig(moire_prob=0.5), np.random.default_rng(8).spawn(4)[2:3])
        torch.testing.assert_close(full[2:3], lone, rtol=0, atol=1e-12)

    def test_stream_count_checked(self):
        with pytest.raises(ValueError):
            image_streams(np.random.default_rng(0).spawn(3), 4)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_output_in_unit_range(self, seed):
        out = apply_noise_pipeline(images(2, 16), NoiseConfig(moire_prob=1.0), np.random.default_rng(seed))
        assert out.min().item() >= 0.0 and out.max().item() <= 1.0
        assert out.shape == (2, 3, 16, 16)

    def test_layer_uses_own_stream(self):
        layer = NoiseLayer(NoiseConfig(rng_seed=3))
        x = images(2)
        a, b = layer(x), layer(x)
        assert not torch.equal(a, b)
        torch.testing.assert_close(NoiseLayer(NoiseConfig(rng_seed=3))(x), a)

    def test_float32_supported(self):
        out = apply_noise_pipeline(images(2, dtype=torch.float32), NoiseConfig(), np.random.default_rng(0))
        assert out.dtype == torch.float32
