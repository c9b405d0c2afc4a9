import pytest
import torch

from zerokey.codec import (
    KeyCodec,
    MessageProcessor,
    ReverseProcessor,
    ShortcutCodec,
    binarize_message,
    build_codec,
    weights_digest,
)
from zerokey.sgxor import hard_round


@pytest.fixture(scope="module")
def covers(toy_set):
    return toy_set.train[:12]


def fitted(codec, covers):
    codec.moments.fit(covers)
    return codec


def torch_messages(n, length=64, seed=0):
    return torch.randint(0, 2, (n, length), generator=torch.Generator().manual_seed(seed)).float()


class TestProcessors:
    def test_message_processor_shape(self):
        out = MessageProcessor((1, 8, 8))(torch_messages(3))
        assert out.shape == (3, 1, 8, 8) and out.min() >= 0 and out.max() <= 1

    def test_message_length_checked(self):
        with pytest.raises(ValueError):
            MessageProcessor((1, 8, 8))(torch.zeros(2, 63))

    def test_untrained_processor_keeps_message_bits(self):
        # residual path: weights at zero reduce to sigmoid(2M - 1)
        mp = MessageProcessor((1, 8, 8))
        for p in mp.parameters():
            torch.nn.init.zeros_(p)
        msg = torch_messages(2)
        assert torch.equal(hard_round(mp(msg)).reshape(2, -1), msg)

    def test_reverse_shapes(self):
        assert ReverseProcessor(1, (8, 8), 64)(torch.rand(2, 1, 8, 8)).shape == (2, 64)
        rp = ReverseProcessor(1, (32, 32), 16)
        assert not isinstance(rp.down, torch.nn.Identity)
        assert rp(torch.rand(2, 1, 32, 32)).shape == (2, 16)

    def test_binarize_tie(self):
        assert binarize_message(torch.tensor([0.49, 0.5, 0.51])).tolist() == [0.0, 1.0, 1.0]


class TestKeyCodec:
    def test_length_must_fill_map(self):
        with pytest.raises(ValueError):
            KeyCodec(64, (1, 8, 8), 32)

    def test_key_is_xor_of_rounded_features(self, covers):
        codec = fitted(KeyCodec(64, (1, 8, 8), 64), covers)
        msg = torch_messages(len(covers))
        key = codec.encode(covers, msg)
        x1 = hard_round(codec.image_features(covers))
        x2 = hard_round(codec.message_features(msg))
        assert torch.equal(key, (x1 != x2).float())

    def test_decoder_sees_message_code_on_true_cover(self, covers):
        codec = fitted(KeyCodec(64, (1, 8, 8), 64), covers)
        msg = torch_messages(len(covers), seed=1)
        key = codec.encode(covers, msg)
        fused = codec._xor(key, codec.image_features(covers))
        assert torch.equal(fused, hard_round(codec.message_features(msg)))

    def test_forward_with_reference(self, covers):
        codec = fitted(KeyCodec(64, (1, 8, 8), 64), covers)
        msg = torch_messages(4)
        key, m_pre = codec(covers[:4], msg, covers[4:8])
        assert key.shape == (4, 1, 8, 8) and m_pre.shape == (4, 64)

    def test_image_shape_checked(self, covers):
        codec = fitted(KeyCodec(64, (1, 8, 8), 64), covers)
        with pytest.raises(ValueError):
            codec.encode(torch.rand(1, 3, 32, 32), torch_messages(1))
        with pytest.raises(ValueError):
            codec.decode(torch.zeros(1, 1, 4, 4), covers[:1])

    @pytest.mark.parametrize("estimator", ["sgxor", "ste"])
    def test_gradients_reach_every_trainable_module(self, covers, estimator):
        codec = fitted(KeyCodec(64, (1, 8, 8), 64, estimator), covers)
        msg = torch_messages(len(covers))
        _, m_pre = codec(covers, msg)
        torch.nn.functional.mse_loss(m_pre, msg).backward()
        for name in ("processor", "reverse"):
            grads = [p.grad for p in getattr(codec, name).parameters()]
            assert all(g is not None for g in grads)
            assert sum(g.abs().sum().item() for g in grads) > 0

    def test_build_codec(self, covers):
        assert build_codec("ste", 64, (1, 8, 8), 64).estimator == "ste"
        assert build_codec("cat_conv", 64, (1, 8, 8), 64).variant == "cat_conv"
        with pytest.raises(ValueError):
            build_codec("nope", 64, (1, 8, 8), 64)


class TestShortcut:
    def test_key_is_binary_and_trainable(self, covers):
        codec = fitted(ShortcutCodec(64, (1, 8, 8), 64), covers)
        msg = torch_messages(len(covers))
        key, m_pre = codec(covers, msg)
        assert set(key.unique().tolist()) <= {0.0, 1.0}
        torch.nn.functional.mse_loss(m_pre, msg).backward()
        assert codec.fuse[0].weight.grad.abs().sum() > 0
        assert codec.skip.weight.grad.abs().sum() > 0


class TestDigest:
    def test_stable_and_sensitive(self):
        torch.manual_seed(0)
        a = KeyCodec(64, (1, 8, 8), 64)
        torch.manual_seed(0)
        b = KeyCodec(64, (1, 8, 8), 64)
        assert weights_digest(a) == weights_digest(b) and len(weights_digest(a)) == 32
        with torch.no_grad():
            b.reverse.dense.bias[0] += 1e-6
        assert weights_digest(a) != weights_digest(b)

    def test_buffers_count(self, covers):
        torch.manual_seed(0)
        a = KeyCodec(64, (1, 8, 8), 64)
        before = weights_digest(a)
        a.moments.fit(covers)
        assert weights_digest(a) != before
