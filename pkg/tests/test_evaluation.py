import json

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from zerokey.evaluation import (
    AblationHarness,
    AblationRow,
    EvalConfig,
    ber,
    config_digest,
    evaluate,
    format_table,
    uber,
    write_report,
)
from zerokey.noise import NoiseConfig
from zerokey.training import TrainConfig, make_codec

bits = st.lists(st.integers(0, 1), min_size=1, max_size=64)


class TestBER:
    def test_examples(self):
        a = torch.tensor([0.0, 1, 1, 0])
        assert ber(a, a) == 0.0
        assert ber(a, 1 - a) == 100.0
        assert ber(a, torch.tensor([0.0, 1, 0, 0])) == 25.0

    def test_shape_and_empty(self):
        with pytest.raises(ValueError):
            ber(torch.zeros(3), torch.zeros(4))
        with pytest.raises(ValueError):
            ber(torch.zeros(0), torch.zeros(0))

    @given(bits, st.randoms())
    def test_metric_properties(self, xs, rnd):
        a = torch.tensor(xs, dtype=torch.float32)
        b = torch.tensor([rnd.randint(0, 1) for _ in xs], dtype=torch.float32)
        v = ber(a, b)
        assert 0.0 <= v <= 100.0 and v == ber(b, a)
        assert (v == 0.0) == torch.equal(a, b)


class TestUBER:
    def test_shortcut_decoder_gives_zero(self):
        msg = torch.tensor([1.0, 0, 1, 1])
        decode = lambda key, ref: msg.expand(len(ref), -1).clone()  # noqa: E731
        assert uber(decode, torch.zeros(1, 2, 2), msg, torch.rand(12, 3, 8, 8)) == 0.0

    def test_image_dependent_decoder(self):
        # decoder reading bits straight from the reference: unrelated images -> about half wrong
        msg = torch.randint(0, 2, (256,)).float()
        decode = lambda key, ref: (ref.flatten(1)[:, :256] > 0.5).float()  # noqa: E731
        v = uber(decode, torch.zeros(1, 16, 16), msg, torch.rand(10, 3, 16, 16))
        assert 40.0 < v < 60.0

    def test_process_applied(self):
        seen = []
        decode = lambda key, ref: torch.zeros(len(ref), 2)  # noqa: E731
        uber(decode, torch.zeros(1, 1, 2), torch.zeros(2), torch.rand(10, 3, 4, 4),
             process=lambda r: seen.append(len(r)) or r)
        assert seen == [10]

    def test_too_few_references(self):
        with pytest.raises(ValueError):
            uber(lambda k, r: r, torch.zeros(1, 1, 1), torch.zeros(1), torch.rand(3, 3, 4, 4))


class TestEvaluate:
    def test_untrained_codec(self, toy_set):
        cfg = TrainConfig.toy()
        codec = make_codec(cfg)
        codec.moments.fit(toy_set.train)
        res = evaluate(codec, toy_set.test)
        assert 0.0 <= res.ber <= 100.0 and res.psnr_noised is None
        noisy = evaluate(codec, toy_set.test, EvalConfig(noise_seeds=(0, 1)), NoiseConfig.toy())
        assert noisy.psnr_noised > 0 and noisy.psnr_restored is None

    def test_needs_k_plus_one(self, toy_set):
        codec = make_codec(TrainConfig.toy())
        codec.moments.fit(toy_set.train)
        with pytest.raises(ValueError):
            evaluate(codec, toy_set.test[:10])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(K=0)
        with pytest.raises(ValueError):
            EvalConfig(noise_seeds=())


class TestReport:
    rows = [AblationRow("sgxor", 0, 1.234, 49.876, 0.0, 50.1, "abc"),
            AblationRow("ste", 1, 2.0, 48.0, 0.5, 49.0, "def")]

    def test_files(self, tmp_path):
        tsv, jsonl = write_report(self.rows, tmp_path, "r")
        lines = tsv.read_text().splitlines()
        assert lines[0].split("\t")[:4] == ["variant", "seed", "BER(%)", "U-BER(%)"]
        assert lines[1].split("\t")[:4] == ["sgxor", "0", "1.23", "49.88"]
        recs = [json.loads(x) for x in jsonl.read_text().splitlines()]
        assert {"name", "BER", "U-BER", "seed", "config_digest"} <= set(recs[0])
        assert recs[1]["name"] == "ste" and recs[1]["BER"] == 2.0

    def test_precision(self):
        assert "1.2340" in format_table(self.rows, precision=4)

    def test_config_digest(self):
        assert config_digest(NoiseConfig()) == config_digest(NoiseConfig())
        assert config_digest(NoiseConfig()) != config_digest(NoiseConfig(gauss_sigma=0.03))


class TestHarness:
    def test_unknown_variant(self, toy_set):
        h = AblationHarness(toy_set.train, toy_set.test, TrainConfig.toy())
        with pytest.raises(ValueError):
            h.run("bogus")
        with pytest.raises(ValueError):
            h.run("noise_swap")
