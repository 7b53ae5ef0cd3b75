"""Networks: regulator/averaging algebra, score net contracts, checkpoints."""
import inspect

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from singdiff.corpus import UNVOICED
from singdiff.model import (AcousticModel, ModelConfig, length_regulate, load_checkpoint,
                            phone_average, save_checkpoint)

CFG = ModelConfig()


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return AcousticModel(CFG)


class TestLengthRegulate:
    def test_unit_durations_identity(self):
        x = torch.randn(4, 3)
        assert torch.equal(length_regulate(x, [1, 1, 1, 1]), x)

    def test_repeats_rows(self):
        a, b = torch.tensor([1.0, 2.0]), torch.tensor([3.0, 4.0])
        out = length_regulate(torch.stack([a, b]), [2, 3])
        assert torch.equal(out, torch.stack([a, a, b, b, b]))

    @given(st.lists(st.integers(1, 9), min_size=1, max_size=12))
    @settings(max_examples=50, deadline=None)
    def test_total_rows(self, durations):
        x = torch.randn(len(durations), 5)
        assert length_regulate(x, durations).shape == (sum(durations), 5)

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError):
            length_regulate(torch.randn(2, 3), [2, 0])

    def test_piecewise_constant_within_phone(self):
        durations = [3, 5, 2]
        out = length_regulate(torch.randn(3, 4), durations)
        start = 0
        for d in durations:
            seg = out[start:start + d]
            assert seg.var(dim=0, unbiased=False).max() == 0.0
            start += d


class TestPhoneAverage:
    def test_constant_mel_unchanged(self):
        mel = torch.full((7, 3), 2.0)
        assert torch.equal(phone_average(mel, [3, 4]), mel)

    def test_single_phone_gives_column_means(self):
        mel = torch.randn(6, 4)
        out = phone_average(mel, [6])
        torch.testing.assert_close(out, mel.mean(0, keepdim=True).expand(6, 4))

    def test_hand_computed_means(self):
        mel = torch.tensor([[0.0], [2.0], [4.0], [10.0]])
        out = phone_average(mel, [3, 1])
        assert torch.equal(out, torch.tensor([[2.0], [2.0], [2.0], [10.0]]))

    def test_idempotent(self):
        mel = torch.randn(9, 5)
        durations = [2, 4, 3]
        once = phone_average(mel, durations)
        torch.testing.assert_close(phone_average(once, durations), once)

    def test_matches_length_regulate_of_means(self):
        mel = torch.randn(10, 3)
        durations = [4, 6]
        means = torch.stack([mel[:4].mean(0), mel[4:].mean(0)])
        torch.testing.assert_close(phone_average(mel, durations),
                                   length_regulate(means, durations))

    def test_rejects_frame_mismatch(self):
        with pytest.raises(ValueError):
            phone_average(torch.randn(5, 3), [2, 2])


class TestEncode:
    def test_deterministic(self, model):
        args = ([1, 2, 3], [60.0, UNVOICED, 65.0], 1)
        with torch.no_grad():
            a = model.encode(*args)
            b = model.encode(*args)
        assert torch.equal(a, b)
        assert a.shape == (3, CFG.mel_dim)

    def test_style_is_not_an_input(self):
        params = inspect.signature(AcousticModel.encode).parameters
        assert "style_id" not in params and "style" not in params

    def test_rejects_bad_ids(self, model):
        with pytest.raises(ValueError):
            model.encode([0, CFG.num_phones], [60.0, 60.0], 0)
        with pytest.raises(ValueError):
            model.encode([0], [60.0], CFG.num_speakers)


class TestScoreNetwork:
    @pytest.mark.parametrize("frames", [8, 33, 127, 384])
    def test_shape_contract(self, model, frames):
        x = torch.randn(frames, CFG.mel_dim)
        mu = torch.randn(frames, CFG.mel_dim)
        with torch.no_grad():
            out = model.score(x, mu, 1, 0.5)
        assert out.shape == x.shape
        assert torch.isfinite(out).all()

    def test_batched_shape(self, model):
        x = torch.randn(3, 40, CFG.mel_dim)
        mu = torch.randn(3, 40, CFG.mel_dim)
        with torch.no_grad():
            out = model.score(x, mu, torch.tensor([0, 1, 0]), np.array([0.2, 0.5, 1.0]))
        assert out.shape == x.shape

    def test_style_changes_output(self, model):
        torch.manual_seed(1)
        x = torch.randn(20, CFG.mel_dim)
        mu = torch.randn(20, CFG.mel_dim)
        with torch.no_grad():
            assert not torch.equal(model.score(x, mu, 0, 0.5), model.score(x, mu, 1, 0.5))

    def test_batch_permutation_equivariance(self, model):
        torch.manual_seed(2)
        x = torch.randn(2, 25, CFG.mel_dim)
        mu = torch.randn(2, 25, CFG.mel_dim)
        sty = torch.tensor([0, 1])
        t = np.array([0.3, 0.9])
        with torch.no_grad():
            fwd = model.score(x, mu, sty, t)
            rev = model.score(x.flip(0), mu.flip(0), sty.flip(0), t[::-1].copy())
        torch.testing.assert_close(fwd, rev.flip(0))

    def test_rejects_shape_mismatch_and_bad_t(self, model):
        x = torch.randn(10, CFG.mel_dim)
        with pytest.raises(ValueError):
            model.score(x, torch.randn(11, CFG.mel_dim), 0, 0.5)
        with pytest.raises(ValueError):
            model.score(x, x, 0, 0.0)
        with pytest.raises(ValueError):
            model.score(x, x, 5, 0.5)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(3)
        model = AcousticModel(CFG).double()
        x = torch.randn(12, CFG.mel_dim, dtype=torch.float64, requires_grad=True)
        mu = torch.randn(12, CFG.mel_dim, dtype=torch.float64)
        out = model.score(x, mu, 1, 0.7).mean()
        grad, = torch.autograd.grad(out, x)
        rng = np.random.default_rng(0)
        eps = 1e-6
        for _ in range(10):
            i = int(rng.integers(0, 12))
            j = int(rng.integers(0, CFG.mel_dim))
            with torch.no_grad():
                xp = x.clone(); xp[i, j] += eps
                xm = x.clone(); xm[i, j] -= eps
                fd = (model.score(xp, mu, 1, 0.7).mean()
                      - model.score(xm, mu, 1, 0.7).mean()) / (2 * eps)
            assert abs(fd - grad[i, j]) <= 1e-3 * max(abs(fd), abs(grad[i, j]), 1e-8)


class TestEmbeddingTables:
    def test_separate_speaker_and_style_tables(self, model):
        assert model.speaker_table.weight.shape == (CFG.num_speakers, CFG.embed_dim)
        assert model.style_table.weight.shape == (CFG.num_styles, CFG.embed_dim)
        assert model.speaker_table.weight.data_ptr() != model.style_table.weight.data_ptr()


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, model, tmp_path):
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, extra={"step": 17})
        loaded, payload = load_checkpoint(path)
        assert payload["extra"]["step"] == 17
        for key, tensor in model.state_dict().items():
            assert torch.equal(loaded.state_dict()[key], tensor), key

    def test_loaded_model_reproduces_outputs(self, model, tmp_path):
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        x = torch.randn(15, CFG.mel_dim)
        mu = torch.randn(15, CFG.mel_dim)
        with torch.no_grad():
            torch.testing.assert_close(model.score(x, mu, 1, 0.4),
                                       loaded.score(x, mu, 1, 0.4))
