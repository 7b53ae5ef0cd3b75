"""Trainer: batch assembly, loss wiring, isolation, determinism, logging."""
import dataclasses
import math

import numpy as np
import pytest
import torch

from singdiff import diffusion
from singdiff.corpus import CorpusConfig, generate_corpus, load_manifest
from singdiff.mi import VariationalApprox, update_q
from singdiff.model import phone_average
from singdiff.training import (METRICS_HEADER, TrainConfig, build_model, crop_utterance,
                               sample_batch, train, train_step, _step_rng)


@pytest.fixture(scope="module")
def micro_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("micro") / "corpus"
    cfg = CorpusConfig(utterances_per_speaker=8, n_valid=1, n_test=1)
    generate_corpus(cfg, out, seed=9)
    return out


def micro_config(corpus_dir, out_dir, **kw):
    defaults = dict(corpus_dir=str(corpus_dir), out_dir=str(out_dir), total_steps=4,
                    batch_size=4, checkpoint_every=100, val_every=2, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


def read_metrics(path):
    with open(path) as f:
        header = f.readline().strip()
        rows = [line.strip().split(",") for line in f if line.strip()]
    return header, [[float(v) for v in row] for row in rows]


class TestConfig:
    def test_rejects_negative_lambda(self):
        with pytest.raises(ValueError):
            TrainConfig(lambda_mi=-0.1)

    def test_rejects_tiny_batch_with_mi(self):
        with pytest.raises(ValueError):
            TrainConfig(lambda_mi=0.01, batch_size=1)
        TrainConfig(lambda_mi=0.0, batch_size=1)

    def test_roundtrip(self, tmp_path):
        cfg = TrainConfig(total_steps=7, seed=3)
        cfg.save(tmp_path / "c.json")
        assert TrainConfig.load(tmp_path / "c.json") == cfg


class TestCropping:
    def test_crop_boundaries(self, micro_corpus):
        utt = load_manifest(micro_corpus / "train.jsonl")[0]
        crop = crop_utterance(utt, 2, min(30, utt.frames - 2))
        assert sum(crop.durations) == crop.mel.shape[0]
        assert len(crop.phones) == len(crop.durations) == len(crop.phone_pitches)
        np.testing.assert_array_equal(crop.mel, utt.mel[2:2 + crop.mel.shape[0]])

    def test_hand_example(self, micro_corpus):
        utt = load_manifest(micro_corpus / "train.jsonl")[0]
        utt = dataclasses.replace(utt, durations=[3, 4, 2],
                                  phones=utt.phones[:3], phone_pitches=utt.phone_pitches[:3],
                                  mel=utt.mel[:9])
        crop = crop_utterance(utt, 2, 5)
        assert crop.durations == [1, 4]
        assert crop.phones == utt.phones[:2]

    def test_batches_respect_frame_cap(self, micro_corpus):
        utts = load_manifest(micro_corpus / "train.jsonl")
        for step in range(5):
            batch = sample_batch(utts, 6, 64, _step_rng(0, step))
            lengths = {b.mel.shape[0] for b in batch}
            assert len(lengths) == 1
            assert lengths.pop() <= 64


class TestTrainStep:
    def test_zero_mi_weight_gives_exact_two_term_total(self, micro_corpus, tmp_path):
        cfg = micro_config(micro_corpus, tmp_path, lambda_mi=0.0)
        ccfg = CorpusConfig(utterances_per_speaker=8, n_valid=1, n_test=1)
        model = build_model(cfg, ccfg)
        q = VariationalApprox(cfg.embed_dim)
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_main)
        qopt = torch.optim.Adam(q.parameters(), lr=cfg.lr_q)
        utts = load_manifest(micro_corpus / "train.jsonl")
        rng = _step_rng(0, 0)
        m = train_step(model, q, sample_batch(utts, 4, 128, rng), cfg, opt, qopt, rng)
        assert m["l_total"] == m["l_mu"] + m["l_diff"]

    def test_perfect_oracle_losses_are_zero(self):
        # injecting the generator's own targets: the prior loss against the
        # phone average and the score loss against the exact target vanish
        rng = np.random.default_rng(0)
        mel = torch.tensor(rng.standard_normal((20, 8)), dtype=torch.float32)
        durations = [6, 14]
        target = phone_average(mel, durations)
        l_mu = torch.mean((target - phone_average(mel, durations)) ** 2)
        assert l_mu.item() == 0.0
        sched = diffusion.NoiseSchedule()
        t = 0.37
        lam = 1 - diffusion.gamma(0, t, sched) ** 2
        noise = rng.standard_normal((20, 8))
        l_diff = diffusion.diffusion_loss(-noise / math.sqrt(lam), noise, t, sched)
        assert l_diff == pytest.approx(0.0, abs=1e-14)

    def test_nan_input_aborts_with_diagnostic(self, micro_corpus, tmp_path):
        cfg = micro_config(micro_corpus, tmp_path)
        ccfg = CorpusConfig(utterances_per_speaker=8, n_valid=1, n_test=1)
        model = build_model(cfg, ccfg)
        q = VariationalApprox(cfg.embed_dim)
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_main)
        qopt = torch.optim.Adam(q.parameters(), lr=cfg.lr_q)
        utts = load_manifest(micro_corpus / "train.jsonl")
        rng = _step_rng(0, 0)
        batch = sample_batch(utts, 4, 96, rng)
        batch[0].mel[3, 5] = np.nan
        with pytest.raises(RuntimeError, match="l_mu"):
            train_step(model, q, batch, cfg, opt, qopt, rng)

    def test_update_q_leaves_model_untouched(self, micro_corpus, tmp_path):
        cfg = micro_config(micro_corpus, tmp_path)
        ccfg = CorpusConfig(utterances_per_speaker=8, n_valid=1, n_test=1)
        model = build_model(cfg, ccfg)
        q = VariationalApprox(cfg.embed_dim)
        qopt = torch.optim.Adam(q.parameters(), lr=cfg.lr_q)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        with torch.no_grad():
            spk = model.speaker_table(torch.tensor([0, 1, 2]))
            sty = model.style_table(torch.tensor([1, 0, 0]))
        update_q(q, spk, sty, qopt)
        for k, v in model.state_dict().items():
            assert torch.equal(v, before[k]), k


class TestTrainLoop:
    def test_metrics_log_shape_and_additivity(self, micro_corpus, tmp_path):
        cfg = micro_config(micro_corpus, tmp_path / "run", total_steps=5)
        train(cfg)
        header, rows = read_metrics(tmp_path / "run" / "metrics.csv")
        assert header == METRICS_HEADER
        assert len(rows) == 5
        assert [int(r[0]) for r in rows] == [1, 2, 3, 4, 5]
        for _, l_mu, l_diff, l_mi, l_total, _ in rows:
            assert abs(l_total - (l_mu + l_diff + cfg.lambda_mi * l_mi)) <= 1e-6

    def test_validation_log_written(self, micro_corpus, tmp_path):
        cfg = micro_config(micro_corpus, tmp_path / "run", total_steps=4, val_every=2)
        train(cfg)
        lines = (tmp_path / "run" / "val_metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "step,val_l_mu"
        assert [int(l.split(",")[0]) for l in lines[1:]] == [2, 4]

    def test_resume_reproduces_trajectory(self, micro_corpus, tmp_path):
        full_cfg = micro_config(micro_corpus, tmp_path / "full", total_steps=8,
                                checkpoint_every=4)
        train(full_cfg)
        _, full_rows = read_metrics(tmp_path / "full" / "metrics.csv")

        part_cfg = micro_config(micro_corpus, tmp_path / "part", total_steps=4,
                                checkpoint_every=4)
        train(part_cfg)
        resume_cfg = dataclasses.replace(part_cfg, total_steps=8)
        train(resume_cfg, resume_from=tmp_path / "part" / "checkpoint_final.pt")
        _, part_rows = read_metrics(tmp_path / "part" / "metrics.csv")
        assert part_rows == full_rows

    def test_seed_changes_initial_losses(self, micro_corpus, tmp_path):
        a = micro_config(micro_corpus, tmp_path / "a", total_steps=1, seed=0)
        b = micro_config(micro_corpus, tmp_path / "b", total_steps=1, seed=1)
        train(a)
        train(b)
        _, rows_a = read_metrics(tmp_path / "a" / "metrics.csv")
        _, rows_b = read_metrics(tmp_path / "b" / "metrics.csv")
        assert rows_a[0][2] != rows_b[0][2]

    def test_missing_corpus_rejected(self, tmp_path):
        cfg = micro_config(tmp_path / "nowhere", tmp_path / "run")
        with pytest.raises(FileNotFoundError):
            train(cfg)

    def test_checkpoint_contains_run_metadata(self, micro_corpus, tmp_path):
        cfg = micro_config(micro_corpus, tmp_path / "run", total_steps=2)
        final = train(cfg)
        payload = torch.load(final, map_location="cpu", weights_only=False)
        assert payload["extra"]["step"] == 2
        assert payload["extra"]["train_config"]["total_steps"] == 2
        assert "corpus_config" in payload["extra"]
        assert "q_state" in payload
