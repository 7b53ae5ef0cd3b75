"""Readouts and objective metrics on the banded mel layout."""
import numpy as np
import pytest

from singdiff.analysis import (UndefinedResult, f0_mae, pitch_readout, timbre_match,
                               vibrato_index, voiced_segments)
from singdiff.corpus import STYLE_SING, UNVOICED, CorpusConfig, render_frame_pitch, render_mel

CFG = CorpusConfig()


class TestPitchReadout:
    def test_recovers_constant_pitch(self):
        mel = render_mel(np.full(10, 60.0), np.zeros(10, dtype=int), 0, CFG)
        out = pitch_readout(mel, CFG)
        np.testing.assert_allclose(out, 60.0, atol=0.1)

    def test_empty_pitch_band_is_unvoiced(self):
        mel = np.zeros((4, CFG.mel_dim))
        mel += CFG.timbre_vector(0)
        assert np.all(pitch_readout(mel, CFG) == UNVOICED)

    def test_contour_roundtrip(self):
        rng = np.random.default_rng(2)
        contour = render_frame_pitch([61.0, 66.0, 58.5], [50, 60, 40], STYLE_SING, CFG, rng)
        mel = render_mel(contour, np.repeat([1, 2, 3], [50, 60, 40]), 1, CFG)
        out = pitch_readout(mel, CFG)
        assert np.abs(out - contour).mean() < 0.1

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            pitch_readout(np.zeros((3, CFG.mel_dim + 1)), CFG)


class TestVoicedSegments:
    def test_splits_at_unvoiced_gaps_and_jumps(self):
        contour = np.concatenate([
            np.full(40, 60.0), np.full(5, UNVOICED), np.full(40, 60.0),
            np.full(40, 63.0),
        ])
        segs = voiced_segments(contour, min_len=32)
        assert segs == [(0, 40), (45, 85), (85, 125)]

    def test_drops_short_runs(self):
        contour = np.concatenate([np.full(10, 60.0), np.full(5, UNVOICED), np.full(40, 60.0)])
        assert voiced_segments(contour, min_len=32) == [(15, 55)]


class TestVibratoIndex:
    def test_pure_tone_power(self):
        k = np.arange(500)
        contour = 60.0 + 0.5 * np.sin(2 * np.pi * 6.0 * k / 100.0)
        assert vibrato_index(contour, 100.0) == pytest.approx(0.125, rel=0.02)

    def test_constant_contour_is_zero(self):
        assert vibrato_index(np.full(200, 62.0), 100.0) == pytest.approx(0.0, abs=1e-18)

    def test_white_jitter_below_pure_tone(self):
        rng = np.random.default_rng(0)
        k = np.arange(500)
        tone = 60.0 + 0.5 * np.sin(2 * np.pi * 6.0 * k / 100.0)
        jitter = 60.0 + rng.normal(0.0, np.sqrt(0.125), 500)
        idx = vibrato_index(jitter, 100.0, max_jump_st=np.inf)
        assert idx < vibrato_index(tone, 100.0)

    def test_rejects_too_few_voiced_frames(self):
        with pytest.raises(UndefinedResult):
            vibrato_index(np.full(40, 60.0), 100.0)

    def test_out_of_band_tone_contributes_nothing(self):
        k = np.arange(500)
        slow = 60.0 + 0.5 * np.sin(2 * np.pi * 1.0 * k / 100.0)
        assert vibrato_index(slow, 100.0) < 0.01


class TestF0Mae:
    def test_identical_contours(self):
        c = np.array([60.0, 61.0, 62.0])
        assert f0_mae(c, c) == 0.0

    def test_constant_offset(self):
        c = np.full(10, 60.0)
        assert f0_mae(c + 1.0, c) == pytest.approx(1.0)

    def test_hand_pair_with_unvoiced(self):
        pred = np.array([60.0, 61.0, UNVOICED])
        ref = np.array([60.0, 60.0, 60.0])
        assert f0_mae(pred, ref) == pytest.approx(0.5)

    def test_rejects_disjoint_voicing(self):
        with pytest.raises(UndefinedResult):
            f0_mae(np.array([UNVOICED, 60.0]), np.array([60.0, UNVOICED]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            f0_mae(np.zeros(3), np.zeros(4))


class TestTimbreMatch:
    def test_own_speaker_close_to_one(self):
        rng = np.random.default_rng(1)
        mel = render_mel(np.full(60, 62.0), np.full(60, 1), 2, CFG)
        mel += rng.normal(0, CFG.noise_std, mel.shape)
        assert timbre_match(mel, 2, CFG) >= 0.99

    def test_other_speaker_near_zero(self):
        rng = np.random.default_rng(1)
        mel = render_mel(np.full(60, 62.0), np.full(60, 1), 2, CFG)
        mel += rng.normal(0, CFG.noise_std, mel.shape)
        assert abs(timbre_match(mel, 0, CFG)) < 0.05

    def test_zero_mel_is_undefined(self):
        with pytest.raises(UndefinedResult):
            timbre_match(np.zeros((5, CFG.mel_dim)), 0, CFG)
