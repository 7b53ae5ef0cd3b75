"""Objective readouts and metrics on the banded toy mel domain.

These invert the corpus construction directly: pitch from the energy
center of mass over the pitch band, timbre from cosine similarity on the
timbre band. Style presence is quantified by modulation power in the
vibrato band (4-8 Hz) of the read-back pitch contour.
"""
from __future__ import annotations

import numpy as np

from .corpus import UNVOICED, CorpusConfig

VIBRATO_BAND_HZ = (4.0, 8.0)


class UndefinedResult(ValueError):
    """A metric has no defined value on the given input (degenerate data)."""


def pitch_readout(mel: np.ndarray, config: CorpusConfig,
                  voicing_rel_threshold: float = 0.1) -> np.ndarray:
    """Frame pitch in semitones read back from the pitch-band bump.

    Frames whose band energy falls below voicing_rel_threshold of a clean
    bump's energy are marked UNVOICED. Center of mass is taken over
    squared (energy) values, which keeps the estimate unbiased under the
    additive observation noise."""
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[1] != config.mel_dim:
        raise ValueError(f"expected mel [frames x {config.mel_dim}], got {mel.shape}")
    lo, hi = config.pitch_band
    weights = np.clip(mel[:, lo:hi], 0.0, None) ** 2
    energy = weights.sum(axis=1)
    out = np.full(mel.shape[0], UNVOICED)
    voiced = energy >= voicing_rel_threshold * config.clean_bump_energy()
    if np.any(voiced):
        bins = np.arange(lo, hi, dtype=np.float64)
        com = (weights[voiced] * bins).sum(axis=1) / weights[voiced].sum(axis=1)
        out[voiced] = config.pitch_from_center(com)
    return out


def voiced_segments(contour: np.ndarray, min_len: int = 32,
                    max_jump_st: float = 0.6) -> list:
    """Maximal voiced spans, split where the pitch jumps discontinuously.

    Note changes and declination resets are level steps, not modulation;
    splitting at them keeps the spectral analysis about within-note motion.
    """
    contour = np.asarray(contour, dtype=np.float64)
    segments = []
    start = None
    for i in range(len(contour) + 1):
        here_voiced = i < len(contour) and contour[i] != UNVOICED
        jump = (start is not None and here_voiced
                and abs(contour[i] - contour[i - 1]) > max_jump_st)
        if here_voiced and start is None:
            start = i
        elif start is not None and (not here_voiced or jump):
            if i - start >= min_len:
                segments.append((start, i))
            start = i if here_voiced else None
    return segments


def vibrato_index(contour: np.ndarray, frame_rate: float,
                  band_hz: tuple = VIBRATO_BAND_HZ, min_segment: int = 32,
                  min_voiced: int = 64, max_jump_st: float = 0.6) -> float:
    """Mean modulation power (st^2) in the vibrato band of a pitch contour.

    Each voiced segment is linearly detrended and Fourier-analyzed; powers
    are averaged weighted by segment length. A pure in-band sinusoid of
    depth d yields d^2/2."""
    contour = np.asarray(contour, dtype=np.float64)
    n_voiced = int((contour != UNVOICED).sum())
    if n_voiced < min_voiced:
        raise UndefinedResult(f"need >= {min_voiced} voiced frames, got {n_voiced}")
    segments = voiced_segments(contour, min_len=min_segment, max_jump_st=max_jump_st)
    if not segments:
        raise UndefinedResult("no voiced segment long enough for spectral analysis")
    total_power = 0.0
    total_len = 0
    for a, b in segments:
        seg = contour[a:b]
        n = b - a
        x = np.arange(n, dtype=np.float64)
        trend = np.polyval(np.polyfit(x, seg, 1), x)
        detrended = seg - trend
        spectrum = np.fft.rfft(detrended)
        freqs = np.fft.rfftfreq(n, 1.0 / frame_rate)
        power = 2.0 * np.abs(spectrum) ** 2 / n ** 2
        power[0] /= 2.0
        if n % 2 == 0:
            power[-1] /= 2.0
        in_band = (freqs >= band_hz[0]) & (freqs <= band_hz[1])
        total_power += power[in_band].sum() * n
        total_len += n
    return total_power / total_len


def f0_mae(pred_contour: np.ndarray, ref_contour: np.ndarray) -> float:
    """Semitone MAE over frames voiced in both contours."""
    pred = np.asarray(pred_contour, dtype=np.float64)
    ref = np.asarray(ref_contour, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"contour lengths differ: {pred.shape} vs {ref.shape}")
    both = (pred != UNVOICED) & (ref != UNVOICED)
    if not np.any(both):
        raise UndefinedResult("no jointly voiced frames")
    return float(np.abs(pred[both] - ref[both]).mean())


def timbre_match(mel: np.ndarray, speaker_id: int, config: CorpusConfig) -> float:
    """Cosine similarity of the time-averaged timbre band against the
    generator's timbre vector for speaker_id."""
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[1] != config.mel_dim:
        raise ValueError(f"expected mel [frames x {config.mel_dim}], got {mel.shape}")
    lo, hi = config.timbre_band
    observed = mel[:, lo:hi].mean(axis=0)
    reference = config.timbre_vector(speaker_id)[lo:hi]
    norm = np.linalg.norm(observed) * np.linalg.norm(reference)
    if norm == 0:
        raise UndefinedResult("timbre band is identically zero")
    return float(observed @ reference / norm)
