"""Inference: prior -> fast diffusion decoding -> objective evaluation.

The decoder runs in numpy float64 (the solver math) around a float32
torch score network; a request is fully reproducible from its fields.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import diffusion
from .analysis import UndefinedResult, f0_mae, pitch_readout, timbre_match, vibrato_index
from .corpus import STYLE_SING, STYLE_SPEAK, CorpusConfig, Utterance
from .model import AcousticModel, length_regulate


@dataclass
class SynthRequest:
    phones: list
    phone_pitches: list
    durations: list
    speaker_id: int
    style_id: int
    n_steps: int = 10
    mode: str = diffusion.FAST_ML
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (len(self.phones) == len(self.durations) == len(self.phone_pitches)):
            raise ValueError("phones/durations/phone_pitches lengths differ")
        if any(d < 1 for d in self.durations):
            raise ValueError("durations must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.mode not in (diffusion.FAST_ML, diffusion.EULER_ODE):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def frames(self) -> int:
        return int(sum(self.durations))

    @classmethod
    def from_json(cls, path) -> "SynthRequest":
        with open(path) as f:
            raw = json.load(f)
        return cls(
            phones=raw["phones"],
            phone_pitches=raw["phone_pitches"],
            durations=raw["durations"],
            speaker_id=raw.get("speaker", raw.get("speaker_id")),
            style_id=raw.get("style", raw.get("style_id")),
            n_steps=raw.get("n_steps", 10),
            mode=raw.get("mode", diffusion.FAST_ML),
            temperature=raw.get("temperature", 1.0),
            seed=raw.get("seed", 0),
        )

    @classmethod
    def from_utterance(cls, utt: Utterance, speaker_id: int, style_id: int, **kw) -> "SynthRequest":
        return cls(list(utt.phones), list(utt.phone_pitches), list(utt.durations),
                   speaker_id, style_id, **kw)


def prior_frames(request: SynthRequest, model: AcousticModel) -> np.ndarray:
    """Frame-level prior for the request, as float64 numpy [frames x D]."""
    model.eval()
    with torch.no_grad():
        mu_phone = model.encode(request.phones, request.phone_pitches, request.speaker_id)
        mu_frame = length_regulate(mu_phone, request.durations)
    return mu_frame.double().numpy()


X0_CLIP = (-1.0, 5.0)


def _score_fn(model: AcousticModel, style_id: int,
              schedule: diffusion.NoiseSchedule, x0_clip=X0_CLIP):
    """Wrap the torch net as a float64 numpy score function.

    The raw score is converted to the clean-mel estimate it implies,
    which is clamped to the (generous) data range and converted back.
    Off-manifold states then still receive a score that points at valid
    data, which keeps every reverse step contractive.
    """
    def fn(x, mu, t):
        with torch.no_grad():
            xt = torch.as_tensor(x, dtype=torch.float32)
            mt = torch.as_tensor(mu, dtype=torch.float32)
            out = model.score(xt, mt, style_id, float(t))
        score = out.double().numpy()
        if x0_clip is None:
            return score
        g = diffusion.gamma(0.0, t, schedule)
        lam = 1.0 - g * g
        x0_est = (x + lam * score - (1.0 - g) * mu) / g
        x0_est = np.clip(x0_est, *x0_clip)
        return -(x - g * x0_est - (1.0 - g) * mu) / lam
    return fn


def synthesize(request: SynthRequest, model: AcousticModel,
               schedule: diffusion.NoiseSchedule = None) -> np.ndarray:
    """Decode a mel for the request; deterministic given request.seed.

    The schedule defaults to the one the model was trained under."""
    if not 0 <= request.speaker_id < model.cfg.num_speakers:
        raise ValueError(f"unknown speaker {request.speaker_id}")
    if not 0 <= request.style_id < model.cfg.num_styles:
        raise ValueError(f"unknown style {request.style_id}")
    model.eval()
    if schedule is None:
        schedule = model.schedule()
    mu_frame = prior_frames(request, model)
    rng = np.random.default_rng(request.seed)
    return diffusion.sample(
        _score_fn(model, request.style_id, schedule), mu_frame, request.n_steps,
        mode=request.mode, temperature=request.temperature, rng=rng,
        schedule=schedule,
    )


def timing_report(request: SynthRequest, model: AcousticModel, step_counts,
                  repeats: int = 5,
                  schedule: diffusion.NoiseSchedule = None) -> list:
    """Mean wall-clock seconds per generated frame for each step count
    (one warm-up run, then `repeats` timed runs)."""
    rows = []
    for n in step_counts:
        req = dataclasses.replace(request, n_steps=int(n))
        synthesize(req, model, schedule)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            synthesize(req, model, schedule)
            times.append(time.perf_counter() - t0)
        rows.append({
            "n_steps": int(n),
            "frames": req.frames,
            "seconds_per_frame": float(np.mean(times) / req.frames),
            "seconds_total": float(np.mean(times)),
        })
    return rows


def evaluate_songs(model: AcousticModel, corpus_config: CorpusConfig, songs,
                   target_speaker: int, teacher_speaker: int = None,
                   n_steps: int = 10, mode: str = diffusion.FAST_ML, seed: int = 0,
                   timing_steps=(10, 50),
                   schedule: diffusion.NoiseSchedule = None) -> dict:
    """Full objective suite on held-out songs synthesized for one speaker.

    For every song: decode with singing style, read pitch back, score the
    semitone error against the song's notes, measure vibrato-band power;
    decode the same request with speaking style as the style contrast; and
    check timbre cosine against the target and the teacher.
    """
    if teacher_speaker is None:
        teacher_speaker = corpus_config.speaker_styles.index(STYLE_SING)
    per_song = []
    for i, song in enumerate(songs):
        req = SynthRequest.from_utterance(song, target_speaker, STYLE_SING,
                                          n_steps=n_steps, mode=mode, seed=seed + i)
        mel_sing = synthesize(req, model, schedule)
        contour = pitch_readout(mel_sing, corpus_config)
        ref = np.repeat(np.asarray(song.phone_pitches, dtype=np.float64), song.durations)
        entry = {
            "utt_id": song.utt_id,
            "f0_mae": f0_mae(contour, ref),
            "timbre_match": timbre_match(mel_sing, target_speaker, corpus_config),
            "timbre_match_teacher": timbre_match(mel_sing, teacher_speaker, corpus_config),
        }
        try:
            entry["vibrato_index"] = vibrato_index(contour, corpus_config.frame_rate)
        except UndefinedResult:
            entry["vibrato_index"] = None
        mel_speak = synthesize(dataclasses.replace(req, style_id=STYLE_SPEAK), model, schedule)
        try:
            entry["vibrato_index_speaking"] = vibrato_index(
                pitch_readout(mel_speak, corpus_config), corpus_config.frame_rate)
        except UndefinedResult:
            entry["vibrato_index_speaking"] = None
        per_song.append(entry)

    def mean_of(key):
        vals = [e[key] for e in per_song if e[key] is not None]
        return float(np.mean(vals)) if vals else None

    report = {
        "target_speaker": target_speaker,
        "teacher_speaker": teacher_speaker,
        "n_steps": n_steps,
        "mode": mode,
        "num_songs": len(per_song),
        "f0_mae": mean_of("f0_mae"),
        "vibrato_index": mean_of("vibrato_index"),
        "vibrato_index_speaking": mean_of("vibrato_index_speaking"),
        "timbre_match": mean_of("timbre_match"),
        "timbre_match_teacher": mean_of("timbre_match_teacher"),
        "per_song": per_song,
    }
    if report["vibrato_index"] is not None and report["vibrato_index_speaking"]:
        report["vibrato_ratio"] = report["vibrato_index"] / report["vibrato_index_speaking"]
    if timing_steps and songs:
        req = SynthRequest.from_utterance(songs[0], target_speaker, STYLE_SING,
                                          n_steps=n_steps, mode=mode, seed=seed)
        report["timing"] = timing_report(req, model, timing_steps, schedule=schedule)
    return report


def write_report(report: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
