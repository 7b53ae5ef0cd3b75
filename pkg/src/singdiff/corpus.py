"""Synthetic three-speaker corpus with a deterministic, invertible mel layout.

One "teacher" speaker sings (sustained notes with sinusoidal vibrato), the
remaining "student" speakers speak (declining contours with bounded jitter).
Each mel frame is the sum of three contributions on disjoint bin bands:

  timbre band  -- a per-speaker constant vector (orthogonal across speakers),
  pitch band   -- a Gaussian bump whose center is an affine function of the
                  frame pitch in semitones,
  shape band   -- a per-phone constant vector.

Because the bands are disjoint and the pitch map is affine, pitch and timbre
can be read back exactly from clean mels, which makes style transfer
objectively measurable without any vocoder or listening test.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNVOICED = -1.0

STYLE_SPEAK = 0
STYLE_SING = 1

_PHONE_SHAPE_SEED = 9173


@dataclass(frozen=True)
class CorpusConfig:
    # phone inventory; the last num_unvoiced_phones ids never carry pitch
    num_phones: int = 12
    num_unvoiced_phones: int = 2
    mel_dim: int = 32
    timbre_band: tuple = (0, 8)
    pitch_band: tuple = (8, 24)
    shape_band: tuple = (24, 32)
    # speakers; style per speaker, 1 = singing teacher, 0 = speaking student
    speaker_styles: tuple = (1, 0, 0)
    utterances_per_speaker: int = 80
    n_valid: int = 4
    n_test: int = 4
    frame_rate: float = 100.0
    # singing style
    sing_phones_range: tuple = (6, 12)
    sing_duration_range: tuple = (20, 80)
    sing_pitch_range: tuple = (60.0, 72.0)
    vibrato_rate_hz: float = 6.0
    vibrato_depth_st: float = 0.5
    vibrato_phase: float = 0.0
    # speaking style
    speak_phones_range: tuple = (8, 16)
    speak_duration_range: tuple = (15, 40)
    speak_pitch_range: tuple = (56.0, 72.0)
    declination_st: float = -0.3
    jitter_st: float = 0.12
    # both styles
    unvoiced_prob: float = 0.15
    unvoiced_duration_range: tuple = (5, 15)
    # mel construction
    pitch_map_range: tuple = (52.0, 76.0)
    bump_amp: float = 4.0
    bump_sigma_bins: float = 1.0
    bump_margin_bins: float = 3.0
    timbre_amp: float = 1.0
    shape_amp: float = 0.8
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.utterances_per_speaker < 1:
            raise ValueError("utterances_per_speaker must be >= 1")
        if self.n_valid + self.n_test >= self.utterances_per_speaker:
            raise ValueError("valid+test must leave at least one training utterance")
        if self.num_unvoiced_phones >= self.num_phones:
            raise ValueError("need at least one voiced phone")
        bands = [self.timbre_band, self.pitch_band, self.shape_band]
        covered = []
        for lo, hi in bands:
            if not 0 <= lo < hi <= self.mel_dim:
                raise ValueError(f"band ({lo}, {hi}) outside mel_dim {self.mel_dim}")
            covered.extend(range(lo, hi))
        if len(set(covered)) != len(covered):
            raise ValueError("bands must be disjoint")
        if 2 * self.num_speakers > self.timbre_band[1] - self.timbre_band[0]:
            raise ValueError("timbre band too narrow for the speaker count")
        if self.center_lo >= self.center_hi:
            raise ValueError("pitch band too narrow for the bump margin")
        if self.vibrato_depth_st < 0 or self.jitter_st < 0:
            raise ValueError("vibrato depth and jitter must be non-negative")
        lo, hi = self.pitch_map_range
        s_lo = self.sing_pitch_range[0] - self.vibrato_depth_st
        s_hi = self.sing_pitch_range[1] + self.vibrato_depth_st
        p_lo = self.speak_pitch_range[0] + min(self.declination_st, 0.0) - self.jitter_st
        p_hi = self.speak_pitch_range[1] + max(self.declination_st, 0.0) + self.jitter_st
        if not (lo <= min(s_lo, p_lo) and max(s_hi, p_hi) <= hi):
            raise ValueError("style pitch ranges (with excursions) must fit pitch_map_range")

    @property
    def num_speakers(self) -> int:
        return len(self.speaker_styles)

    @property
    def voiced_phone_ids(self):
        return range(self.num_phones - self.num_unvoiced_phones)

    @property
    def unvoiced_phone_ids(self):
        return range(self.num_phones - self.num_unvoiced_phones, self.num_phones)

    # --- pitch <-> bump-center affine map -------------------------------
    @property
    def center_lo(self) -> float:
        return self.pitch_band[0] + self.bump_margin_bins

    @property
    def center_hi(self) -> float:
        return self.pitch_band[1] - 1 - self.bump_margin_bins

    def bump_center(self, pitch):
        lo, hi = self.pitch_map_range
        return self.center_lo + (np.asarray(pitch) - lo) * (self.center_hi - self.center_lo) / (hi - lo)

    def pitch_from_center(self, center):
        lo, hi = self.pitch_map_range
        return lo + (np.asarray(center) - self.center_lo) * (hi - lo) / (self.center_hi - self.center_lo)

    # --- per-speaker and per-phone spectra -------------------------------
    def timbre_vector(self, speaker_id: int) -> np.ndarray:
        """Speaker-constant spectrum on the timbre band; supports are
        disjoint across speakers, hence exactly orthogonal."""
        if not 0 <= speaker_id < self.num_speakers:
            raise ValueError(f"speaker_id {speaker_id} out of range")
        vec = np.zeros(self.mel_dim)
        base = self.timbre_band[0] + 2 * speaker_id
        vec[base] = self.timbre_amp
        vec[base + 1] = 0.6 * self.timbre_amp
        return vec

    def phone_vector(self, phone_id: int) -> np.ndarray:
        if not 0 <= phone_id < self.num_phones:
            raise ValueError(f"phone_id {phone_id} out of range")
        lo, hi = self.shape_band
        r = np.random.default_rng(np.random.SeedSequence([_PHONE_SHAPE_SEED, phone_id]))
        vec = np.zeros(self.mel_dim)
        vec[lo:hi] = self.shape_amp * r.uniform(0.0, 1.0, hi - lo)
        return vec

    def clean_bump_energy(self) -> float:
        """Pitch-band energy of one clean bump, for the voicing threshold."""
        lo, hi = self.pitch_band
        k = np.arange(lo, hi)
        c = 0.5 * (self.center_lo + self.center_hi)
        bump = self.bump_amp * np.exp(-0.5 * ((k - c) / self.bump_sigma_bins) ** 2)
        return float((bump ** 2).sum())


@dataclass
class Utterance:
    utt_id: str
    phones: list
    durations: list
    phone_pitches: list
    speaker_id: int
    style_id: int
    mel: np.ndarray

    def __post_init__(self):
        if not (len(self.phones) == len(self.durations) == len(self.phone_pitches)):
            raise ValueError(f"{self.utt_id}: phones/durations/pitches lengths differ")
        if any(d < 1 for d in self.durations):
            raise ValueError(f"{self.utt_id}: durations must be >= 1")
        if self.mel is not None and sum(self.durations) != self.mel.shape[0]:
            raise ValueError(
                f"{self.utt_id}: sum(durations)={sum(self.durations)} != frames={self.mel.shape[0]}"
            )

    @property
    def frames(self) -> int:
        return sum(self.durations)

    def frame_pitch_targets(self) -> np.ndarray:
        """Per-frame note values (no vibrato/declination), sentinel kept."""
        return np.repeat(np.asarray(self.phone_pitches, dtype=np.float64), self.durations)


def render_frame_pitch(phone_pitches, durations, style_id: int, config: CorpusConfig,
                       rng: np.random.Generator = None) -> np.ndarray:
    """Expand phone notes to a frame-level contour with the style's pitch motion.

    Singing: note + depth * sin(2 pi rate k / frame_rate + phase), k the
    global frame index, so vibrato phase is continuous across phones.
    Speaking: linear within-phone declination plus bounded uniform jitter.
    Unvoiced phones carry the UNVOICED sentinel on every frame.
    """
    if len(phone_pitches) != len(durations):
        raise ValueError("phone_pitches and durations must have equal length")
    if any(d < 1 for d in durations):
        raise ValueError("durations must be >= 1")
    if style_id not in (STYLE_SPEAK, STYLE_SING):
        raise ValueError(f"unknown style_id {style_id}")
    if rng is None:
        rng = np.random.default_rng()
    total = int(sum(durations))
    contour = np.empty(total, dtype=np.float64)
    start = 0
    for pitch, dur in zip(phone_pitches, durations):
        dur = int(dur)
        seg = slice(start, start + dur)
        if pitch == UNVOICED:
            contour[seg] = UNVOICED
        elif style_id == STYLE_SING:
            k = np.arange(start, start + dur, dtype=np.float64)
            contour[seg] = pitch + config.vibrato_depth_st * np.sin(
                2.0 * np.pi * config.vibrato_rate_hz * k / config.frame_rate
                + config.vibrato_phase
            )
        else:
            base = np.linspace(pitch, pitch + config.declination_st, dur)
            jitter = rng.uniform(-config.jitter_st, config.jitter_st, dur) if config.jitter_st > 0 else 0.0
            contour[seg] = base + jitter
        start += dur
    return contour


def render_mel(frame_pitch: np.ndarray, frame_phones: np.ndarray, speaker_id: int,
               config: CorpusConfig) -> np.ndarray:
    """Build the clean mel for a frame-level pitch contour and phone labels.

    mel[f] = timbre(speaker) + phone_shape(phone at f) + pitch_bump(pitch at f).
    Exactly invertible by the pitch/timbre readouts; observation noise is
    added by the corpus generator, not here.
    """
    frame_pitch = np.asarray(frame_pitch, dtype=np.float64)
    frame_phones = np.asarray(frame_phones)
    if frame_pitch.shape[0] != frame_phones.shape[0]:
        raise ValueError("frame_pitch and frame_phones must have equal length")
    voiced = frame_pitch != UNVOICED
    lo, hi = config.pitch_map_range
    if np.any(frame_pitch[voiced] < lo) or np.any(frame_pitch[voiced] > hi):
        raise ValueError("voiced pitch outside pitch_map_range")

    frames = frame_pitch.shape[0]
    mel = np.zeros((frames, config.mel_dim))
    mel += config.timbre_vector(speaker_id)
    for pid in np.unique(frame_phones):
        mel[frame_phones == pid] += config.phone_vector(int(pid))
    band_lo, band_hi = config.pitch_band
    bins = np.arange(band_lo, band_hi, dtype=np.float64)
    centers = config.bump_center(frame_pitch[voiced])
    bumps = config.bump_amp * np.exp(
        -0.5 * ((bins[None, :] - centers[:, None]) / config.bump_sigma_bins) ** 2
    )
    mel[np.flatnonzero(voiced)[:, None], np.arange(band_lo, band_hi)[None, :]] += bumps
    return mel


def _random_utterance(style_id: int, config: CorpusConfig, rng: np.random.Generator):
    """Draw (phones, durations, phone_pitches) for one utterance."""
    if style_id == STYLE_SING:
        n_lo, n_hi = config.sing_phones_range
        d_lo, d_hi = config.sing_duration_range
        p_lo, p_hi = config.sing_pitch_range
    else:
        n_lo, n_hi = config.speak_phones_range
        d_lo, d_hi = config.speak_duration_range
        p_lo, p_hi = config.speak_pitch_range
    n = int(rng.integers(n_lo, n_hi + 1))
    voiced_ids = np.array(config.voiced_phone_ids)
    unvoiced_ids = np.array(config.unvoiced_phone_ids)
    phones, durations, pitches = [], [], []
    if style_id == STYLE_SING:
        note = float(rng.integers(int(p_lo), int(p_hi) + 1))
    else:
        note = float(rng.uniform(p_lo, p_hi))
    for _ in range(n):
        if len(unvoiced_ids) and rng.random() < config.unvoiced_prob:
            phones.append(int(rng.choice(unvoiced_ids)))
            durations.append(int(rng.integers(*config.unvoiced_duration_range)))
            pitches.append(UNVOICED)
            continue
        phones.append(int(rng.choice(voiced_ids)))
        durations.append(int(rng.integers(d_lo, d_hi + 1)))
        pitches.append(note)
        if style_id == STYLE_SING:
            note = float(np.clip(note + rng.integers(-3, 4), p_lo, p_hi))
        else:
            note = float(np.clip(note + rng.uniform(-1.5, 1.5), p_lo, p_hi))
    return phones, durations, pitches


def _compose_utterance(utt_id, style_id, speaker_id, config, rng,
                       taken=None, max_tries=50) -> Utterance:
    for _ in range(max_tries):
        phones, durations, pitches = _random_utterance(style_id, config, rng)
        key = (tuple(phones), tuple(pitches))
        if taken is None or key not in taken:
            break
    if taken is not None:
        taken.add(key)
    contour = render_frame_pitch(pitches, durations, style_id, config, rng)
    frame_phones = np.repeat(np.asarray(phones), durations)
    mel = render_mel(contour, frame_phones, speaker_id, config)
    mel = mel + rng.normal(0.0, config.noise_std, mel.shape)
    return Utterance(utt_id, phones, durations, pitches, speaker_id, style_id,
                     mel.astype(np.float32))


def generate_corpus(config: CorpusConfig, out_dir, seed: int = None) -> dict:
    """Write train/valid/test manifests plus raw mel files under out_dir.

    Deterministic given the seed. Test-split utterances are guaranteed to
    use phone/pitch sequences absent from the train and valid splits, so
    evaluation songs are genuinely held out.
    """
    if config.utterances_per_speaker < 1:
        raise ValueError("zero utterances requested")
    seed = config.seed if seed is None else seed
    out_dir = Path(out_dir)
    (out_dir / "mels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    n_train = config.utterances_per_speaker - config.n_valid - config.n_test
    split_sizes = {"train": n_train, "valid": config.n_valid, "test": config.n_test}
    rows = {name: [] for name in split_sizes}
    for speaker_id, style_id in enumerate(config.speaker_styles):
        taken = set()
        for split, count in split_sizes.items():
            for i in range(count):
                utt_id = f"s{speaker_id}_{split}_{i:03d}"
                utt = _compose_utterance(utt_id, style_id, speaker_id, config, rng, taken)
                mel_path = f"mels/{utt_id}.f32"
                write_mel(out_dir / mel_path, utt.mel)
                rows[split].append({
                    "utt_id": utt.utt_id,
                    "phones": utt.phones,
                    "durations": utt.durations,
                    "phone_pitches": utt.phone_pitches,
                    "speaker_id": utt.speaker_id,
                    "style_id": utt.style_id,
                    "mel_path": mel_path,
                    "frames": utt.frames,
                    "mel_dim": config.mel_dim,
                })
    manifests = {}
    for split, split_rows in rows.items():
        path = out_dir / f"{split}.jsonl"
        with open(path, "w") as f:
            for row in split_rows:
                f.write(json.dumps(row) + "\n")
        manifests[split] = path
    with open(out_dir / "corpus_config.json", "w") as f:
        json.dump(dataclasses.asdict(config), f, indent=2)
    return manifests


def write_mel(path, mel: np.ndarray) -> None:
    """Raw little-endian float32, row-major [frames x D]; no header."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(mel, dtype="<f4").tofile(path)


def read_mel(path, frames: int, mel_dim: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != frames * mel_dim:
        raise ValueError(f"{path}: expected {frames * mel_dim} floats, found {data.size}")
    return data.reshape(frames, mel_dim)


def load_config(path) -> CorpusConfig:
    with open(path) as f:
        raw = json.load(f)
    for key, value in raw.items():
        if isinstance(value, list):
            raw[key] = tuple(value)
    return CorpusConfig(**raw)


def load_manifest(path, with_mel: bool = True) -> list:
    """Read one JSON-lines manifest; mel paths resolve relative to it."""
    path = Path(path)
    utts = []
    with open(path) as f:
        for line in f:
            row = json.loads(line)
            mel = None
            if with_mel:
                mel = read_mel(path.parent / row["mel_path"], row["frames"], row["mel_dim"])
            utts.append(Utterance(
                row["utt_id"], row["phones"], row["durations"], row["phone_pitches"],
                row["speaker_id"], row["style_id"], mel,
            ))
    return utts
