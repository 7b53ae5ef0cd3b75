"""Training loop: batch assembly, the alternating q/main update, logging.

Every stochastic choice in a step (utterance picks, crop offsets, diffusion
times, noise) is drawn from a generator seeded by (run seed, step index),
so resuming from a checkpoint replays the exact trajectory of an
uninterrupted run.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import diffusion
from .corpus import load_config, load_manifest
from .mi import VariationalApprox, update_q, vclub_estimate
from .model import (AcousticModel, ModelConfig, length_regulate, phone_average,
                    save_checkpoint)

METRICS_HEADER = "step,l_mu,l_diff,l_mi,l_total,q_loglik"


@dataclass(frozen=True)
class TrainConfig:
    corpus_dir: str = "corpus"
    out_dir: str = "run"
    beta0: float = 0.05
    beta1: float = 20.0
    t_min: float = 1e-5
    lambda_mi: float = 0.01
    lr_main: float = 1e-3
    lr_embed: float = 1e-4
    lr_q: float = 1e-3
    batch_size: int = 16
    max_frames: int = 384
    total_steps: int = 8000
    seed: int = 0
    checkpoint_every: int = 2000
    val_every: int = 200
    w_mu: float = 1.0
    w_diff: float = 1.0
    embed_dim: int = 32
    encoder_hidden: int = 64
    encoder_blocks: int = 4
    base_width: int = 32

    def __post_init__(self):
        if self.lambda_mi < 0:
            raise ValueError("lambda_mi must be >= 0")
        if self.lambda_mi > 0 and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when lambda_mi > 0")
        if self.total_steps < 1 or self.batch_size < 1 or self.max_frames < 1:
            raise ValueError("total_steps, batch_size and max_frames must be >= 1")

    def schedule(self) -> diffusion.NoiseSchedule:
        return diffusion.NoiseSchedule(self.beta0, self.beta1, self.t_min)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(dataclasses.asdict(self), f, indent=2)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls(**json.load(f))


@dataclass
class CropSample:
    phones: list
    durations: list
    phone_pitches: list
    speaker_id: int
    style_id: int
    mel: np.ndarray


def crop_utterance(utt, start: int, length: int) -> CropSample:
    """Contiguous frame window with phone boundaries clipped to it."""
    ends = np.cumsum(utt.durations)
    begins = ends - np.asarray(utt.durations)
    stop = start + length
    keep = np.flatnonzero((begins < stop) & (ends > start))
    durations = [int(min(ends[i], stop) - max(begins[i], start)) for i in keep]
    return CropSample(
        phones=[utt.phones[i] for i in keep],
        durations=durations,
        phone_pitches=[utt.phone_pitches[i] for i in keep],
        speaker_id=utt.speaker_id,
        style_id=utt.style_id,
        mel=utt.mel[start:stop],
    )


def sample_batch(utterances, batch_size: int, max_frames: int,
                 rng: np.random.Generator) -> list:
    """Random crops of one shared length <= max_frames (no padding needed)."""
    idx = rng.integers(0, len(utterances), batch_size)
    chosen = [utterances[i] for i in idx]
    crop_len = min(max_frames, min(u.frames for u in chosen))
    batch = []
    for u in chosen:
        start = int(rng.integers(0, u.frames - crop_len + 1))
        batch.append(crop_utterance(u, start, crop_len))
    return batch


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


def train_step(model: AcousticModel, q: VariationalApprox, batch, config: TrainConfig,
               optimizer, q_optimizer, rng: np.random.Generator) -> dict:
    """One alternating update: q likelihood ascent, then the main objective."""
    schedule = config.schedule()
    spk_ids = torch.tensor([b.speaker_id for b in batch], dtype=torch.long)
    sty_ids = torch.tensor([b.style_id for b in batch], dtype=torch.long)

    with torch.no_grad():
        spk_e = model.speaker_table(spk_ids)
        sty_e = model.style_table(sty_ids)
    q_ll = update_q(q, spk_e, sty_e, q_optimizer)

    mu_frames, targets, mels = [], [], []
    for b in batch:
        mu_phone = model.encode(b.phones, b.phone_pitches, b.speaker_id)
        mu_frames.append(length_regulate(mu_phone, b.durations))
        mel = torch.as_tensor(b.mel, dtype=torch.float32)
        mels.append(mel)
        with torch.no_grad():
            targets.append(phone_average(mel, b.durations))
    mu_frame = torch.stack(mu_frames)
    x0 = torch.stack(mels)
    target = torch.stack(targets)

    l_mu = torch.mean((mu_frame - target) ** 2)

    t = rng.uniform(schedule.t_min, 1.0, len(batch))
    noise = torch.as_tensor(rng.standard_normal(x0.shape), dtype=torch.float32)
    x_t = diffusion.forward_marginal(x0, mu_frame, t, noise, schedule)
    score_pred = model.score(x_t, mu_frame, sty_ids, t)
    l_diff = diffusion.diffusion_loss(score_pred, noise, t, schedule)

    l_mi = vclub_estimate(q, model.speaker_table(spk_ids), model.style_table(sty_ids))
    l_total = config.w_mu * l_mu + config.w_diff * l_diff + config.lambda_mi * l_mi

    if not torch.isfinite(l_total):
        raise RuntimeError(
            "non-finite loss: "
            f"l_mu={l_mu.item()}, l_diff={l_diff.item()}, l_mi={l_mi.item()}"
        )
    optimizer.zero_grad()
    l_total.backward()
    optimizer.step()
    metrics = {"l_mu": l_mu.item(), "l_diff": l_diff.item(), "l_mi": l_mi.item(),
               "q_loglik": q_ll}
    # logged total is the float64 sum of the logged parts, so the additivity
    # of the log holds exactly even when one term dominates
    metrics["l_total"] = (config.w_mu * metrics["l_mu"]
                          + config.w_diff * metrics["l_diff"]
                          + config.lambda_mi * metrics["l_mi"])
    return metrics


def validation_l_mu(model: AcousticModel, utterances) -> float:
    """Prior MSE against phone-averaged mels over full utterances."""
    losses = []
    with torch.no_grad():
        for u in utterances:
            mu = length_regulate(model.encode(u.phones, u.phone_pitches, u.speaker_id),
                                 u.durations)
            mel = torch.as_tensor(u.mel, dtype=torch.float32)
            losses.append(float(torch.mean((mu - phone_average(mel, u.durations)) ** 2)))
    return float(np.mean(losses))


def make_optimizer(model: AcousticModel, config: TrainConfig) -> torch.optim.Optimizer:
    """Networks learn at lr_main; the embedding tables move at lr_embed.

    Keeping the tables slow protects the style table from the
    mutual-information term, whose global minimum is a collapsed table:
    the decoder must learn to rely on style before the penalty can erase
    the distinction.
    """
    table_params = list(model.speaker_table.parameters()) + list(model.style_table.parameters())
    table_ids = {id(p) for p in table_params}
    rest = [p for p in model.parameters() if id(p) not in table_ids]
    return torch.optim.Adam([
        {"params": rest, "lr": config.lr_main},
        {"params": table_params, "lr": config.lr_embed},
    ])


def build_model(config: TrainConfig, corpus_config) -> AcousticModel:
    torch.manual_seed(config.seed)
    cfg = ModelConfig.from_corpus(
        corpus_config,
        embed_dim=config.embed_dim,
        encoder_hidden=config.encoder_hidden,
        encoder_blocks=config.encoder_blocks,
        base_width=config.base_width,
        beta0=config.beta0,
        beta1=config.beta1,
    )
    return AcousticModel(cfg)


def train(config: TrainConfig, resume_from=None) -> Path:
    """Full run; returns the path of the final checkpoint.

    Writes metrics.csv (one row per step), val_metrics.csv, periodic
    checkpoints, and checkpoint_final.pt under config.out_dir.
    """
    corpus_dir = Path(config.corpus_dir)
    if not (corpus_dir / "train.jsonl").exists():
        raise FileNotFoundError(f"corpus manifest not found: {corpus_dir / 'train.jsonl'}")
    corpus_config = load_config(corpus_dir / "corpus_config.json")
    train_utts = load_manifest(corpus_dir / "train.jsonl")
    valid_utts = load_manifest(corpus_dir / "valid.jsonl")

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "train_config.json")

    model = build_model(config, corpus_config)
    q = VariationalApprox(config.embed_dim)
    optimizer = make_optimizer(model, config)
    q_optimizer = torch.optim.Adam(q.parameters(), lr=config.lr_q)

    start_step = 0
    if resume_from is not None:
        payload = torch.load(resume_from, map_location="cpu", weights_only=False)
        model.load_state_dict(payload["model_state"])
        q.load_state_dict(payload["q_state"])
        optimizer.load_state_dict(payload["extra"]["optimizer_state"])
        q_optimizer.load_state_dict(payload["extra"]["q_optimizer_state"])
        start_step = payload["extra"]["step"]

    def checkpoint_extra(step):
        return {
            "step": step,
            "optimizer_state": optimizer.state_dict(),
            "q_optimizer_state": q_optimizer.state_dict(),
            "train_config": dataclasses.asdict(config),
            "corpus_config": dataclasses.asdict(corpus_config),
        }

    metrics_path = out_dir / "metrics.csv"
    val_path = out_dir / "val_metrics.csv"
    mode = "a" if start_step > 0 else "w"
    with open(metrics_path, mode) as mf, open(val_path, mode) as vf:
        if start_step == 0:
            mf.write(METRICS_HEADER + "\n")
            vf.write("step,val_l_mu\n")
        for step in range(start_step, config.total_steps):
            rng = _step_rng(config.seed, step)
            batch = sample_batch(train_utts, config.batch_size, config.max_frames, rng)
            metrics = train_step(model, q, batch, config, optimizer, q_optimizer, rng)
            mf.write("{step},{l_mu:.8g},{l_diff:.8g},{l_mi:.8g},{l_total:.8g},{q_loglik:.8g}\n"
                     .format(step=step + 1, **metrics))
            done = step + 1
            if done % config.val_every == 0 or done == config.total_steps:
                vf.write(f"{done},{validation_l_mu(model, valid_utts):.8g}\n")
                vf.flush()
            if done % config.checkpoint_every == 0 and done < config.total_steps:
                save_checkpoint(out_dir / f"checkpoint_{done:06d}.pt", model, q,
                                checkpoint_extra(done))
            mf.flush()
    final = out_dir / "checkpoint_final.pt"
    save_checkpoint(final, model, q, checkpoint_extra(config.total_steps))
    return final
