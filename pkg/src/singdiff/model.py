"""Learnable networks: prior encoder, length regulator, and score UNet.

The encoder maps (phones, phone pitches, speaker) to a phone-level mel
prediction; style is deliberately not an input, so the prior is
style-independent by construction. The score network estimates the
gradient of the log-density of noised mels and is the only place the
style embedding enters the model.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .corpus import UNVOICED
from .diffusion import NoiseSchedule, gamma

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    num_phones: int = 12
    num_speakers: int = 3
    num_styles: int = 2
    mel_dim: int = 32
    embed_dim: int = 32
    encoder_hidden: int = 64
    encoder_blocks: int = 4
    base_width: int = 32
    time_embed_dim: int = 64
    pitch_norm_range: tuple = (52.0, 76.0)
    # schedule the score scale is tied to; kept in the checkpoint so a
    # loaded model decodes with the schedule it was trained under
    beta0: float = 0.05
    beta1: float = 20.0

    @classmethod
    def from_corpus(cls, corpus_config, **overrides):
        return cls(
            num_phones=corpus_config.num_phones,
            num_speakers=corpus_config.num_speakers,
            mel_dim=corpus_config.mel_dim,
            pitch_norm_range=tuple(corpus_config.pitch_map_range),
            **overrides,
        )


def length_regulate(mu_phone: torch.Tensor, durations) -> torch.Tensor:
    """Repeat row i of mu_phone durations[i] times (phone -> frame rate)."""
    durations = torch.as_tensor(durations, dtype=torch.long, device=mu_phone.device)
    if durations.ndim != 1 or durations.shape[0] != mu_phone.shape[0]:
        raise ValueError(
            f"need one duration per phone row, got {tuple(durations.shape)} "
            f"for {mu_phone.shape[0]} phones"
        )
    if (durations < 1).any():
        raise ValueError("durations must be >= 1")
    return torch.repeat_interleave(mu_phone, durations, dim=0)


def phone_average(mel: torch.Tensor, durations) -> torch.Tensor:
    """Replace every frame by the mean over its phone's frames.

    Idempotent, and equal to length_regulate applied to per-phone means.
    """
    durations = torch.as_tensor(durations, dtype=torch.long, device=mel.device)
    if (durations < 1).any():
        raise ValueError("durations must be >= 1")
    if int(durations.sum()) != mel.shape[0]:
        raise ValueError(
            f"sum(durations)={int(durations.sum())} != frames={mel.shape[0]}"
        )
    seg = torch.repeat_interleave(
        torch.arange(durations.shape[0], device=mel.device), durations
    )
    sums = torch.zeros(durations.shape[0], mel.shape[1], dtype=mel.dtype, device=mel.device)
    sums.index_add_(0, seg, mel)
    means = sums / durations.unsqueeze(1).to(mel.dtype)
    return torch.repeat_interleave(means, durations, dim=0)


class SinusoidalTimeEmbedding(nn.Module):
    """Classic sin/cos embedding of the (scaled) diffusion time."""

    def __init__(self, dim: int, scale: float = 1000.0):
        super().__init__()
        self.dim = dim
        self.scale = scale

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / (half - 1)
        )
        args = self.scale * t[:, None] * freqs[None, :]
        return torch.cat([args.sin(), args.cos()], dim=-1)


class Encoder(nn.Module):
    """Phone-resolution prior network; no style input by design."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.encoder_hidden
        self.phone_emb = nn.Embedding(cfg.num_phones, h)
        self.pitch_proj = nn.Linear(2, h)
        self.speaker_proj = nn.Linear(cfg.embed_dim, h)
        self.blocks = nn.ModuleList()
        for _ in range(cfg.encoder_blocks):
            self.blocks.append(nn.ModuleDict({
                "norm": nn.LayerNorm(h),
                "conv": nn.Conv1d(h, h, kernel_size=3, padding=1),
            }))
        self.out_norm = nn.LayerNorm(h)
        self.out = nn.Linear(h, cfg.mel_dim)

    def forward(self, phones: torch.Tensor, phone_pitches: torch.Tensor,
                speaker_embedding: torch.Tensor) -> torch.Tensor:
        lo, hi = self.cfg.pitch_norm_range
        voiced = (phone_pitches != UNVOICED).to(phone_pitches.dtype)
        norm_pitch = (phone_pitches - lo) / (hi - lo) * voiced
        pitch_feat = torch.stack([norm_pitch, voiced], dim=-1)
        x = self.phone_emb(phones) + self.pitch_proj(pitch_feat.to(self.out.weight.dtype))
        x = x + self.speaker_proj(speaker_embedding)[None, :]
        for block in self.blocks:
            y = block["norm"](x).transpose(0, 1)[None]      # [1, H, P]
            y = F.gelu(block["conv"](y))[0].transpose(0, 1)  # [P, H]
            x = x + y
        return self.out(self.out_norm(x))


class ResBlock(nn.Module):
    """Pre-activation residual block, deliberately normalization-free.

    The noise-recovery map the net must represent is close to linear in
    x_t, and activation norms would strip the amplitude information that
    the reverse iteration relies on to stay contractive."""

    def __init__(self, channels: int, time_dim: int, embed_dim: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1)
        self.t_proj = nn.Linear(time_dim, channels)
        self.s_proj = nn.Linear(embed_dim, channels)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)

    def forward(self, x, temb, semb):
        h = self.conv1(F.silu(x))
        h = h + self.t_proj(temb)[:, :, None] + self.s_proj(semb)[:, :, None]
        h = self.conv2(F.silu(h))
        return x + h


class ScoreUNet(nn.Module):
    """1-D UNet over time; mel bins are channels, three time resolutions.

    Conditioning: the current estimate x_t and the frame-level prior are
    concatenated on the channel axis; projected style and time embeddings
    are broadcast-added inside every residual block.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.base_width
        widths = (w, 2 * w, 3 * w)
        td, ed = cfg.time_embed_dim, cfg.embed_dim
        self.time_emb = SinusoidalTimeEmbedding(td)
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.stem = nn.Conv1d(3 * cfg.mel_dim, widths[0], 3, padding=1)
        self.enc0 = ResBlock(widths[0], td, ed)
        self.down0 = nn.Conv1d(widths[0], widths[1], 3, stride=2, padding=1)
        self.enc1 = ResBlock(widths[1], td, ed)
        self.down1 = nn.Conv1d(widths[1], widths[2], 3, stride=2, padding=1)
        self.mid1 = ResBlock(widths[2], td, ed)
        self.mid2 = ResBlock(widths[2], td, ed)
        self.up1 = nn.Conv1d(widths[2], widths[1], 3, padding=1)
        self.fuse1 = nn.Conv1d(2 * widths[1], widths[1], 1)
        self.dec1 = ResBlock(widths[1], td, ed)
        self.up0 = nn.Conv1d(widths[1], widths[0], 3, padding=1)
        self.fuse0 = nn.Conv1d(2 * widths[0], widths[0], 1)
        self.dec0 = ResBlock(widths[0], td, ed)
        self.head = nn.Conv1d(widths[0], cfg.mel_dim, 3, padding=1)
        # small head init keeps early scores near zero without severing
        # the conditioning paths entirely
        with torch.no_grad():
            self.head.weight.mul_(0.1)
            self.head.bias.zero_()

    def forward(self, x_t: torch.Tensor, mu: torch.Tensor, style_embedding: torch.Tensor,
                t: torch.Tensor, scaled_residual: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(self.time_emb(t))
        semb = style_embedding
        # (x_t - mu)/sqrt(1-gamma^2) carries the injected noise at unit
        # scale for every t, so the gain the denoiser needs is built in
        h = torch.cat([x_t, mu, scaled_residual], dim=-1).transpose(1, 2)  # [B, 3D, F]
        h = self.stem(h)
        s0 = self.enc0(h, temb, semb)
        h = self.down0(s0)
        s1 = self.enc1(h, temb, semb)
        h = self.down1(s1)
        h = self.mid2(self.mid1(h, temb, semb), temb, semb)
        h = self.up1(F.interpolate(h, size=s1.shape[-1], mode="nearest"))
        h = self.dec1(self.fuse1(torch.cat([h, s1], dim=1)), temb, semb)
        h = self.up0(F.interpolate(h, size=s0.shape[-1], mode="nearest"))
        h = self.dec0(self.fuse0(torch.cat([h, s0], dim=1)), temb, semb)
        return self.head(F.silu(h)).transpose(1, 2)


class AcousticModel(nn.Module):
    """Encoder + score network + separate speaker/style embedding tables."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.speaker_table = nn.Embedding(cfg.num_speakers, cfg.embed_dim)
        self.style_table = nn.Embedding(cfg.num_styles, cfg.embed_dim)
        self.encoder = Encoder(cfg)
        self.score_net = ScoreUNet(cfg)

    def _device(self):
        return self.speaker_table.weight.device

    def _dtype(self):
        return self.speaker_table.weight.dtype

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.cfg.beta0, self.cfg.beta1)

    def encode(self, phones, phone_pitches, speaker_id: int) -> torch.Tensor:
        """Phone-level mel prior [num_phones x D]; no style input."""
        phones = torch.as_tensor(phones, dtype=torch.long, device=self._device())
        pitches = torch.as_tensor(phone_pitches, dtype=self._dtype(), device=self._device())
        if phones.shape != pitches.shape or phones.ndim != 1:
            raise ValueError("phones and phone_pitches must be equal-length 1-D sequences")
        if phones.numel() and (phones.min() < 0 or phones.max() >= self.cfg.num_phones):
            raise ValueError(f"phone id out of range [0, {self.cfg.num_phones})")
        if not 0 <= speaker_id < self.cfg.num_speakers:
            raise ValueError(f"speaker_id {speaker_id} out of range")
        spk = self.speaker_table.weight[speaker_id]
        return self.encoder(phones, pitches, spk)

    def score(self, x_t: torch.Tensor, mu_frame: torch.Tensor, style_id, t) -> torch.Tensor:
        """Score estimate with the same shape as x_t.

        Accepts [frames x D] with scalar style/t, or [B x frames x D] with
        per-sample style ids and times.
        """
        if x_t.shape != mu_frame.shape:
            raise ValueError(f"x_t {tuple(x_t.shape)} != mu_frame {tuple(mu_frame.shape)}")
        squeeze = x_t.ndim == 2
        if squeeze:
            x_t, mu_frame = x_t[None], mu_frame[None]
        style_id = torch.as_tensor(style_id, dtype=torch.long, device=self._device()).reshape(-1)
        if style_id.numel() == 1 and x_t.shape[0] > 1:
            style_id = style_id.expand(x_t.shape[0])
        if (style_id < 0).any() or (style_id >= self.cfg.num_styles).any():
            raise ValueError("style_id out of range")
        t_np = np.asarray(t, dtype=np.float64).reshape(-1)
        if t_np.size == 1 and x_t.shape[0] > 1:
            t_np = np.repeat(t_np, x_t.shape[0])
        if (t_np <= 0).any() or (t_np > 1).any():
            raise ValueError(f"t must lie in (0, 1], got {t}")
        t_torch = torch.as_tensor(t_np, dtype=x_t.dtype, device=self._device())
        # the network models the injected noise; the score's 1/sqrt(var)
        # magnitude is applied analytically so the output stays O(1) at
        # every diffusion time
        lam = 1.0 - gamma(0.0, t_np, self.schedule()) ** 2
        scale = torch.as_tensor(np.sqrt(lam).reshape(-1, 1, 1),
                                dtype=x_t.dtype, device=self._device())
        raw = self.score_net(x_t, mu_frame, self.style_table(style_id), t_torch,
                             (x_t - mu_frame) / scale)
        out = -raw / scale
        return out[0] if squeeze else out


def save_checkpoint(path, model: AcousticModel, q_net=None, extra: dict = None) -> None:
    """Versioned container with every parameter tensor plus run metadata."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": dataclasses.asdict(model.cfg),
        "model_state": model.state_dict(),
    }
    if q_net is not None:
        payload["q_state"] = q_net.state_dict()
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path):
    """Returns (model, payload); the model is rebuilt from the stored config."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
    raw = dict(payload["model_config"])
    raw["pitch_norm_range"] = tuple(raw["pitch_norm_range"])
    model = AcousticModel(ModelConfig(**raw))
    model.load_state_dict(payload["model_state"])
    return model, payload
