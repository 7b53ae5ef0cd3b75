"""Command line entry point: gen-corpus | train | synth | eval | plot.

Every command is reproducible from its config/request file alone; flags
are overrides. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np


@click.group()
def cli():
    """Diffusion-based singing-style synthesis on a synthetic mel corpus."""


@cli.command("gen-corpus")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Corpus config JSON; defaults are used when omitted.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def gen_corpus_cmd(config_path, out_dir, seed):
    """Generate the three-speaker corpus (manifests + raw mel files)."""
    from .corpus import CorpusConfig, generate_corpus, load_config

    config = load_config(config_path) if config_path else CorpusConfig()
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    manifests = generate_corpus(config, out_dir)
    for split, path in manifests.items():
        click.echo(f"{split}: {path}")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(), required=True,
              help="Train config JSON.")
@click.option("--corpus-dir", type=click.Path(), default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--total-steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resume", "resume_from", type=click.Path(), default=None,
              help="Checkpoint to resume from.")
def train_cmd(config_path, corpus_dir, out_dir, total_steps, seed, resume_from):
    """Train the prior encoder and diffusion decoder."""
    from .training import TrainConfig, train

    config = TrainConfig.load(config_path)
    overrides = {k: v for k, v in [("corpus_dir", corpus_dir), ("out_dir", out_dir),
                                   ("total_steps", total_steps), ("seed", seed)]
                 if v is not None}
    if overrides:
        config = dataclasses.replace(config, **overrides)
    if resume_from and not Path(resume_from).exists():
        raise click.ClickException(f"checkpoint not found: {resume_from}")
    final = train(config, resume_from=resume_from)
    click.echo(f"final checkpoint: {final}")


def _load_model(checkpoint):
    from .corpus import CorpusConfig
    from .model import load_checkpoint

    if not Path(checkpoint).exists():
        raise click.ClickException(f"checkpoint not found: {checkpoint}")
    model, payload = load_checkpoint(checkpoint)
    raw = payload.get("extra", {}).get("corpus_config")
    corpus_config = None
    if raw is not None:
        raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        corpus_config = CorpusConfig(**raw)
    return model, corpus_config


@cli.command("synth")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--request", "request_path", type=click.Path(), required=True,
              help="Request JSON: phones, phone_pitches, durations, speaker, style, seed, n_steps.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output mel path (raw little-endian float32).")
@click.option("--n-steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
def synth_cmd(checkpoint, request_path, out_path, n_steps, seed):
    """Synthesize one request; writes the mel plus a JSON metrics sidecar."""
    from .analysis import UndefinedResult, pitch_readout, timbre_match, vibrato_index
    from .corpus import UNVOICED, write_mel
    from .synthesis import SynthRequest, synthesize

    model, corpus_config = _load_model(checkpoint)
    request = SynthRequest.from_json(request_path)
    overrides = {k: v for k, v in [("n_steps", n_steps), ("seed", seed)] if v is not None}
    if overrides:
        request = dataclasses.replace(request, **overrides)
    mel = synthesize(request, model)
    write_mel(out_path, mel)
    sidecar = {
        "frames": int(mel.shape[0]),
        "mel_dim": int(mel.shape[1]),
        "n_steps": request.n_steps,
        "mode": request.mode,
        "seed": request.seed,
    }
    if corpus_config is not None:
        contour = pitch_readout(mel, corpus_config)
        sidecar["voiced_fraction"] = float((contour != UNVOICED).mean())
        sidecar["timbre_match"] = timbre_match(mel, request.speaker_id, corpus_config)
        try:
            sidecar["vibrato_index"] = vibrato_index(contour, corpus_config.frame_rate)
        except UndefinedResult:
            sidecar["vibrato_index"] = None
    sidecar_path = Path(out_path).with_suffix(".json")
    with open(sidecar_path, "w") as f:
        json.dump(sidecar, f, indent=2)
    click.echo(f"mel: {out_path}\nmetrics: {sidecar_path}")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--corpus-dir", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--speaker", type=int, default=1, help="Target speaker id.")
@click.option("--n-steps", type=int, default=10)
@click.option("--seed", type=int, default=0)
def eval_cmd(checkpoint, corpus_dir, out_path, speaker, n_steps, seed):
    """Run the objective metric suite on the held-out songs."""
    from .corpus import STYLE_SING, load_manifest
    from .synthesis import evaluate_songs, write_report

    model, corpus_config = _load_model(checkpoint)
    test_path = Path(corpus_dir) / "test.jsonl"
    if not test_path.exists():
        raise click.ClickException(f"test manifest not found: {test_path}")
    songs = [u for u in load_manifest(test_path) if u.style_id == STYLE_SING]
    report = evaluate_songs(model, corpus_config, songs, target_speaker=speaker,
                            n_steps=n_steps, seed=seed)
    write_report(report, out_path)
    click.echo(json.dumps({k: report[k] for k in
                           ("f0_mae", "vibrato_index", "timbre_match")}, indent=2))
    click.echo(f"report: {out_path}")


@cli.command("plot")
@click.option("--corpus-dir", type=click.Path(), default=None)
@click.option("--split", type=str, default="test")
@click.option("--utt-id", type=str, default=None)
@click.option("--mel", "mel_path", type=click.Path(), default=None,
              help="Raw mel file (needs --mel-dim) as an alternative to --corpus-dir.")
@click.option("--mel-dim", type=int, default=32)
@click.option("--out-dir", type=click.Path(), required=True)
def plot_cmd(corpus_dir, split, utt_id, mel_path, mel_dim, out_dir):
    """Render mel rasters and pitch contours to PNG files."""
    from .analysis import pitch_readout
    from .corpus import load_config, load_manifest
    from .plots import plot_mel, plot_pitch

    out_dir = Path(out_dir)
    if mel_path is not None:
        data = np.fromfile(mel_path, dtype="<f4")
        if data.size % mel_dim:
            raise click.ClickException(f"{mel_path}: size not divisible by mel_dim={mel_dim}")
        mel = data.reshape(-1, mel_dim)
        name = Path(mel_path).stem
        click.echo(str(plot_mel(mel, out_dir / f"{name}_mel.png", title=name)))
        return
    if corpus_dir is None:
        raise click.UsageError("provide either --corpus-dir or --mel")
    config = load_config(Path(corpus_dir) / "corpus_config.json")
    utts = load_manifest(Path(corpus_dir) / f"{split}.jsonl")
    if utt_id is not None:
        utts = [u for u in utts if u.utt_id == utt_id]
        if not utts:
            raise click.ClickException(f"utterance not found: {utt_id}")
    for u in utts:
        contour = pitch_readout(u.mel, config)
        click.echo(str(plot_mel(u.mel, out_dir / f"{u.utt_id}_mel.png", title=u.utt_id)))
        click.echo(str(plot_pitch(
            {"readout": contour, "score": u.frame_pitch_targets()},
            out_dir / f"{u.utt_id}_pitch.png", frame_rate=config.frame_rate,
            title=u.utt_id)))


def main(argv=None) -> int:
    """Exit 0 on success, 1 on usage errors, 2 on runtime failures."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        e.show(file=sys.stderr)
        return 1
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure of any command
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
