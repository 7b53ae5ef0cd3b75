"""Shared fixtures.

The trained-model fixture is the expensive one: it generates the full
default corpus and runs a complete training. Set SINGDIFF_TEST_CACHE to
a directory to reuse the run across test sessions."""
import json
import os
import time
from pathlib import Path

import pytest
import torch

from singdiff.corpus import CorpusConfig, generate_corpus, load_config
from singdiff.training import TrainConfig, train

torch.set_num_threads(min(4, os.cpu_count() or 1))

TRAIN_STEPS = 8000
CORPUS_SEED = 11
TRAIN_SEED = 1


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("corpus") / "tiny"
    cfg = CorpusConfig(utterances_per_speaker=14, n_valid=2, n_test=2)
    generate_corpus(cfg, out, seed=5)
    return out


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory) -> dict:
    cache = os.environ.get("SINGDIFF_TEST_CACHE")
    base = Path(cache) if cache else tmp_path_factory.mktemp("trained")
    corpus_dir = base / "corpus"
    run_dir = base / "run"
    checkpoint = run_dir / "checkpoint_final.pt"
    if not checkpoint.exists():
        generate_corpus(CorpusConfig(), corpus_dir, seed=CORPUS_SEED)
        config = TrainConfig(corpus_dir=str(corpus_dir), out_dir=str(run_dir),
                             total_steps=TRAIN_STEPS, val_every=200, seed=TRAIN_SEED)
        t0 = time.perf_counter()
        train(config)
        with open(run_dir / "train_wall_seconds.json", "w") as f:
            json.dump({"seconds": time.perf_counter() - t0}, f)
    return {
        "corpus_dir": corpus_dir,
        "run_dir": run_dir,
        "checkpoint": checkpoint,
        "corpus_config": load_config(corpus_dir / "corpus_config.json"),
    }
