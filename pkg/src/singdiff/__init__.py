"""Singing-style transfer on a synthetic mel domain.

A phone-level encoder predicts a style-free mel prior from phones, note
pitches, and speaker identity; a style-conditioned score network restores
the full mel through a reverse diffusion process, decoded in few steps by
a maximum-likelihood SDE solver. Speaker and style embeddings are kept
disentangled with a variational mutual-information penalty. The corpus is
procedurally generated with disjoint pitch/timbre bands so pitch accuracy,
vibrato presence, and timbre identity are all exactly measurable.
"""
from .corpus import STYLE_SING, STYLE_SPEAK, UNVOICED, CorpusConfig, Utterance, generate_corpus
from .diffusion import EULER_ODE, FAST_ML, NoiseSchedule
from .model import AcousticModel, ModelConfig, load_checkpoint, save_checkpoint
from .synthesis import SynthRequest, synthesize
from .training import TrainConfig, train

__all__ = [
    "STYLE_SING", "STYLE_SPEAK", "UNVOICED", "CorpusConfig", "Utterance",
    "generate_corpus", "EULER_ODE", "FAST_ML", "NoiseSchedule",
    "AcousticModel", "ModelConfig", "load_checkpoint", "save_checkpoint",
    "SynthRequest", "synthesize", "TrainConfig", "train",
]
