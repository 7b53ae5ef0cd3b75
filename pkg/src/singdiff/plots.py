"""Static inspection plots: greyscale mel rasters and pitch contour lines."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import UNVOICED


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_mel(mel: np.ndarray, path, title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(4.0, mel.shape[0] / 60.0), 3.0))
    ax.imshow(np.asarray(mel).T, aspect="auto", origin="lower", cmap="gray_r",
              interpolation="nearest")
    ax.set_xlabel("frame")
    ax.set_ylabel("mel bin")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_pitch(contours: dict, path, frame_rate: float = 100.0, title: str = "") -> Path:
    """Overlaid pitch contours; unvoiced frames are left as gaps."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    for label, contour in contours.items():
        contour = np.asarray(contour, dtype=np.float64).copy()
        contour[contour == UNVOICED] = np.nan
        ax.plot(np.arange(len(contour)) / frame_rate, contour, label=label, linewidth=1.0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("pitch (st)")
    if title:
        ax.set_title(title)
    if contours:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
