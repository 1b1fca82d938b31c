"""
SVG plots for loss curves, stability traces and shot sweeps.

Figures are written with a fixed hash salt and no date metadata so that the
same data gives the same file.
"""

import logging
from pathlib import Path
from typing import Dict, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from taftseg import __version__  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

STYLE = {
    "svg.hashsalt": "taftseg",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (6.0, 3.5),
    "lines.linewidth": 1.2,
}


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": f"taftseg {__version__}"})
    plt.close(fig)
    logger.debug(f"Plot written to {path}")
    return path


def plot_losses(episodes: Sequence[int], series: Dict[str, Sequence[float]], path: PathLike) -> Path:
    """One line per loss, window means against episode number."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, values in series.items():
            ax.plot(list(episodes), list(values), label=label)
        ax.set_xlabel("episode")
        ax.set_ylabel("loss (window mean)")
        ax.legend(loc="upper right")
        fig.tight_layout()
        return _save(fig, path)


def plot_stability(episodes: Sequence[int], series: Dict[str, Sequence[float]], path: PathLike) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, values in series.items():
            ax.plot(list(episodes), list(values), label=label, alpha=0.8)
        ax.set_yscale("symlog", linthresh=1e-3)
        ax.set_xlabel("episode")
        ax.set_ylabel("change (%)")
        ax.legend(loc="upper right")
        fig.tight_layout()
        return _save(fig, path)


def plot_shot_sweep(shots: Sequence[int], miou: Sequence[float], path: PathLike) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(list(shots), [100.0 * v for v in miou], marker="o")
        ax.set_xticks(list(shots))
        ax.set_xlabel("shots")
        ax.set_ylabel("mIoU (%)")
        fig.tight_layout()
        return _save(fig, path)
