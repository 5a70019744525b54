"""Figures for the CLI report path: interpolation montages and convergence curves."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .images import to_uint8  # noqa: E402

CELL_INCHES = 1.8
DPI = 100


def montage(cells: Sequence, rows: int, cols: int, path, ratios=None, endpoint_labels=None, title=None) -> Path:
    """rows x cols grid of images; endpoint labels go on the matching corners.

    With two endpoints the labels sit over the first and last cell; with four
    they sit on the corners in (top-left, top-right, bottom-left, bottom-right)
    order. Other counts are listed in the figure title.
    """
    if len(cells) != rows * cols:
        raise ValueError(f"{len(cells)} cells do not fill a {rows}x{cols} grid")
    fig, axes = plt.subplots(rows, cols, figsize=(cols * CELL_INCHES, rows * CELL_INCHES + 0.4), squeeze=False)
    for k, ax in enumerate(axes.flat):
        ax.imshow(to_uint8(cells[k]), interpolation="nearest")
        ax.set_xticks([])
        ax.set_yticks([])
        if ratios is not None:
            ax.set_xlabel(" ".join(f"{r:.2f}" for r in ratios[k]), fontsize=7)

    labels = list(endpoint_labels or [])
    corners = []
    if len(labels) == 2:
        corners = [(0, 0), (rows - 1, cols - 1)]
    elif len(labels) == 4:
        corners = [(0, 0), (0, cols - 1), (rows - 1, 0), (rows - 1, cols - 1)]
    for (i, j), text in zip(corners, labels):
        axes[i, j].set_title(_short(text), fontsize=8, color="firebrick")
    if title or (labels and not corners):
        fig.suptitle(title or " | ".join(_short(t) for t in labels), fontsize=9)

    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def convergence(traces, path, labels=None) -> Path:
    """L_sty against step for each inversion run, initialization at step -1."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for k, trace in enumerate(traces):
        steps = [-1] + [s for s, _ in trace.per_step]
        values = [trace.init_loss] + [v for _, v in trace.per_step]
        ax.plot(steps, values, marker=".", lw=1, label=labels[k] if labels else f"run {k}")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("step")
    ax.set_ylabel("L_sty")
    ax.grid(alpha=0.3)
    if traces:
        ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def _short(text: str, n: int = 28) -> str:
    return text if len(text) <= n else text[: n - 3] + "..."
