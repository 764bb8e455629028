"""Static SVG figures: box plots of per-seed values and metric-vs-alpha curves."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COLORS = ["Navy", "Crimson", "mediumseagreen", "darkorchid", "darkorange", "teal"]
FIG_WIDTH = 5.7
FIG_HEIGHT = FIG_WIDTH / 1.618

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "svg.hashsalt": "rome",  # stable element ids
    "svg.fonttype": "path",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def boxplot(groups: Mapping[str, Sequence[float]], path: Path, title: str, ylabel: str) -> Path:
    """One box per label, in mapping order."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(FIG_WIDTH, 0.6 * len(groups)), FIG_HEIGHT))
        labels = list(groups)
        box = ax.boxplot([list(groups[k]) for k in labels], patch_artist=True)
        ax.set_xticks(range(1, len(labels) + 1), labels, rotation=45 if len(labels) > 4 else 0, ha="right" if len(labels) > 4 else "center")
        for k, patch in enumerate(box["boxes"]):
            patch.set_facecolor(COLORS[k % len(COLORS)])
            patch.set_alpha(0.35)
        ax.set_title(title)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        return _save(fig, path)


def lineplot(x: Sequence[float], series: Dict[str, Sequence[float]], path: Path, title: str, xlabel: str, ylabel: str) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(FIG_WIDTH, FIG_HEIGHT))
        for k, (label, ys) in enumerate(series.items()):
            ax.plot(list(x), list(ys), marker="o", color=COLORS[k % len(COLORS)], label=label, linewidth=1.0)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
