"""SVG charts for the verification trend, metric comparisons and sweeps."""
from pathlib import Path
from typing import Dict, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Deterministic SVG ids and no timestamp, so reruns are byte-identical
plt.rcParams["svg.hashsalt"] = "reverb-versa"
plt.rcParams["svg.fonttype"] = "none"
SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata=SVG_METADATA)
    plt.close(fig)


def line_chart(path: Path, series: Dict[str, Sequence[Tuple[float, float]]], title: str,
               xlabel: str, ylabel: str, log_x: bool = False) -> None:
    """One polyline per series of (x, y) points."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, points in series.items():
        if not points:
            continue
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", label=name)
    if log_x:
        ax.set_xscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if series:
        ax.legend()
    _save(fig, path)


def bar_chart(path: Path, groups: Sequence[str], values: Dict[str, Sequence[float]], title: str,
              ylabel: str) -> None:
    """Grouped bars: one group per entry of `groups`, one bar per key of `values`."""
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(groups)), 4))
    x = np.arange(len(groups))
    width = 0.8 / max(1, len(values))
    for k, (name, ys) in enumerate(values.items()):
        ax.bar(x + (k - (len(values) - 1) / 2) * width, ys, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    if values:
        ax.legend()
    _save(fig, path)
