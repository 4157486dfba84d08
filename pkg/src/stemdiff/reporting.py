"""Delimited report files and the matplotlib figures rendered next to them."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_curve_figure(trace: list[dict], path: str | Path, title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in trace]
    for key in trace[0]:
        if key == "epoch":
            continue
        ax.plot(epochs, [row[key] for row in trace], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def stem_bar_figure(
    per_stem: dict[str, list[float]],
    stem_names,
    path: str | Path,
    ylabel: str,
    title: str,
) -> Path:
    """Grouped bars: one group per stem, one bar per labelled series."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(stem_names))
    width = 0.8 / max(len(per_stem), 1)
    for i, (label, values) in enumerate(per_stem.items()):
        ax.bar(x + i * width, values, width, label=label)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(stem_names)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def subset_bar_figure(labels: list[str], values: list[float], path: str | Path,
                      title: str = "arrangement FAD by given subset") -> Path:
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(len(labels)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("FAD (toy embedder)")
    ax.set_title(title)
    return _save(fig, path)


def mel_grid_figure(mels: dict[str, np.ndarray], path: str | Path,
                    title: str = "log-Mel spectrograms") -> Path:
    """One panel per labelled [T, F] log-Mel array."""
    n = len(mels)
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.2 * n), squeeze=False)
    for ax, (label, mel) in zip(axes[:, 0], mels.items()):
        im = ax.imshow(mel.T, origin="lower", aspect="auto", cmap="magma")
        ax.set_ylabel(label, fontsize=8)
        fig.colorbar(im, ax=ax, fraction=0.025)
    axes[-1, 0].set_xlabel("frame")
    fig.suptitle(title)
    return _save(fig, path)
