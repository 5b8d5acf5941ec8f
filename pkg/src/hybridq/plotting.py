"""Report figures written next to the CSV outputs."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_training(stats: Sequence, path, warmup_epochs: int = 0) -> None:
    """Loss curves and, when recorded, FID against epoch."""
    epochs = [s.epoch for s in stats]
    has_fid = any(s.fid is not None for s in stats)
    fig, axes = plt.subplots(1, 2 if has_fid else 1, figsize=(10 if has_fid else 5, 3.6), squeeze=False)
    ax = axes[0, 0]
    ax.plot(epochs, [s.loss_recon for s in stats], label="reconstruction")
    gan = [s for s in stats if s.epoch > warmup_epochs]
    if gan:
        ax.plot([s.epoch for s in gan], [s.loss_d for s in gan], label="discriminator")
        ax.plot([s.epoch for s in gan], [s.loss_g for s in gan], label="generator")
    if warmup_epochs:
        ax.axvline(warmup_epochs + 0.5, color="0.6", linestyle="--", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    if has_fid:
        ax = axes[0, 1]
        pts = [(s.epoch, s.fid) for s in stats if s.fid is not None]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", markersize=3)
        if warmup_epochs:
            ax.axvline(warmup_epochs + 0.5, color="0.6", linestyle="--", linewidth=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("FID")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_augmentation(alphas: Sequence[float], reports: Sequence, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(alphas, [r.macro_recall for r in reports], marker="o", label="macro recall")
    ax.plot(alphas, [r.macro_precision for r in reports], marker="s", label="macro precision")
    ax.plot(alphas, [r.accuracy for r in reports], marker="^", label="accuracy")
    ax.set_xlabel("mixing ratio (generated fraction)")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
