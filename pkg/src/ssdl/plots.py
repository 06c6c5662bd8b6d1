"""Figure rendering for reports: every delimited output the CLI writes
(schedule CSVs, training logs, metric reports, generated waveforms) gets
a matplotlib figure rendered next to it."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_schedule(schedule, path: Path | str) -> Path:
    """alpha_bar and sigma curves over diffusion steps."""
    path = Path(path)
    t = np.arange(1, schedule.T + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, schedule.alpha_bar.numpy(), label=r"$\bar\alpha_t$")
    ax.plot(t, schedule.sqrt_alpha_bar.numpy(), label=r"$\sqrt{\bar\alpha_t}$", ls="--")
    ax.plot(t, schedule.sigma2.sqrt().numpy(), label=r"$\sigma_t$", ls=":")
    ax.set_xlabel("diffusion step t")
    ax.set_ylabel("value")
    ax.set_title(f"{schedule.kind} noise schedule, T={schedule.T}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_waveforms(signals: np.ndarray, rate: float, path: Path | str, title: str = "") -> Path:
    """Stacked channel traces for one (C, L) segment or a (B, C, L) batch."""
    path = Path(path)
    signals = np.asarray(signals)
    if signals.ndim == 2:
        signals = signals[None]
    b, c, l = signals.shape
    t = np.arange(l) / rate
    fig, axes = plt.subplots(b, 1, figsize=(8, 2.0 * b), squeeze=False, sharex=True)
    for i in range(b):
        ax = axes[i, 0]
        offset = 0.0
        for ch in range(c):
            trace = signals[i, ch]
            ax.plot(t, trace + offset, lw=0.7)
            offset += 2.5 * max(np.abs(trace).max(), 1e-6)
        ax.set_ylabel(f"sample {i}")
    axes[-1, 0].set_xlabel("time [s]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_log(records: list[dict], path: Path | str) -> Path:
    """Loss curve (and validation metric when present) from JSONL records."""
    path = Path(path)
    steps = [r["step"] for r in records if r.get("loss") is not None]
    losses = [r["loss"] for r in records if r.get("loss") is not None]
    val = [(r["epoch"], r["val_metric"]) for r in records if r.get("val_metric") is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=0.8, label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if val:
        ax2 = ax.twinx()
        ax2.plot([e for e, _ in val], [v for _, v in val], "r.-", label="validation")
        ax2.set_ylabel("validation metric", color="r")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_confusion(cm: np.ndarray, path: Path | str, class_names: list[str] | None = None) -> Path:
    path = Path(path)
    cm = np.asarray(cm)
    k = cm.shape[0]
    fig, ax = plt.subplots(figsize=(4 + 0.3 * k, 4 + 0.3 * k))
    im = ax.imshow(cm, cmap="Blues")
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=8)
    names = class_names or [str(i) for i in range(k)]
    ax.set_xticks(range(k), names, rotation=45)
    ax.set_yticks(range(k), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
