"""Figure rendering for the report paths: spectrograms, training curves,
and confusion matrices, written next to the JSON/text output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_mel_figure(values: np.ndarray, path, sample_rate: int | None = None,
                    hop_len: int | None = None, title: str | None = None) -> None:
    """Render a dB mel map (bands x frames) as an image."""
    fig, ax = plt.subplots(figsize=(7, 3.2))
    extent = None
    if sample_rate and hop_len:
        extent = (0, values.shape[1] * hop_len / sample_rate, 0, values.shape[0])
    im = ax.imshow(values, aspect="auto", origin="lower", cmap="magma", extent=extent)
    ax.set_xlabel("time (s)" if extent else "frame")
    ax.set_ylabel("mel band")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_matrix_figure(values: np.ndarray, path, ylabel: str, title: str | None = None) -> None:
    """Generic heat map for coefficient tracks (MFCC, deltas)."""
    fig, ax = plt.subplots(figsize=(7, 3.2))
    im = ax.imshow(values, aspect="auto", origin="lower", cmap="coolwarm")
    ax.set_xlabel("frame")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(report: dict, path, title: str | None = None) -> None:
    """Loss (and accuracy, when present) per epoch."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    loss = report.get("epoch_loss") or report.get("epoch_nll") or []
    epochs = np.arange(1, len(loss) + 1)
    ax.plot(epochs, loss, marker="o", markersize=3, label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if report.get("epoch_accuracy"):
        twin = ax.twinx()
        twin.plot(epochs, report["epoch_accuracy"], color="tab:green", marker="s",
                  markersize=3, label="accuracy")
        twin.set_ylabel("accuracy")
        twin.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(counts: np.ndarray, classes: list[str], path, title: str | None = None) -> None:
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right")
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = counts.max() / 2 if counts.size else 0
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            color = "white" if counts[i, j] > threshold else "black"
            ax.text(j, i, str(counts[i, j]), ha="center", va="center", color=color, fontsize=8)
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_waveform_figure(samples: np.ndarray, sample_rate: int, path, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(7, 2.4))
    t = np.arange(samples.size) / sample_rate
    ax.plot(t, samples, linewidth=0.5)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("amplitude")
    ax.set_ylim(-1.05, 1.05)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
