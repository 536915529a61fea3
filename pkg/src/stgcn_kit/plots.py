"""Figures written next to the CSV/TSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def plot_training_curves(report, path) -> Path:
    """Loss and accuracy per epoch, two panels side by side."""
    epochs = [r.epoch for r in report.epochs]
    with plt.rc_context(RC):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3))
        ax_loss.plot(epochs, [r.train_loss for r in report.epochs], marker="o", ms=3)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_acc.plot(epochs, [r.train_acc for r in report.epochs], marker="o", ms=3, label="train")
        ax_acc.plot(epochs, [r.test_acc for r in report.epochs], marker="s", ms=3, label="test")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("accuracy")
        ax_acc.set_ylim(0.0, 1.05)
        ax_acc.legend(loc="lower right")
        fig.tight_layout(pad=0.5)
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_confusion(confusion, class_names, path) -> Path:
    confusion = np.asarray(confusion)
    K = confusion.shape[0]
    names = list(class_names) or [str(i) for i in range(K)]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.2 + 0.6 * K, 1.0 + 0.6 * K))
        ax.imshow(confusion, cmap="Blues")
        for i in range(K):
            for j in range(K):
                ax.text(j, i, str(confusion[i, j]), ha="center", va="center", fontsize=8)
        ax.set_xticks(range(K), names, rotation=45, ha="right")
        ax.set_yticks(range(K), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        fig.tight_layout(pad=0.5)
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
    return path
