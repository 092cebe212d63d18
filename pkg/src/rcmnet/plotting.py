"""
rcmnet.plotting
===============

Report figures written next to the CSV/JSON outputs: training curves,
confusion matrices and Grad-CAM panels.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PathLike = Union[str, os.PathLike]

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path: PathLike) -> None:
    # no timestamp/version metadata, so reruns give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_training_curves(history: Sequence[dict], path: PathLike, title: Optional[str] = None) -> None:
    """Accuracy (train/test) and training loss per epoch."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(9, 3.4))
        ax_acc.plot(epochs, [r["train_top1"] for r in history], marker="o", ms=3, label="train")
        test = [r["test_top1"] for r in history]
        if not all(np.isnan(test)):
            ax_acc.plot(epochs, test, marker="s", ms=3, label="test")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("top-1 accuracy")
        ax_acc.set_ylim(0.0, 1.02)
        ax_acc.legend(loc="lower right")
        ax_loss.plot(epochs, [r["train_loss"] for r in history], color="C3", marker="o", ms=3)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("training loss")
        if title:
            fig.suptitle(title)
        _save(fig, path)


def plot_confusion_matrix(confusion: Sequence[Sequence[int]], class_names: Sequence[str], path: PathLike,
                          title: Optional[str] = None) -> None:
    conf = np.asarray(confusion)
    n = conf.shape[0]
    with plt.rc_context(STYLE):
        side = 2.2 + 0.45 * n
        fig, ax = plt.subplots(figsize=(side, side))
        ax.imshow(conf, cmap="Blues", vmin=0)
        thresh = conf.max() / 2 if conf.size else 0
        for i in range(n):
            for j in range(n):
                ax.text(j, i, str(conf[i, j]), ha="center", va="center",
                        color="white" if conf[i, j] > thresh else "black", fontsize=8)
        ax.set_xticks(range(n), labels=class_names, rotation=45, ha="right")
        ax.set_yticks(range(n), labels=class_names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_gradcam(image: np.ndarray, heatmap: np.ndarray, path: PathLike, title: Optional[str] = None) -> None:
    """Input image beside its heatmap and a translucent overlay."""
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[0] == 3:
        img = img.transpose(1, 2, 0)
    if img.dtype != np.uint8:
        img = np.clip(img, 0.0, 1.0)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(8, 2.9))
        axes[0].imshow(img)
        axes[0].set_title("input")
        axes[1].imshow(heatmap, cmap="jet", vmin=0, vmax=255)
        axes[1].set_title("Grad-CAM")
        axes[2].imshow(img)
        axes[2].imshow(heatmap, cmap="jet", vmin=0, vmax=255, alpha=0.45)
        axes[2].set_title("overlay")
        for ax in axes:
            ax.set_axis_off()
        if title:
            fig.suptitle(title)
        _save(fig, path)
