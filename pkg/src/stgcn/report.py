"""Matplotlib figures written next to the JSON outputs of the CLI."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

SUBSET_NAMES = {
    "uni_labeling": ["neighborhood"],
    "distance": ["root", "neighbors"],
    "spatial_configuration": ["root", "centripetal", "centrifugal"],
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_history(history: list[dict], path) -> Path:
    """Loss and top-1 curves per epoch."""
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        ax_loss.plot(epochs, [h["train_loss"] for h in history], label="train")
        if history and history[0].get("val_loss") is not None:
            ax_loss.plot(epochs, [h["val_loss"] for h in history], label="val")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("cross-entropy")
        ax_loss.legend(frameon=False)

        ax_acc.plot(epochs, [100 * h["train_top1"] for h in history], label="train top-1")
        if history and history[0].get("val_top1") is not None:
            ax_acc.plot(epochs, [100 * h["val_top1"] for h in history], label="val top-1")
            k = history[0].get("val_k") or 5
            ax_acc.plot(epochs, [100 * h["val_top5"] for h in history], ls="--", label=f"val top-{k}")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("accuracy (%)")
        ax_acc.set_ylim(0, 101)
        ax_acc.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_adjacency(matrices, strategy: str, path, joint_names=None, title: str = "") -> Path:
    """One heatmap per partition subset."""
    mats = np.asarray(matrices)
    K = mats.shape[0]
    names = SUBSET_NAMES.get(strategy, [f"subset {j}" for j in range(K)])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, K, figsize=(2.8 * K + 0.6, 2.8), squeeze=False)
        vmax = float(mats.max()) if mats.size else 1.0
        for j, ax in enumerate(axes[0]):
            im = ax.imshow(mats[j], cmap="viridis", vmin=0, vmax=vmax)
            ax.set_title(names[j] if j < len(names) else f"subset {j}")
            ax.set_xlabel("neighbor joint")
            if j == 0:
                ax.set_ylabel("root joint")
                if joint_names is not None and len(joint_names) <= 25:
                    ax.set_yticks(range(len(joint_names)))
                    ax.set_yticklabels(joint_names, fontsize=5)
        fig.colorbar(im, ax=list(axes[0]), shrink=0.8)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_mask_deviation(masks: list[np.ndarray], path) -> Path:
    """max |M - 1| per layer and subset, a quick read on what edge importance learned."""
    dev = np.array([[np.abs(m[j] - 1).max() for j in range(m.shape[0])] for m in masks])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 2.6))
        for j in range(dev.shape[1]):
            ax.plot(np.arange(1, len(masks) + 1), dev[:, j], marker="o", ms=3, label=f"subset {j}")
        ax.set_xlabel("unit")
        ax.set_ylabel("max |M - 1|")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
