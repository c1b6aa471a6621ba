"""Static figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ConfusionMatrix  # noqa: E402

CLASS_LABELS = ("malicious", "non-malicious", "unknown")
# drop the version stamp so figures do not change with the matplotlib release
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    return path


def plot_rounds(reports: Sequence, path: str | Path, initial=None, title: str | None = None) -> Path:
    """Accuracy/precision/recall/F1 and held-out loss per communication round."""
    rows = ([initial] if initial is not None else []) + list(reports)
    rounds = np.array([r.round_index for r in rows])
    fig, (ax_m, ax_l) = plt.subplots(1, 2, figsize=(10, 3.8))
    for name in ("accuracy", "precision", "recall", "f1"):
        ax_m.plot(rounds, [getattr(r, name) for r in rows], marker=".", ms=3, lw=1, label=name)
    ax_m.set_xlabel("communication round")
    ax_m.set_ylabel("score")
    ax_m.set_ylim(min(0.8, min(r.accuracy for r in rows) - 0.02), 1.0)
    ax_m.grid(alpha=0.3)
    ax_m.legend(loc="lower right", fontsize=8)
    ax_l.plot(rounds, [r.mean_global_loss for r in rows], color="tab:red", marker=".", ms=3, lw=1)
    ax_l.set_xlabel("communication round")
    ax_l.set_ylabel("held-out cross-entropy")
    ax_l.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_confusion(cm: ConfusionMatrix, path: str | Path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    counts = cm.counts
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(3), CLASS_LABELS, rotation=20)
    ax.set_yticks(range(3), CLASS_LABELS)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = counts.max() / 2 if counts.max() else 0
    for i in range(3):
        for j in range(3):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > threshold else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
