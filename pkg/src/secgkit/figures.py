"""Figure rendering for report outputs. Everything draws to files (Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import LABEL_ORDER, UNCLASSIFIED
from .embedding import EmbeddedPoint
from .metrics import ClassReport

_CLASS_COLORS = {
    "Normal": "tab:green",
    "Pause": "tab:purple",
    "Tachycardia": "tab:red",
    "AFib": "tab:orange",
    "Noise": "tab:gray",
    UNCLASSIFIED: "black",
    None: "tab:blue",
}


def save_embedding_scatter(points: list[EmbeddedPoint], path: str, title: str = "2D embedding") -> None:
    fig, ax = plt.subplots(figsize=(7, 6))
    labels = sorted({p.label for p in points}, key=lambda v: (v is None, str(v)))
    for lab in labels:
        xs = [p.xy[0] for p in points if p.label == lab]
        ys = [p.xy[1] for p in points if p.label == lab]
        ax.scatter(xs, ys, s=6, alpha=0.6, label=str(lab) if lab is not None else "unlabeled",
                   color=_CLASS_COLORS.get(lab, None))
    ax.set_title(title)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    ax.legend(markerscale=2, fontsize=8, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_cluster_scatter(xy: np.ndarray, cluster_ids: np.ndarray, path: str,
                         title: str = "DBSCAN clusters") -> None:
    fig, ax = plt.subplots(figsize=(7, 6))
    outliers = cluster_ids == -1
    ax.scatter(xy[outliers, 0], xy[outliers, 1], s=6, c="lightgray", label="outlier")
    for cid in sorted(set(cluster_ids[~outliers].tolist())):
        m = cluster_ids == cid
        ax.scatter(xy[m, 0], xy[m, 1], s=6, label=f"cluster {cid}")
    ax.set_title(title)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    if len(set(cluster_ids.tolist())) <= 16:
        ax.legend(markerscale=2, fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_confusion_heatmap(report: ClassReport, path: str, title: str = "confusion") -> None:
    rows = [lab.value for lab in LABEL_ORDER]
    cols = rows + [UNCLASSIFIED]
    fig, ax = plt.subplots(figsize=(6.5, 5))
    im = ax.imshow(report.confusion, cmap="Blues")
    ax.set_xticks(range(len(cols)), cols, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(rows)), rows, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(len(rows)):
        for j in range(len(cols)):
            v = report.confusion[i, j]
            if v:
                ax.text(j, i, str(v), ha="center", va="center", fontsize=7,
                        color="white" if v > report.confusion.max() / 2 else "black")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_f1_bars(reports: dict[str, ClassReport], path: str) -> None:
    names = list(reports)
    classes = [lab.value for lab in LABEL_ORDER]
    width = 0.8 / max(1, len(names))
    x = np.arange(len(classes))
    fig, ax = plt.subplots(figsize=(8, 4))
    for k, name in enumerate(names):
        vals = [reports[name].per_class[c].f1 for c in classes]
        ax.bar(x + k * width, vals, width=width, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2, classes)
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title("per-class F1")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_audit_bars(ratios: dict[str, float], path: str,
                    title: str = "noise gate detections by true label") -> None:
    names = list(ratios)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(names, [ratios[n] for n in names],
           color=[_CLASS_COLORS.get(n, "tab:blue") for n in names])
    ax.set_ylabel("detected fraction of label's sub-episodes")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_kdistance_plot(dists: np.ndarray, path: str, k: int = 4) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(dists)
    ax.set_xlabel("points (sorted)")
    ax.set_ylabel(f"distance to {k}th nearest neighbor")
    ax.set_title("k-distance curve (elbow suggests eps)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_kl_trace(trace: list[tuple[int, float]], path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    if trace:
        its, kls = zip(*trace)
        ax.plot(its, kls, marker=".")
    ax.set_xlabel("iteration")
    ax.set_ylabel("KL divergence")
    ax.set_title("embedding optimization trace")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
