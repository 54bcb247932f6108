"""Figure rendering for the report paths; every figure is written to a file.

Uses the Agg backend so the CLI never needs a display. Figures land next to
the delimited outputs they illustrate.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def save_loss_curves(losses, path) -> None:
    """Per-domain NLL vs epoch from (epoch, domain_id, nll) rows."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    domains = dict.fromkeys(d for _, d, _ in losses)
    for d in domains:
        pts = [(e, v) for e, dd, v in losses if dd == d]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=str(d))
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean NLL")
    if len(domains) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_roc_curve(points, area, path) -> None:
    pts = np.asarray(points)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(pts[:, 0], pts[:, 1])
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"AUROC = {area:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_score_histogram(scores, labels, path) -> None:
    scores = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if labels is None:
        ax.hist(scores, bins=50)
    else:
        labels = np.asarray(labels, dtype=int)
        ax.hist(scores[labels == 0], bins=50, alpha=0.6, label="normal")
        ax.hist(scores[labels == 1], bins=50, alpha=0.6, label="anomaly")
        ax.legend(fontsize=8)
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_translation_scatter(X_src, X_out, path, X_ref=None) -> None:
    """Source vs translated samples on the first two coordinates."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if X_ref is not None and len(X_ref):
        ax.scatter(X_ref[:, 0], X_ref[:, 1], s=4, alpha=0.25, c="gray", label="target domain")
    ax.scatter(X_src[:, 0], X_src[:, 1], s=4, alpha=0.5, label="input")
    ax.scatter(X_out[:, 0], X_out[:, 1], s=4, alpha=0.5, label="translated")
    ax.legend(fontsize=8)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_bench_summary(rows, path) -> None:
    """AUROC and NLL bars per method row (method, n_samples, mean_nll, auroc)."""
    names = [f"{r[0]}\nN={r[1]}" if r[1] else str(r[0]) for r in rows]
    aurocs = [r[3] for r in rows]
    nlls = [r[2] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.8))
    xs = np.arange(len(rows))
    ax1.bar(xs, [a if a is not None else 0.0 for a in aurocs])
    ax1.set_xticks(xs, names, fontsize=7)
    ax1.set_ylabel("AUROC")
    ax1.set_ylim(0.0, 1.0)
    have = [(x, v) for x, v in zip(xs, nlls) if v is not None]
    ax2.bar([x for x, _ in have], [v for _, v in have])
    ax2.set_xticks(xs, names, fontsize=7)
    ax2.set_ylabel("mean NLL (normal test data)")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_timing_bars(phases, path) -> None:
    """Horizontal bars for (phase, seconds) pairs, log scale."""
    fig, ax = plt.subplots(figsize=(6, 0.6 * max(2, len(phases))))
    names = [p for p, _ in phases]
    ax.barh(np.arange(len(phases)), [s for _, s in phases])
    ax.set_yticks(np.arange(len(phases)), names, fontsize=8)
    ax.set_xlabel("seconds")
    ax.set_xscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
