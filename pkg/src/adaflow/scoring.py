"""Anomaly scores, hard thresholding, and ROC/AUROC evaluation.

The flow's anomaly score is the negative log-likelihood; the autoencoder
baseline substitutes its reconstruction error. AUROC is the trapezoidal area
under the ROC over all distinct score thresholds, which equals the
Mann-Whitney statistic with ties counted one half.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowModel


def anomaly_score(model: FlowModel, x, k):
    """Negative log-likelihood of x under domain k."""
    return -model.log_likelihood(x, k)


def classify(score, phi: float):
    """1 (anomaly) iff score >= phi, else 0 (normal); boundary is anomalous."""
    score = np.asarray(score, dtype=float)
    if not np.all(np.isfinite(score)) or not np.isfinite(phi):
        raise ValueError("scores and threshold must be finite")
    out = (score >= phi).astype(int)
    return int(out) if out.ndim == 0 else out


def roc_points(scores, labels) -> np.ndarray:
    """ROC curve points (FPR, TPR) from (0,0) to (1,1), thresholds descending.

    Tied scores collapse into one sweep step, so ties contribute diagonal
    segments and the trapezoidal area matches the half-tie convention.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D arrays")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one sample of each label")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # keep only the last index of each tied-score run
    last = np.nonzero(np.diff(s, append=-np.inf))[0]
    fpr = np.concatenate([[0.0], fp[last] / n_neg])
    tpr = np.concatenate([[0.0], tp[last] / n_pos])
    return np.column_stack([fpr, tpr])


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the trapezoid rule."""
    pts = roc_points(scores, labels)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


@dataclass
class EvalReport:
    """NLL on normal data, AUROC, ROC points, and wall-clock timings."""

    mean_nll: float | None
    auroc: float | None
    roc_points: np.ndarray | None
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_nll": self.mean_nll,
            "auroc": self.auroc,
            "roc_points": None if self.roc_points is None else self.roc_points.tolist(),
            "timings": dict(self.timings),
        }


def report_from_scores(scores, labels, seconds: float, nll_scores=None) -> EvalReport:
    """Build an EvalReport from precomputed scores.

    ``nll_scores`` are the scores to average over normal-labeled samples (the
    flow passes its NLL scores; the autoencoder passes None since its scores
    are not likelihoods).
    """
    scores = np.asarray(scores, dtype=float)
    labels = None if labels is None else np.asarray(labels, dtype=int)
    mean_nll = None
    if nll_scores is not None:
        nll_scores = np.asarray(nll_scores, dtype=float)
        normal = nll_scores if labels is None else nll_scores[labels == 0]
        if normal.size:
            mean_nll = float(np.mean(normal))
    area = None
    pts = None
    if labels is not None and 0 < labels.sum() < labels.size:
        pts = roc_points(scores, labels)
        area = float(np.trapezoid(pts[:, 1], pts[:, 0]))
    return EvalReport(mean_nll, area, pts, {"score_seconds": seconds})


def evaluate(model: FlowModel, dataset, k) -> EvalReport:
    """Score a labeled test set under domain k.

    mean_nll averages over normal-labeled samples only (all samples when the
    set is unlabeled); AUROC needs both labels present and is None otherwise.
    """
    X = getattr(dataset, "X", dataset)
    labels = getattr(dataset, "labels", None)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty test set")
    t0 = time.perf_counter()
    scores = -model.log_likelihood(X, k)
    seconds = time.perf_counter() - t0
    return report_from_scores(scores, labels, seconds, nll_scores=scores)
