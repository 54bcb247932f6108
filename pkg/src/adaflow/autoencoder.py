"""Autoencoder baseline: reconstruction-error scoring for AUROC comparison.

Plain MLP with rectifier activations on the hidden layers and a linear output
layer. The anomaly score is the squared L2 reconstruction error; training
minimizes its mean over all training datasets pooled by concatenation, with
the same hand-derived gradient style as the flow.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .train import TrainConfig, TrainResult, TrainingDiverged, _Adam, _Sgd, clip_gradients

AE_FORMAT_VERSION = 1


def default_sizes(dim: int) -> tuple[list[int], list[int]]:
    """Encoder/decoder widths proportional to D -> D/6 -> D/12 -> D/6 -> D."""
    h1 = max(1, round(dim / 6))
    h2 = max(1, round(dim / 12))
    return [dim, h1, h2], [h2, h1, dim]


class AEModel:
    """Affine encoder/decoder chain; hidden layers ReLU, final layer linear."""

    def __init__(self, encoder_sizes, decoder_sizes, weights=None, biases=None,
                 seed: int | None = 0):
        self.encoder_sizes = [int(s) for s in encoder_sizes]
        self.decoder_sizes = [int(s) for s in decoder_sizes]
        if self.encoder_sizes[-1] != self.decoder_sizes[0]:
            raise ValueError("encoder output width must match decoder input width")
        if self.encoder_sizes[0] != self.decoder_sizes[-1]:
            raise ValueError("encoder input dim must equal decoder output dim")
        sizes = self.sizes
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = [rng.normal(0.0, math.sqrt(2.0 / sizes[i]), (sizes[i + 1], sizes[i]))
                       for i in range(len(sizes) - 1)]
            biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        self.weights = [np.asarray(w, dtype=float).copy() for w in weights]
        self.biases = [np.asarray(b, dtype=float).copy() for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not match sizes")

    @property
    def sizes(self) -> list[int]:
        return self.encoder_sizes + self.decoder_sizes[1:]

    @property
    def dim(self) -> int:
        return self.encoder_sizes[0]

    @classmethod
    def for_dim(cls, dim: int, seed: int | None = 0) -> "AEModel":
        enc, dec = default_sizes(dim)
        return cls(enc, dec, seed=seed)

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(np.asarray(X, dtype=float))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            A = A @ w.T + b
            if i < last:
                A = np.maximum(A, 0.0)
        return A


def ae_score(ae: AEModel, x):
    """Squared L2 reconstruction error per sample."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != ae.dim:
        raise ValueError(f"expected samples of dimension {ae.dim}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    err = X - ae.reconstruct(X)
    out = np.sum(err * err, axis=1)
    return float(out[0]) if single else out


def ae_backward(ae: AEModel, X: np.ndarray):
    """Mean squared reconstruction error over the batch and its gradients."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    last = len(ae.weights) - 1
    acts = [X]
    pre = []
    A = X
    for i, (w, b) in enumerate(zip(ae.weights, ae.biases)):
        Z = A @ w.T + b
        pre.append(Z)
        A = np.maximum(Z, 0.0) if i < last else Z
        acts.append(A)
    diff = acts[-1] - X
    loss = float(np.sum(diff * diff) / n)
    G = 2.0 * diff / n
    grads = [None] * len(ae.weights)
    for i in range(last, -1, -1):
        grads[i] = {"w": G.T @ acts[i], "b": G.sum(axis=0)}
        if i > 0:
            G = (G @ ae.weights[i]) * (pre[i - 1] > 0)
    return loss, grads


def ae_train(ae: AEModel, datasets, cfg: TrainConfig) -> TrainResult:
    """Minimize mean reconstruction error over all datasets pooled together.

    With unequal dataset sizes the pool is the concatenation, i.e. every
    sample weighs equally.
    """
    if not datasets:
        raise ValueError("need at least one training dataset")
    parts = []
    for k, data in datasets.items():
        X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
        if X.shape[1] != ae.dim:
            raise ValueError(f"domain {k!r}: expected dimension {ae.dim}, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError(f"domain {k!r} contains non-finite samples")
        parts.append(X)
    pool = np.concatenate(parts, axis=0)
    if pool.shape[0] < cfg.batch_size:
        raise ValueError(f"pooled data has {pool.shape[0]} samples, fewer than batch_size")

    rng = np.random.default_rng(cfg.seed)
    opt = _Sgd(cfg.learning_rate) if cfg.optimizer == "sgd" else \
        _Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_opt)
    params = [{"w": w, "b": b} for w, b in zip(ae.weights, ae.biases)]
    losses: list[tuple[int, str, float]] = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(pool.shape[0])
        total, count = 0.0, 0
        for start in range(0, pool.shape[0] - cfg.batch_size + 1, cfg.batch_size):
            batch = pool[perm[start:start + cfg.batch_size]]
            loss, grads = ae_backward(ae, batch)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, count, "pooled")
            if cfg.grad_clip is not None:
                clip_gradients(grads, cfg.grad_clip)
            opt.step(params, grads)
            total += loss
            count += 1
        losses.append((epoch, "pooled", total / max(count, 1)))
    return TrainResult(losses, time.perf_counter() - t0)


def ae_to_document(ae: AEModel) -> dict:
    return {
        "version": AE_FORMAT_VERSION,
        "kind": "autoencoder",
        "encoder_sizes": ae.encoder_sizes,
        "decoder_sizes": ae.decoder_sizes,
        "weights": [w.tolist() for w in ae.weights],
        "biases": [b.tolist() for b in ae.biases],
    }


def ae_from_document(doc: dict) -> AEModel:
    if doc.get("kind") != "autoencoder" or doc.get("version") != AE_FORMAT_VERSION:
        raise ValueError("not a supported autoencoder document")
    return AEModel(doc["encoder_sizes"], doc["decoder_sizes"],
                   weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
                   biases=[np.asarray(b, dtype=float) for b in doc["biases"]])
