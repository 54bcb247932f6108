"""Domain registration by statistics alone: one forward pass, no gradients.

The adaptation batch is pushed through the stack in the normalize direction;
at each AdaBN layer the incoming activations' mean and population variance
over the whole batch become the new domain's statistics for that layer, and
the batch continues through the layer normalized with those fresh values.
Downstream layers therefore see activations already whitened by upstream
fresh statistics (layer-sequential convention). Learnable parameters are
never touched.
"""

from __future__ import annotations

import numpy as np

from .flow import AdaBN, BNStats, FlowModel


def adapt(model: FlowModel, samples, k_new) -> FlowModel:
    """Register domain ``k_new`` from N >= 2 samples; returns the model.

    Requires exclusive access to the model while it runs; scoring may resume
    once registration completes.
    """
    X = getattr(samples, "X", samples)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise ValueError(f"expected samples of dimension {model.dim}, got {X.shape[1]}")
    if X.shape[0] < 2:
        raise ValueError("adaptation needs at least 2 samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("adaptation samples contain non-finite values")

    stats: dict[int, BNStats] = {}
    Z = X
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if isinstance(layer, AdaBN):
            st = BNStats(Z.mean(axis=0), Z.var(axis=0))  # population (1/N) variance
            stats[i] = st
            Z, _ = layer.normalize(Z, st)
        else:
            Z, _ = layer.normalize(Z)
        if not np.all(np.isfinite(Z)):
            raise FloatingPointError(f"non-finite activations after layer {i} ({layer.kind})")
    model.register_domain(k_new, stats)
    return model


def remove_domain(model: FlowModel, k) -> FlowModel:
    """Drop domain k's statistics; other domains are untouched."""
    k = str(k)
    if k not in model.domains:
        raise ValueError(f"unknown domain {k!r}; registered: {sorted(model.domains)}")
    del model.domains[k]
    return model
