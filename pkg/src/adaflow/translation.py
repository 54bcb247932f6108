"""Unpaired cross-domain translation via latent statistic swapping.

A sample is projected to the latent space with its own domain's AdaBN
statistics and re-projected to data space with the target domain's; the
shared latent makes the two domains' moments interchangeable without any
paired supervision.
"""

from __future__ import annotations

import numpy as np

from .flow import FlowModel


def translate(model: FlowModel, x, k_src, k_tgt):
    """Normalize with k_src statistics, generate with k_tgt statistics."""
    z0, _ = model.normalize(x, k_src)
    return model.generate(z0, k_tgt)


def translate_batch(model: FlowModel, X, k_src, k_tgt) -> np.ndarray:
    """Row-wise translate; rows are independent."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected an N x D matrix")
    if X.shape[0] == 0:
        return X.copy()
    return translate(model, X, k_src, k_tgt)
