"""Shared independent oracles and random-model factories for the tests.

Everything here deliberately avoids the library's analytic fast paths:
Jacobians come from central finite differences, determinants from dense
numpy linalg, AUROC from the brute-force pairwise statistic.
"""

import numpy as np

from adaflow.flow import AdaBN, BNStats, FlowModel, LeakyReLU, LinearLDU


def random_layer(kind: str, dim: int, rng: np.random.Generator, alpha: float):
    if kind == "linear":
        lower = np.tril(rng.normal(0.0, 0.3, (dim, dim)), k=-1)
        upper = np.triu(rng.normal(0.0, 0.3, (dim, dim)), k=1)
        d = rng.uniform(0.5, 1.5, dim) * rng.choice([-1.0, 1.0], dim)
        return LinearLDU(lower, upper, d, rng.normal(0.0, 0.5, dim))
    if kind == "adabn":
        gamma = rng.uniform(0.5, 1.5, dim) * rng.choice([-1.0, 1.0], dim)
        return AdaBN(gamma, rng.normal(0.0, 0.5, dim))
    return LeakyReLU(alpha)


def random_model(dim: int, n_layers: int, rng: np.random.Generator,
                 domain: str = "k") -> FlowModel:
    """Random stack with random per-domain statistics registered for `domain`."""
    alpha = float(rng.uniform(0.1, 0.5))
    kinds = rng.choice(["linear", "adabn", "leaky"], size=n_layers)
    layers = [random_layer(k, dim, rng, alpha) for k in kinds]
    model = FlowModel(dim, layers)
    stats = {
        i: BNStats(rng.normal(0.0, 1.0, dim), rng.uniform(0.25, 4.0, dim))
        for i in model.adabn_indices()
    }
    model.register_domain(domain, stats)
    return model


def fd_jacobian(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector map, J[i, j] = df_i/dx_j."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


def kink_distance(model: FlowModel, x: np.ndarray, k: str) -> float:
    """Smallest |coordinate| seen at any leaky layer input in the normalize pass."""
    z = np.atleast_2d(np.asarray(x, dtype=float))
    dist = np.inf
    stats = model.domains[str(k)]
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if isinstance(layer, LeakyReLU):
            dist = min(dist, float(np.min(np.abs(z))))
            z, _ = layer.normalize(z)
        elif isinstance(layer, AdaBN):
            z, _ = layer.normalize(z, stats[i])
        else:
            z, _ = layer.normalize(z)
    return dist


def sample_kink_safe(model: FlowModel, rng: np.random.Generator, k: str = "k",
                     min_dist: float = 1e-3, scale: float = 1.0) -> np.ndarray:
    for _ in range(200):
        x = rng.normal(0.0, scale, model.dim)
        if kink_distance(model, x, k) > min_dist:
            return x
    raise RuntimeError("could not sample a kink-safe input")


def pairwise_auroc(scores, labels) -> float:
    """Brute-force Mann-Whitney statistic, ties counted one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for a in pos:
        for n in neg:
            if a > n:
                wins += 1.0
            elif a == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def fd_param_gradients(objective, params, h: float = 1e-5):
    """Central differences of a scalar objective over structured parameters.

    ``params`` is a list of dicts of arrays (as trainable_params returns);
    returns the same structure. Only strictly-triangular entries of
    lower/upper factors are perturbed, matching what training updates.
    """
    out = []
    for entry in params:
        g_entry = {}
        for name, arr in entry.items():
            if name == "lower":
                mask = np.tril(np.ones(arr.shape, dtype=bool), k=-1)
            elif name == "upper":
                mask = np.triu(np.ones(arr.shape, dtype=bool), k=1)
            else:
                mask = np.ones(arr.shape, dtype=bool)
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                if not mask[idx]:
                    continue
                orig = arr[idx]
                arr[idx] = orig + h
                fp = objective()
                arr[idx] = orig - h
                fm = objective()
                arr[idx] = orig
                g[idx] = (fp - fm) / (2.0 * h)
            g_entry[name] = g
        out.append(g_entry)
    return out


def grad_close(analytic, numeric, rel: float = 1e-4, abs_tol: float = 1e-6) -> bool:
    """Spec tolerance: within rel relative or abs_tol absolute, whichever is looser."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    ok = (diff <= abs_tol) | (diff <= rel * np.maximum(np.abs(analytic), np.abs(numeric)))
    return bool(np.all(ok))
