"""Invertible layer stack with per-domain batch-norm statistics.

A :class:`FlowModel` is an ordered stack of D->D bijections together with a
table of per-domain mean/variance vectors for its batch-norm layers. The
*normalize* direction maps data x to the latent z0 where the base density is
a standard normal; *generate* is the exact inverse. Log-likelihoods follow
the change-of-variables rule,

    log q(x) = log N(z0; 0, I) + sum_m log|det J_m|,

with the Jacobian log-dets taken in the normalize direction.

Layer-order convention: ``layers[0]`` is the first map applied in the
generate direction (latent -> data); normalize traverses the list from the
end to the start. Domain statistics are keyed by position in ``layers``.
The serialized JSON uses the same order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

DEFAULT_ALPHA = 0.2
DEFAULT_EPS = 1e-5

MODEL_FORMAT_VERSION = 1

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class BNStats:
    """Mean and population variance (1/N) of one AdaBN layer's input."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ValueError("stats mu/sigma must be 1-D vectors of equal length")
        if np.any(self.sigma < 0):
            raise ValueError("variance entries must be >= 0")

    def copy(self) -> "BNStats":
        return BNStats(self.mu.copy(), self.sigma.copy())


class LinearLDU:
    """Affine map y = W z + b with W = L diag(d) U.

    L and U are unit triangular, so |det W| = prod|d_i| and the inverse needs
    only two triangular solves plus a diagonal scale.
    """

    kind = "linear_ldu"

    def __init__(self, lower: np.ndarray, upper: np.ndarray, d: np.ndarray, b: np.ndarray):
        self.d = np.asarray(d, dtype=float).copy()
        self.b = np.asarray(b, dtype=float).copy()
        dim = self.d.shape[0]
        self.lower = np.tril(np.asarray(lower, dtype=float), k=-1).copy()
        self.upper = np.triu(np.asarray(upper, dtype=float), k=1).copy()
        if self.lower.shape != (dim, dim) or self.upper.shape != (dim, dim):
            raise ValueError("triangular factors must be DxD")
        if self.b.shape != (dim,):
            raise ValueError("bias must be length D")
        if np.any(self.d == 0.0):
            raise ValueError("diagonal scales must be nonzero")

    @property
    def dim(self) -> int:
        return self.d.shape[0]

    def factor_l(self) -> np.ndarray:
        return self.lower + np.eye(self.dim)

    def factor_u(self) -> np.ndarray:
        return self.upper + np.eye(self.dim)

    def weight(self) -> np.ndarray:
        return self.factor_l() @ (self.d[:, None] * self.factor_u())

    def normalize(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = z @ self.weight().T + self.b
        logdet = np.full(z.shape[0], np.sum(np.log(np.abs(self.d))))
        return out, logdet

    def generate(self, y: np.ndarray) -> np.ndarray:
        # two unit-triangular solves and a diagonal scale; no dense inverse
        v = solve_triangular(self.factor_l(), (y - self.b).T, lower=True, unit_diagonal=True)
        v /= self.d[:, None]
        return solve_triangular(self.factor_u(), v, lower=False, unit_diagonal=True).T


class LeakyReLU:
    """Elementwise y = max(z, alpha z); bijective for alpha in (0, 1).

    Inputs exactly 0 take the slope-1 branch; the Jacobian log-det in the
    normalize direction is tau * log(alpha) with tau the count of strictly
    negative entries.
    """

    kind = "leaky_relu"

    def __init__(self, alpha: float = DEFAULT_ALPHA):
        alpha = float(alpha)
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.alpha = alpha

    def normalize(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        neg = z < 0
        out = np.where(neg, self.alpha * z, z)
        logdet = neg.sum(axis=1) * math.log(self.alpha)
        return out, logdet

    def generate(self, y: np.ndarray) -> np.ndarray:
        # alpha > 0 preserves signs, so the output sign picks the branch
        return np.where(y < 0, y / self.alpha, y)


class AdaBN:
    """Batch-norm map with shared scale/shift and per-domain statistics.

    normalize: y = gamma * (z - mu) / sqrt(sigma + eps) + beta, where (mu,
    sigma) come from the domain being evaluated while gamma/beta are shared
    across domains. eps floors zero-variance coordinates; the serialization
    format assumes the default value.
    """

    kind = "adabn"

    def __init__(self, gamma: np.ndarray, beta: np.ndarray, eps: float = DEFAULT_EPS):
        self.gamma = np.asarray(gamma, dtype=float).copy()
        self.beta = np.asarray(beta, dtype=float).copy()
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError("gamma/beta must be 1-D vectors of equal length")
        if np.any(self.gamma == 0.0):
            raise ValueError("gamma entries must be nonzero")
        self.eps = float(eps)

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def scale(self, stats: BNStats) -> np.ndarray:
        return np.sqrt(stats.sigma + self.eps)

    def normalize(self, z: np.ndarray, stats: BNStats) -> tuple[np.ndarray, np.ndarray]:
        s = self.scale(stats)
        out = self.gamma * ((z - stats.mu) / s) + self.beta
        ld = np.sum(np.log(np.abs(self.gamma)) - 0.5 * np.log(stats.sigma + self.eps))
        return out, np.full(z.shape[0], ld)

    def generate(self, y: np.ndarray, stats: BNStats) -> np.ndarray:
        return ((y - self.beta) / self.gamma) * self.scale(stats) + stats.mu


Layer = LinearLDU | LeakyReLU | AdaBN


def layer_normalize(layer: Layer, z: np.ndarray, stats: BNStats | None = None):
    """Apply one layer's data->latent map to a batch; returns (out, logdet rows)."""
    z = _as_batch(z, getattr(layer, "dim", None))
    if not np.all(np.isfinite(z)):
        raise ValueError("layer input contains non-finite values")
    if isinstance(layer, AdaBN):
        if stats is None:
            raise ValueError("AdaBN layer needs domain statistics")
        return layer.normalize(z, stats)
    if stats is not None:
        raise ValueError(f"{layer.kind} layer takes no statistics")
    return layer.normalize(z)


def layer_generate(layer: Layer, z: np.ndarray, stats: BNStats | None = None) -> np.ndarray:
    """Apply one layer's latent->data map (exact inverse of layer_normalize)."""
    z = _as_batch(z, getattr(layer, "dim", None))
    if isinstance(layer, AdaBN):
        if stats is None:
            raise ValueError("AdaBN layer needs domain statistics")
        return layer.generate(z, stats)
    if stats is not None:
        raise ValueError(f"{layer.kind} layer takes no statistics")
    return layer.generate(z)


def _as_batch(x, dim: int | None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"expected vectors of length {dim}, got {x.shape[1]}")
    return x


def gaussian_logpdf(z: np.ndarray) -> np.ndarray:
    """Row-wise log N(z; 0, I)."""
    z = np.atleast_2d(z)
    return -0.5 * z.shape[1] * LOG_2PI - 0.5 * np.sum(z * z, axis=1)


class FlowModel:
    """Stack of invertible layers plus per-domain AdaBN statistic tables.

    Frozen models (no training/adaptation in progress) are immutable and may
    be shared across threads for normalize/generate/log_likelihood calls; any
    mutation requires exclusive access.
    """

    def __init__(self, dim: int, layers: list[Layer], domains: dict | None = None):
        self.dim = int(dim)
        self.layers = list(layers)
        for layer in self.layers:
            ldim = getattr(layer, "dim", None)
            if ldim is not None and ldim != self.dim:
                raise ValueError(f"{layer.kind} layer has dim {ldim}, model has {self.dim}")
        alphas = {layer.alpha for layer in self.layers if isinstance(layer, LeakyReLU)}
        if len(alphas) > 1:
            raise ValueError("all leaky layers must share one alpha")
        self.alpha = alphas.pop() if alphas else DEFAULT_ALPHA
        self.domains: dict[str, dict[int, BNStats]] = {}
        for k, stats in (domains or {}).items():
            self.register_domain(k, stats)

    # -- domain bookkeeping -------------------------------------------------

    def adabn_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, AdaBN)]

    def register_domain(self, k, stats: dict[int, BNStats]) -> None:
        """Install per-layer statistics for domain k (replaces existing)."""
        k = str(k)
        expected = set(self.adabn_indices())
        got = {int(i) for i in stats}
        if got != expected:
            raise ValueError(
                f"statistics for domain {k!r} must cover exactly the AdaBN layers "
                f"{sorted(expected)}, got {sorted(got)}"
            )
        table = {}
        for i, st in stats.items():
            if not isinstance(st, BNStats):
                st = BNStats(*st)
            if st.mu.shape != (self.dim,):
                raise ValueError(f"stats for layer {i} must be length {self.dim}")
            table[int(i)] = st
        self.domains[k] = table

    def _stats_for(self, k) -> dict[int, BNStats]:
        k = str(k)
        if k not in self.domains:
            raise ValueError(f"unknown domain {k!r}; registered: {sorted(self.domains)}")
        return self.domains[k]

    # -- transforms ----------------------------------------------------------

    def normalize(self, x: np.ndarray, k) -> tuple[np.ndarray, np.ndarray | float]:
        """Map data to latent with domain k's statistics.

        Returns (z0, logdet_sum), where logdet_sum collects log|det J| of the
        applied maps. Scalar/1-D in, scalar logdet out; batch in, per-row out.
        """
        single = np.asarray(x).ndim == 1
        z = _as_batch(x, self.dim)
        if not np.all(np.isfinite(z)):
            raise ValueError("input contains non-finite values")
        stats = self._stats_for(k)
        logdet = np.zeros(z.shape[0])
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if isinstance(layer, AdaBN):
                z, ld = layer.normalize(z, stats[i])
            else:
                z, ld = layer.normalize(z)
            if not np.all(np.isfinite(z)):
                raise FloatingPointError(f"non-finite activations after layer {i} ({layer.kind})")
            logdet += ld
        if single:
            return z[0], float(logdet[0])
        return z, logdet

    def generate(self, z0: np.ndarray, k) -> np.ndarray:
        """Map latent to data with domain k's statistics (inverse of normalize)."""
        single = np.asarray(z0).ndim == 1
        z = _as_batch(z0, self.dim)
        if not np.all(np.isfinite(z)):
            raise ValueError("input contains non-finite values")
        stats = self._stats_for(k)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, AdaBN):
                z = layer.generate(z, stats[i])
            else:
                z = layer.generate(z)
            if not np.all(np.isfinite(z)):
                raise FloatingPointError(f"non-finite activations after layer {i} ({layer.kind})")
        return z[0] if single else z

    def log_likelihood(self, x: np.ndarray, k) -> np.ndarray | float:
        """Exact log q(x) under domain k."""
        single = np.asarray(x).ndim == 1
        z0, logdet = self.normalize(x, k)
        ll = gaussian_logpdf(z0) + np.atleast_1d(logdet)
        return float(ll[0]) if single else ll


# -- construction -------------------------------------------------------------


def identity_linear(dim: int) -> LinearLDU:
    z = np.zeros((dim, dim))
    return LinearLDU(z, z, np.ones(dim), np.zeros(dim))


def random_linear(dim: int, rng: np.random.Generator, tri_std: float = 0.1) -> LinearLDU:
    """Near-identity init: strict triangles ~ N(0, tri_std^2), d = 1, b = 0."""
    lower = np.tril(rng.normal(0.0, tri_std, (dim, dim)), k=-1)
    upper = np.triu(rng.normal(0.0, tri_std, (dim, dim)), k=1)
    return LinearLDU(lower, upper, np.ones(dim), np.zeros(dim))


def build_flow(dim: int, stack: list[str], alpha: float = DEFAULT_ALPHA,
               seed: int | None = 0) -> FlowModel:
    """Build a model from layer kinds listed in normalize (data->latent) order.

    Kinds: "linear", "adabn", "leaky". Linear layers start near identity,
    AdaBN at gamma=1, beta=0. The stored layer list is the reverse of
    ``stack`` (see the module docstring for the order convention).
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    for kind in stack:
        if kind == "linear":
            layers.append(random_linear(dim, rng))
        elif kind == "adabn":
            layers.append(AdaBN(np.ones(dim), np.zeros(dim)))
        elif kind == "leaky":
            layers.append(LeakyReLU(alpha))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return FlowModel(dim, list(reversed(layers)))


def default_flow(dim: int, n_blocks: int = 1, alpha: float = DEFAULT_ALPHA,
                 seed: int | None = 0) -> FlowModel:
    """Stack of [linear, adabn, leaky] blocks with a [linear, adabn] tail.

    The default single block is the minimal five-layer architecture
    (linear, adabn, leaky, linear, adabn in the normalize direction).
    """
    if n_blocks < 1:
        raise ValueError("need at least one block")
    stack = ["linear", "adabn", "leaky"] * n_blocks + ["linear", "adabn"]
    return build_flow(dim, stack, alpha=alpha, seed=seed)


# -- serialization -------------------------------------------------------------
#
# Versioned, self-describing JSON:
#   {version, dim, alpha, layers: [{kind, params...}], domains:
#    {id: {layer_index: {mu: [...], sigma: [...]}}}}
# Strict-triangular entries are stored flat in row-major order. Floats are
# written with 18 significant digits, which round-trips float64 exactly.


def _pack_strict(mat: np.ndarray, lower: bool) -> list[float]:
    dim = mat.shape[0]
    if lower:
        return [float(mat[i, j]) for i in range(dim) for j in range(i)]
    return [float(mat[i, j]) for i in range(dim) for j in range(i + 1, dim)]


def _unpack_strict(vals, dim: int, lower: bool) -> np.ndarray:
    mat = np.zeros((dim, dim))
    it = iter(vals)
    for i in range(dim):
        cols = range(i) if lower else range(i + 1, dim)
        for j in cols:
            mat[i, j] = next(it)
    return mat


def model_to_document(model: FlowModel) -> dict:
    layers = []
    for layer in model.layers:
        if isinstance(layer, LinearLDU):
            params = {
                "lower": _pack_strict(layer.lower, lower=True),
                "upper": _pack_strict(layer.upper, lower=False),
                "d": layer.d.tolist(),
                "b": layer.b.tolist(),
            }
        elif isinstance(layer, AdaBN):
            params = {"gamma": layer.gamma.tolist(), "beta": layer.beta.tolist()}
        else:
            params = {}
        layers.append({"kind": layer.kind, "params": params})
    domains = {
        k: {str(i): {"mu": st.mu.tolist(), "sigma": st.sigma.tolist()}
            for i, st in sorted(table.items())}
        for k, table in sorted(model.domains.items())
    }
    return {
        "version": MODEL_FORMAT_VERSION,
        "dim": model.dim,
        "alpha": model.alpha,
        "layers": layers,
        "domains": domains,
    }


def model_from_document(doc: dict) -> FlowModel:
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    dim = int(doc["dim"])
    alpha = float(doc["alpha"])
    layers: list[Layer] = []
    for entry in doc["layers"]:
        kind = entry["kind"]
        params = entry.get("params", {})
        if kind == LinearLDU.kind:
            layers.append(LinearLDU(
                _unpack_strict(params["lower"], dim, lower=True),
                _unpack_strict(params["upper"], dim, lower=False),
                np.asarray(params["d"], dtype=float),
                np.asarray(params["b"], dtype=float),
            ))
        elif kind == AdaBN.kind:
            layers.append(AdaBN(np.asarray(params["gamma"], dtype=float),
                                np.asarray(params["beta"], dtype=float)))
        elif kind == LeakyReLU.kind:
            layers.append(LeakyReLU(alpha))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    domains = {
        k: {int(i): BNStats(np.asarray(st["mu"], dtype=float),
                            np.asarray(st["sigma"], dtype=float))
            for i, st in table.items()}
        for k, table in doc.get("domains", {}).items()
    }
    return FlowModel(dim, layers, domains)


def _write_json(obj, parts: list[str]) -> None:
    # json.dump formats floats via repr; we need a fixed >=17-digit form
    if isinstance(obj, dict):
        parts.append("{")
        for i, (key, val) in enumerate(obj.items()):
            if i:
                parts.append(",")
            parts.append(json.dumps(str(key)))
            parts.append(":")
            _write_json(val, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, val in enumerate(obj):
            if i:
                parts.append(",")
            _write_json(val, parts)
        parts.append("]")
    elif isinstance(obj, bool) or obj is None:
        parts.append(json.dumps(obj))
    elif isinstance(obj, float):
        parts.append(format(obj, ".17e"))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def document_to_json(doc: dict) -> str:
    parts: list[str] = []
    _write_json(doc, parts)
    return "".join(parts)


def save_model(model: FlowModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(document_to_json(model_to_document(model)))
        fh.write("\n")


def load_model(path) -> FlowModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_document(json.load(fh))
