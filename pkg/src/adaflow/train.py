"""Gradient training of the flow: pre-training over K domains and fine-tuning.

The objective is the sum over domains of the per-domain mean anomaly score
(negative log-likelihood). Gradients are hand-derived reverse-mode passes per
layer; with mini-batch statistics the batch-norm backward differentiates
through the batch mean/variance, including the variance term the Jacobian
log-det contributes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .adaptation import adapt
from .flow import AdaBN, BNStats, FlowModel, LeakyReLU, LinearLDU, LOG_2PI


class TrainingDiverged(RuntimeError):
    """Raised when the objective turns non-finite during training."""

    def __init__(self, epoch: int, batch_index: int, domain: str):
        self.epoch = epoch
        self.batch_index = batch_index
        self.domain = domain
        super().__init__(
            f"non-finite objective at epoch {epoch}, batch {batch_index}, domain {domain!r}"
        )


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    seed: int = 0
    stats_momentum: float = 0.9  # running-average coefficient for AdaBN stats
    grad_clip: float | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (variance needs two samples)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.stats_momentum < 1.0:
            raise ValueError("stats_momentum must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    """Loss curve rows (epoch, domain_id, nll) and wall-clock seconds."""

    losses: list[tuple[int, str, float]] = field(default_factory=list)
    seconds: float = 0.0

    def final_loss(self) -> float:
        last_epoch = self.losses[-1][0]
        return sum(v for e, _, v in self.losses if e == last_epoch)

    def initial_loss(self) -> float:
        first_epoch = self.losses[0][0]
        return sum(v for e, _, v in self.losses if e == first_epoch)


def _as_matrix(data, dim: int) -> np.ndarray:
    X = getattr(data, "X", data)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dim:
        raise ValueError(f"expected samples of dimension {dim}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("dataset contains non-finite samples")
    return X


# -- forward/backward ----------------------------------------------------------


def _forward_pass(model: FlowModel, X: np.ndarray, stats: dict | None, batch_mode: bool):
    """Normalize-direction pass over a batch, caching what backward needs.

    Returns (objective, caches, batch_stats) where objective is the batch
    mean NLL and batch_stats maps AdaBN layer index -> BNStats of its input
    (batch mode only).
    """
    n = X.shape[0]
    Z = X
    logdet = np.zeros(n)
    caches = []  # traversal order: stored index M-1 .. 0
    batch_stats: dict[int, BNStats] = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if isinstance(layer, LinearLDU):
            caches.append((i, layer, {"z": Z}))
            Z = Z @ layer.weight().T + layer.b
            logdet += np.sum(np.log(np.abs(layer.d)))
        elif isinstance(layer, LeakyReLU):
            neg = Z < 0
            caches.append((i, layer, {"neg": neg}))
            Z = np.where(neg, layer.alpha * Z, Z)
            logdet += neg.sum(axis=1) * math.log(layer.alpha)
        else:
            if batch_mode:
                mu = Z.mean(axis=0)
                var = Z.var(axis=0)  # population (1/N)
                batch_stats[i] = BNStats(mu.copy(), var.copy())
            else:
                st = stats[i]
                mu, var = st.mu, st.sigma
            s = np.sqrt(var + layer.eps)
            zhat = (Z - mu) / s
            caches.append((i, layer, {"zhat": zhat, "s": s, "batch": batch_mode}))
            Z = layer.gamma * zhat + layer.beta
            logdet += np.sum(np.log(np.abs(layer.gamma)) - 0.5 * np.log(var + layer.eps))
    nll = 0.5 * model.dim * LOG_2PI + 0.5 * np.sum(Z * Z, axis=1) - logdet
    objective = float(np.mean(nll))
    return objective, Z, caches, batch_stats


def _backward_pass(model: FlowModel, Z0: np.ndarray, caches) -> list[dict]:
    """Reverse-mode gradients of the batch mean NLL w.r.t. all parameters."""
    n = Z0.shape[0]
    grads: list[dict] = [{} for _ in model.layers]
    G = Z0 / n
    for i, layer, cache in reversed(caches):
        if isinstance(layer, LinearLDU):
            Zin = cache["z"]
            L = layer.factor_l()
            U = layer.factor_u()
            W = L @ (layer.d[:, None] * U)
            dW = G.T @ Zin
            grads[i] = {
                "lower": np.tril(dW @ (layer.d[:, None] * U).T, k=-1),
                "upper": np.triu((L * layer.d[None, :]).T @ dW, k=1),
                "d": ((L.T @ dW) * U).sum(axis=1) - 1.0 / layer.d,
                "b": G.sum(axis=0),
            }
            G = G @ W
        elif isinstance(layer, LeakyReLU):
            G = np.where(cache["neg"], layer.alpha * G, G)
        else:
            zhat, s = cache["zhat"], cache["s"]
            grads[i] = {
                "gamma": (G * zhat).sum(axis=0) - 1.0 / layer.gamma,
                "beta": G.sum(axis=0),
            }
            dzhat = G * layer.gamma
            if cache["batch"]:
                # batch statistics are functions of the input; the extra
                # +zhat term is the log-det's dependence on the batch variance
                G = (n * dzhat - dzhat.sum(axis=0)
                     - zhat * (dzhat * zhat).sum(axis=0) + zhat) / (n * s)
            else:
                G = dzhat / s
    return grads


def backward(model: FlowModel, batch, k=None, use_batch_stats: bool = True):
    """Objective and analytic parameter gradients for one single-domain batch.

    With ``use_batch_stats`` the AdaBN layers use the batch's own mean and
    population variance and the gradient flows through them; otherwise domain
    k's stored statistics are treated as constants.
    """
    X = _as_matrix(batch, model.dim)
    if use_batch_stats:
        if X.shape[0] < 2:
            raise ValueError("batch statistics need at least 2 samples")
        stats = None
    else:
        stats = model._stats_for(k)
    objective, Z0, caches, _ = _forward_pass(model, X, stats, use_batch_stats)
    grads = _backward_pass(model, Z0, caches)
    return objective, grads


def nll_objective(model: FlowModel, batches, use_batch_stats: bool = False) -> float:
    """Sum over domains of the per-domain mean anomaly score.

    Every domain in ``batches`` must be registered; with the default stored
    statistics this equals the summed mean of -log_likelihood per domain.
    """
    if not batches:
        raise ValueError("no batches supplied")
    total = 0.0
    for k, data in batches.items():
        X = _as_matrix(data, model.dim)
        if X.shape[0] == 0:
            raise ValueError(f"empty batch for domain {k!r}")
        stats = model._stats_for(k)
        if use_batch_stats and X.shape[0] < 2:
            raise ValueError("batch statistics need at least 2 samples")
        objective, _, _, _ = _forward_pass(model, X, None if use_batch_stats else stats,
                                           use_batch_stats)
        total += objective
    return total


# -- optimizers ----------------------------------------------------------------


def trainable_params(model: FlowModel) -> list[dict[str, np.ndarray]]:
    """Per-layer views of the trainable arrays (updated in place)."""
    params: list[dict[str, np.ndarray]] = []
    for layer in model.layers:
        if isinstance(layer, LinearLDU):
            params.append({"lower": layer.lower, "upper": layer.upper,
                           "d": layer.d, "b": layer.b})
        elif isinstance(layer, AdaBN):
            params.append({"gamma": layer.gamma, "beta": layer.beta})
        else:
            params.append({})
    return params


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads) -> None:
        for p, g in zip(params, grads):
            for name, garr in g.items():
                p[name] -= self.lr * garr


class _Adam:
    def __init__(self, lr: float, beta1: float, beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for li, (p, g) in enumerate(zip(params, grads)):
            for name, garr in g.items():
                key = (li, name)
                if key not in self.m:
                    self.m[key] = np.zeros_like(garr)
                    self.v[key] = np.zeros_like(garr)
                m, v = self.m[key], self.v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * garr
                v *= self.beta2
                v += (1.0 - self.beta2) * garr * garr
                p[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return _Sgd(cfg.learning_rate)
    return _Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_opt)


def clip_gradients(grads, max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for entry in grads for g in entry.values()))
    if total > max_norm:
        factor = max_norm / total
        for entry in grads:
            for g in entry.values():
                g *= factor


# -- training loops ------------------------------------------------------------


def _batch_slices(n: int, batch_size: int) -> list[slice]:
    full = n // batch_size
    slices = [slice(j * batch_size, (j + 1) * batch_size) for j in range(full)]
    if n - full * batch_size >= 2:  # keep a trailing partial batch, drop singletons
        slices.append(slice(full * batch_size, n))
    return slices


def _train_loop(model: FlowModel, data: dict[str, np.ndarray], cfg: TrainConfig,
                initial_running: dict | None) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    opt = _make_optimizer(cfg)
    params = trainable_params(model)
    running: dict[str, dict[int, BNStats] | None] = {
        k: (initial_running or {}).get(k) for k in data
    }
    losses: list[tuple[int, str, float]] = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        perms = {k: rng.permutation(len(X)) for k, X in data.items()}
        slices = {k: _batch_slices(len(X), cfg.batch_size) for k, X in data.items()}
        epoch_nll = {k: 0.0 for k in data}
        epoch_batches = {k: 0 for k in data}
        # round-robin over domains so every mini-batch is domain-pure
        for step in range(max(len(s) for s in slices.values())):
            for k, X in data.items():
                if step >= len(slices[k]):
                    continue
                batch = X[perms[k][slices[k][step]]]
                objective, Z0, caches, bstats = _forward_pass(model, batch, None, True)
                if not math.isfinite(objective):
                    raise TrainingDiverged(epoch, step, k)
                grads = _backward_pass(model, Z0, caches)
                if cfg.grad_clip is not None:
                    clip_gradients(grads, cfg.grad_clip)
                opt.step(params, grads)
                running[k] = _update_running(running[k], bstats, cfg.stats_momentum)
                epoch_nll[k] += objective
                epoch_batches[k] += 1
        for k in data:
            losses.append((epoch, k, epoch_nll[k] / max(epoch_batches[k], 1)))
    for k, table in running.items():
        if table is not None:
            model.register_domain(k, {i: st.copy() for i, st in table.items()})
    return TrainResult(losses, time.perf_counter() - t0)


def _update_running(prev, new: dict[int, BNStats], momentum: float):
    if prev is None:
        return {i: st.copy() for i, st in new.items()}
    for i, st in new.items():
        prev[i].mu *= momentum
        prev[i].mu += (1.0 - momentum) * st.mu
        prev[i].sigma *= momentum
        prev[i].sigma += (1.0 - momentum) * st.sigma
    return prev


def pretrain(model: FlowModel, datasets, cfg: TrainConfig) -> TrainResult:
    """Train all parameters on K >= 1 domain datasets (summed mean NLL).

    Mini-batches are domain-pure and cycled round-robin; AdaBN layers use
    batch statistics for forward/backward while per-domain running averages
    accumulate with ``cfg.stats_momentum`` and are frozen into the model's
    domain table at the end.
    """
    if not datasets:
        raise ValueError("need at least one training domain")
    data = {str(k): _as_matrix(v, model.dim) for k, v in datasets.items()}
    for k, X in data.items():
        if X.shape[0] < cfg.batch_size:
            raise ValueError(
                f"domain {k!r} has {X.shape[0]} samples, fewer than batch_size={cfg.batch_size}"
            )
    return _train_loop(model, data, cfg, initial_running=None)


def finetune(model: FlowModel, dataset, k_new, cfg: TrainConfig) -> TrainResult:
    """Gradient-update all parameters on the new domain only.

    The new domain's statistics are first installed with an adaptation pass
    (so a zero-epoch schedule registers k_new and changes nothing else), then
    refined as running averages during training. Wall-clock time is recorded
    in the result for speed comparisons against adaptation.
    """
    k_new = str(k_new)
    X = _as_matrix(dataset, model.dim)
    t0 = time.perf_counter()
    adapt(model, X, k_new)
    initial = {k_new: {i: st.copy() for i, st in model.domains[k_new].items()}}
    result = _train_loop(model, {k_new: X}, cfg, initial_running=initial)
    return TrainResult(result.losses, time.perf_counter() - t0)
