"""Full synthetic experiment matrix: the six-method comparison plus timings.

Per seed: pre-train the per-domain-statistics flow on K domains, pre-train a
pooled-statistics flow and an autoencoder on the same data, then compare on
the held-out target domain: the pooled flow as-is, the per-domain flow
adapted with N in {10, 100, 1000} target samples, the pooled flow fine-tuned
on 1000 target samples, and the autoencoder. Metrics merge across seeds by
plain means; wall-clock goes to a separate timing table because it is the one
output that cannot be reproduced byte-for-byte.
"""

from __future__ import annotations

import copy
import csv
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .adaptation import adapt
from .autoencoder import AEModel, ae_score, ae_train
from .data import Dataset
from .flow import default_flow
from .scoring import evaluate, report_from_scores
from .synth import make_benchmark
from .train import TrainConfig, finetune, pretrain

METHOD_ORDER = ["flow", "autoencoder", "adaflow", "flow_finetuned"]


def stage_seed(seed: int, stage: str) -> int:
    """Derive a per-stage seed from the run seed by fixed hashing."""
    return (int(seed) * 0x9E3779B1 + zlib.crc32(stage.encode())) & 0x7FFFFFFF


@dataclass
class BenchConfig:
    seed: int = 0
    n_seeds: int = 10
    dim: int = 16
    n_domains: int = 3
    n_blocks: int = 1
    adapt_sizes: tuple[int, ...] = (10, 100, 1000)
    finetune_n: int = 1000
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    finetune_epochs: int = 60
    finetune_lr: float = 1e-4
    ae_epochs: int = 20
    ae_lr: float = 1e-3


@dataclass
class BenchResult:
    rows: list[tuple]                  # merged (method, n_samples, mean_nll, auroc)
    per_seed: list[tuple]              # (seed, method, n_samples, mean_nll, auroc)
    timings: list[tuple[str, float]]   # (phase, seconds)
    metrics: dict = field(default_factory=dict)


def run_seed(run_seed_value: int, cfg: BenchConfig):
    """One full experiment under one seed; returns (rows, timing phases)."""
    bench = make_benchmark(stage_seed(run_seed_value, "data"),
                           K=cfg.n_domains, dim=cfg.dim)
    test = bench.target_test
    timings: list[tuple[str, float]] = []

    train_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                            learning_rate=cfg.learning_rate,
                            seed=stage_seed(run_seed_value, "train-adaflow"))
    adaflow_model = default_flow(cfg.dim, cfg.n_blocks,
                                 seed=stage_seed(run_seed_value, "model-adaflow"))
    res = pretrain(adaflow_model, bench.pretrain, train_cfg)
    timings.append(("pretrain_adaflow", res.seconds))

    pooled = np.concatenate([ds.X for ds in bench.pretrain.values()], axis=0)
    flow_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                           learning_rate=cfg.learning_rate,
                           seed=stage_seed(run_seed_value, "train-flow"))
    flow_model = default_flow(cfg.dim, cfg.n_blocks,
                              seed=stage_seed(run_seed_value, "model-flow"))
    res = pretrain(flow_model, {"pooled": pooled}, flow_cfg)
    timings.append(("pretrain_flow", res.seconds))

    ae = AEModel.for_dim(cfg.dim, seed=stage_seed(run_seed_value, "model-ae"))
    ae_cfg = TrainConfig(epochs=cfg.ae_epochs, batch_size=cfg.batch_size,
                         learning_rate=cfg.ae_lr,
                         seed=stage_seed(run_seed_value, "train-ae"))
    res = ae_train(ae, bench.pretrain, ae_cfg)
    timings.append(("train_ae", res.seconds))

    rows = []
    rep = evaluate(flow_model, test, "pooled")
    rows.append(("flow", 0, rep.mean_nll, rep.auroc))

    t0 = time.perf_counter()
    scores = ae_score(ae, test.X)
    rep = report_from_scores(scores, test.labels, time.perf_counter() - t0)
    rows.append(("autoencoder", 0, None, rep.auroc))

    perm = np.random.default_rng(stage_seed(run_seed_value, "adapt-subset")) \
        .permutation(bench.target_train.n)
    for n_adapt in cfg.adapt_sizes:
        subset = bench.target_train.X[perm[:n_adapt]]
        t0 = time.perf_counter()
        adapt(adaflow_model, subset, "target")
        dt = time.perf_counter() - t0
        timings.append((f"adapt_n{n_adapt}", dt))
        rep = evaluate(adaflow_model, test, "target")
        rows.append(("adaflow", n_adapt, rep.mean_nll, rep.auroc))

    ft_model = copy.deepcopy(flow_model)
    ft_cfg = TrainConfig(epochs=cfg.finetune_epochs, batch_size=128,
                         learning_rate=cfg.finetune_lr,
                         seed=stage_seed(run_seed_value, "finetune"))
    ft_subset = bench.target_train.X[perm[:cfg.finetune_n]]
    res = finetune(ft_model, ft_subset, "target", ft_cfg)
    timings.append((f"finetune_n{cfg.finetune_n}", res.seconds))
    rep = evaluate(ft_model, test, "target")
    rows.append(("flow_finetuned", cfg.finetune_n, rep.mean_nll, rep.auroc))
    return rows, timings


def run_bench(cfg: BenchConfig) -> BenchResult:
    """Run the matrix over cfg.n_seeds seeds and merge deterministically."""
    per_seed = []
    all_timings: list[tuple[str, float]] = []
    for i in range(cfg.n_seeds):
        seed_i = cfg.seed + i
        rows, timings = run_seed(seed_i, cfg)
        per_seed.extend((seed_i, *row) for row in rows)
        all_timings.extend((f"{phase}[seed={seed_i}]", sec) for phase, sec in timings)

    merged = []
    keys = []
    for _, method, n, _, _ in per_seed:
        if (method, n) not in keys:
            keys.append((method, n))
    for method, n in keys:
        nlls = [r[3] for r in per_seed if r[1] == method and r[2] == n]
        aurocs = [r[4] for r in per_seed if r[1] == method and r[2] == n]
        mean_nll = None if nlls[0] is None else float(np.mean(nlls))
        mean_auroc = None if aurocs[0] is None else float(np.mean(aurocs))
        merged.append((method, n, mean_nll, mean_auroc))

    phases = dict.fromkeys(p.split("[", 1)[0] for p, _ in all_timings)
    for phase in phases:
        vals = [s for p, s in all_timings if p.split("[", 1)[0] == phase]
        all_timings.append((f"{phase}[mean]", float(np.mean(vals))))

    metrics = {(m, n): (nll, a) for m, n, nll, a in merged}
    return BenchResult(merged, per_seed, all_timings, metrics)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results_csv(path, rows) -> None:
    """Merged results table; the seconds column stays empty so reruns are
    byte-identical (wall-clock lives in the timing table)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "n_samples", "mean_nll", "auroc", "seconds"])
        for method, n, nll, area in rows:
            writer.writerow([method, n, _fmt(nll), _fmt(area), ""])


def write_per_seed_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "method", "n_samples", "mean_nll", "auroc"])
        for seed, method, n, nll, area in rows:
            writer.writerow([seed, method, n, _fmt(nll), _fmt(area)])


def write_timing_csv(path, timings) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phase", "seconds"])
        for phase, seconds in timings:
            writer.writerow([phase, repr(float(seconds))])
