"""Multi-domain density estimation with per-domain batch-norm statistics.

Train a normalizing flow on K domains, register a new domain with one
forward pass over its samples, score anomalies by negative log-likelihood,
and translate samples across domains by swapping latent statistics.
"""

from .adaptation import adapt, remove_domain
from .autoencoder import AEModel, ae_score, ae_train
from .data import Dataset, load_dataset, load_domain_datasets, save_csv, save_dataset
from .flow import (
    AdaBN,
    BNStats,
    FlowModel,
    LeakyReLU,
    LinearLDU,
    build_flow,
    default_flow,
    layer_generate,
    layer_normalize,
    load_model,
    save_model,
)
from .scoring import EvalReport, anomaly_score, auroc, classify, evaluate, roc_points
from .synth import AnomalySpec, Benchmark, DomainSpec, make_benchmark
from .train import TrainConfig, TrainResult, TrainingDiverged, backward, finetune, nll_objective, pretrain
from .translation import translate, translate_batch

__version__ = "0.1.0"

__all__ = [
    "AdaBN",
    "AEModel",
    "AnomalySpec",
    "Benchmark",
    "BNStats",
    "Dataset",
    "DomainSpec",
    "EvalReport",
    "FlowModel",
    "LeakyReLU",
    "LinearLDU",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "adapt",
    "ae_score",
    "ae_train",
    "anomaly_score",
    "auroc",
    "backward",
    "build_flow",
    "classify",
    "default_flow",
    "evaluate",
    "finetune",
    "layer_generate",
    "layer_normalize",
    "load_dataset",
    "load_domain_datasets",
    "load_model",
    "make_benchmark",
    "nll_objective",
    "pretrain",
    "remove_domain",
    "roc_points",
    "save_csv",
    "save_dataset",
    "save_model",
    "translate",
    "translate_batch",
]
