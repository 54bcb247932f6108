"""Seeded multi-domain synthetic benchmarks with injected test anomalies.

Every domain draws from one shared Gaussian-mixture base shape pushed through
a domain-specific affine map (rotation / scale / shift). Training splits are
normal-only; anomalies appear in test splits only, at an exact contamination
count. All sampling is a pure function of (seed, spec).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset


@dataclass
class DomainSpec:
    """Mixture-of-Gaussians base pushed through an affine transform."""

    weights: np.ndarray
    means: np.ndarray        # (n_components, D)
    covs: np.ndarray         # (n_components, D, D), symmetric positive definite
    transform: np.ndarray    # (D, D)
    shift: np.ndarray        # (D,)
    n_train: int = 5000
    n_test: int = 2000

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        self.transform = np.asarray(self.transform, dtype=float)
        self.shift = np.asarray(self.shift, dtype=float)
        if not math.isclose(self.weights.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative")
        d = self.means.shape[1]
        if self.covs.shape != (self.means.shape[0], d, d):
            raise ValueError("covariance stack must be (n_components, D, D)")
        for c in self.covs:
            if not np.allclose(c, c.T):
                raise ValueError("covariances must be symmetric")
            if np.any(np.linalg.eigvalsh(c) <= 0):
                raise ValueError("covariances must be positive definite")
        if self.transform.shape != (d, d) or self.shift.shape != (d,):
            raise ValueError("transform/shift must match the base dimension")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        X = np.empty((n, self.dim))
        for c in range(len(self.weights)):
            mask = comp == c
            if mask.any():
                X[mask] = rng.multivariate_normal(self.means[c], self.covs[c],
                                                  size=int(mask.sum()))
        return X @ self.transform.T + self.shift


@dataclass
class AnomalySpec:
    """Test-set anomaly generator; training splits stay normal-only."""

    generator: str = "uniform_box"  # "uniform_box" | "shifted_gaussian" | "radial_shell"
    contamination: float = 0.5
    box_margin: float = 1.0         # box half-width multiplier around the normal data
    shift: float = 4.0              # shifted_gaussian: offset along each coordinate pair
    shell_radius: float = 6.0       # radial_shell: center radius
    shell_width: float = 1.0

    def __post_init__(self):
        if self.generator not in ("uniform_box", "shifted_gaussian", "radial_shell"):
            raise ValueError(f"unknown anomaly generator {self.generator!r}")
        if not 0.0 < self.contamination < 1.0:
            raise ValueError("contamination must lie in (0, 1)")

    def sample(self, n: int, reference: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        d = reference.shape[1]
        center = 0.5 * (reference.min(axis=0) + reference.max(axis=0))
        half = 0.5 * (reference.max(axis=0) - reference.min(axis=0))
        if self.generator == "uniform_box":
            lo = center - self.box_margin * half
            hi = center + self.box_margin * half
            return rng.uniform(lo, hi, size=(n, d))
        if self.generator == "shifted_gaussian":
            scale = reference.std(axis=0)
            return rng.normal(center + self.shift * scale, scale, size=(n, d))
        radius = self.shell_radius + self.shell_width * rng.standard_normal(n)
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        return center + radius[:, None] * direction * half


@dataclass
class Benchmark:
    pretrain: dict[str, Dataset]
    target_train: Dataset
    target_test: Dataset
    specs: dict[str, DomainSpec] = field(default_factory=dict)


def rotation_in_plane(dim: int, angle_deg: float, axes=(0, 1)) -> np.ndarray:
    """Identity matrix with a rotation by angle_deg in one coordinate plane."""
    R = np.eye(dim)
    a, b = axes
    t = math.radians(angle_deg)
    R[a, a] = R[b, b] = math.cos(t)
    R[a, b] = -math.sin(t)
    R[b, a] = math.sin(t)
    return R


def default_domain_specs(dim: int = 16, K: int = 3, n_train: int = 5000,
                         n_test: int = 2000) -> dict[str, DomainSpec]:
    """K pre-training domains (rotations plus shifts) and a distinct target.

    The shared base is a two-component mixture separated along the first
    coordinate; pre-training domains rotate the first coordinate plane by
    0/30/60 degrees (cycling for larger K) with per-domain shifts, while the
    target uses a 90-degree rotation and its own shift, so the target law
    matches none of the pre-training laws.
    """
    base_means = np.zeros((2, dim))
    base_means[0, 0] = -2.0
    base_means[1, 0] = 2.0
    base_covs = np.stack([0.5 * np.eye(dim)] * 2)
    weights = np.array([0.5, 0.5])

    def shifted(k: int) -> np.ndarray:
        s = np.zeros(dim)
        s[0] = 1.0 * k
        s[1] = -0.5 * k
        return s

    specs = {}
    for k in range(K):
        specs[f"d{k}"] = DomainSpec(weights, base_means, base_covs,
                                    rotation_in_plane(dim, 30.0 * (k % 3)),
                                    shifted(k), n_train, n_test)
    target_shift = np.zeros(dim)
    target_shift[0] = 2.0
    target_shift[1] = 1.0
    specs["target"] = DomainSpec(weights, base_means, base_covs,
                                 rotation_in_plane(dim, 90.0),
                                 target_shift, n_train, n_test)
    return specs


def make_benchmark(seed: int, K: int = 3, dim: int = 16,
                   specs: dict[str, DomainSpec] | None = None,
                   anomaly: AnomalySpec | None = None) -> Benchmark:
    """Draw K pre-training domains plus a held-out labeled target domain.

    Returns normal-only pre-training sets, a normal-only target training pool
    (for adaptation/fine-tuning), and a labeled target test set whose anomaly
    count is exactly round(contamination * n_test).
    """
    if K < 1 or dim < 1:
        raise ValueError("need K >= 1 and dim >= 1")
    specs = specs or default_domain_specs(dim, K)
    if "target" not in specs:
        raise ValueError("specs must include a 'target' domain")
    anomaly = anomaly or AnomalySpec()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5D47A]))

    pretrain = {}
    for k, spec in specs.items():
        if k == "target":
            continue
        pretrain[k] = Dataset(spec.sample(spec.n_train, rng), domain=k)

    target = specs["target"]
    target_train = Dataset(target.sample(target.n_train, rng), domain="target")
    n_anom = round(anomaly.contamination * target.n_test)
    n_norm = target.n_test - n_anom
    normal = target.sample(n_norm, rng)
    anomalous = anomaly.sample(n_anom, normal, rng)
    X = np.concatenate([normal, anomalous], axis=0)
    y = np.concatenate([np.zeros(n_norm, dtype=int), np.ones(n_anom, dtype=int)])
    order = rng.permutation(target.n_test)
    target_test = Dataset(X[order], y[order], domain="target")
    return Benchmark(pretrain, target_train, target_test, specs)


def translation_pair_specs(dim: int = 2, n_train: int = 2000) -> dict[str, DomainSpec]:
    """Two 2-D Gaussian-mixture 'styles' of one base shape, for translation."""
    means = np.zeros((2, dim))
    means[0, 0] = -1.5
    means[1, 0] = 1.5
    covs = np.stack([0.3 * np.eye(dim)] * 2)
    weights = np.array([0.5, 0.5])
    a_shift = np.zeros(dim)
    b_shift = np.zeros(dim)
    b_shift[0] = 3.0
    b_shift[1] = -2.0
    return {
        "A": DomainSpec(weights, means, covs, np.eye(dim), a_shift, n_train, n_train),
        "B": DomainSpec(weights, means, covs,
                        1.5 * rotation_in_plane(dim, 60.0), b_shift, n_train, n_train),
    }


def make_translation_pair(seed: int, dim: int = 2, n_train: int = 2000):
    """Seeded draw of the two-domain translation benchmark."""
    specs = translation_pair_specs(dim, n_train)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A215]))
    data = {k: Dataset(spec.sample(spec.n_train, rng), domain=k)
            for k, spec in specs.items()}
    return data, specs
