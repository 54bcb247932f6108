"""Sample matrices with optional labels/domain tags, and their CSV format.

CSV layout: header ``x0,...,x{D-1}[,label][,domain]``, UTF-8, '.' decimal,
newline-terminated rows. Floats are written in shortest round-trip form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    """N x D sample matrix with optional 0/1 labels and a domain tag."""

    X: np.ndarray
    labels: np.ndarray | None = None
    domain: str | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.X.shape[0],):
                raise ValueError("labels must align with rows")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def save_csv(path, X, labels=None, domains=None) -> None:
    """Write samples (plus optional label / domain columns) to CSV."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    header = [f"x{i}" for i in range(X.shape[1])]
    if labels is not None:
        header.append("label")
    if domains is not None:
        header.append("domain")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(X.shape[0]):
            row = [repr(float(v)) for v in X[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            if domains is not None:
                row.append(str(domains[i]))
            writer.writerow(row)


def save_dataset(path, ds: Dataset) -> None:
    domains = None if ds.domain is None else [ds.domain] * ds.n
    save_csv(path, ds.X, labels=ds.labels, domains=domains)


def load_csv(path):
    """Read a dataset CSV; returns (X, labels or None, domains or None)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = {name: j for j, name in enumerate(header)}
    feat = [cols[name] for name in header if name.startswith("x")]
    if not feat:
        raise ValueError(f"{path}: no feature columns (expected x0, x1, ...)")
    X = np.array([[float(row[j]) for j in feat] for row in rows], dtype=float)
    labels = None
    if "label" in cols:
        labels = np.array([int(row[cols["label"]]) for row in rows], dtype=int)
    domains = None
    if "domain" in cols:
        domains = np.array([row[cols["domain"]] for row in rows], dtype=object)
    return X, labels, domains


def load_dataset(path) -> Dataset:
    """Read a CSV holding a single domain (domain column uniform or absent)."""
    X, labels, domains = load_csv(path)
    domain = None
    if domains is not None:
        uniq = sorted(set(domains))
        if len(uniq) > 1:
            raise ValueError(f"{path}: multiple domains present, expected one")
        domain = uniq[0]
    return Dataset(X, labels, domain)


def load_domain_datasets(path) -> dict[str, Dataset]:
    """Read a CSV and split it into one Dataset per domain tag."""
    X, labels, domains = load_csv(path)
    if domains is None:
        return {"pooled": Dataset(X, labels, "pooled")}
    out: dict[str, Dataset] = {}
    for k in dict.fromkeys(domains):  # first-appearance order
        mask = domains == k
        out[str(k)] = Dataset(X[mask], None if labels is None else labels[mask], str(k))
    return out
