"""Sample weights for weighted SAA: kNN and its consensus variant.

Distances are Euclidean on the dataset's standardized covariates (raw
covariates when no standardization is attached).  Ties are broken by
ascending sample index so results are reproducible everywhere.

The consensus weights mix the prosumer's own kNN weights with the kNN
weights of covariates received from its neighbors, each neighbor query
run against the receiver's own dataset:

    w = gamma * knn(x_own) + (1 - gamma) / |N| * sum_m knn(x_m)

Each kNN term is a simplex vector, so the mixture stays on the simplex
for every gamma in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenarios import Dataset

__all__ = ["WeightVector", "WeightConfig", "WeightError", "knn_neighbors", "knn_weights", "cknn_weights", "dump_weights_csv"]

SIMPLEX_TOL = 1e-9


class WeightError(ValueError):
    pass


@dataclass
class WeightVector:
    w: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.validate()

    def validate(self):
        if np.any(self.w < -SIMPLEX_TOL):
            raise WeightError("weights must be non-negative")
        if abs(self.w.sum() - 1.0) > SIMPLEX_TOL:
            raise WeightError(f"weights must sum to one, got {self.w.sum()!r}")

    @property
    def support(self) -> np.ndarray:
        return np.nonzero(self.w > 0.0)[0]


@dataclass
class WeightConfig:
    k: int
    gamma: float = 1.0
    leave_one_out: bool = False

    def validate_for(self, n_samples: int):
        if not (1 <= self.k <= n_samples):
            raise WeightError(f"k={self.k} out of range for {n_samples} samples")
        if not (0.0 <= self.gamma <= 1.0):
            raise WeightError("gamma must lie in [0, 1]")


def _distances(x, dataset: Dataset) -> np.ndarray:
    X = dataset.standardized_covariates()
    q = dataset.standardize_query(np.asarray(x, dtype=float))
    return np.sqrt(((X - q) ** 2).sum(axis=1))


def knn_neighbors(x, dataset: Dataset, k: int, exclude: int | None = None) -> np.ndarray:
    """Indices of the k nearest samples to x, ascending-index tie-break."""
    S = len(dataset)
    avail = S - (1 if exclude is not None else 0)
    if not (1 <= k <= avail):
        raise WeightError(f"k={k} exceeds the {avail} available samples")
    d = _distances(x, dataset)
    if exclude is not None:
        d[exclude] = np.inf
    order = np.argsort(d, kind="stable")
    return np.sort(order[:k])


def knn_weights(x, dataset: Dataset, k: int, exclude: int | None = None) -> WeightVector:
    idx = knn_neighbors(x, dataset, k, exclude=exclude)
    w = np.zeros(len(dataset))
    w[idx] = 1.0 / k
    return WeightVector(w=w, meta={"k": k, "gamma": 1.0, "source": "knn"})


def cknn_weights(
    x_own,
    x_neighbors,
    dataset: Dataset,
    k: int,
    gamma: float,
    exclude: int | None = None,
) -> WeightVector:
    """Consensus kNN weights; with no neighbor covariates behaves as gamma=1."""
    if not (0.0 <= gamma <= 1.0):
        raise WeightError("gamma must lie in [0, 1]")
    own = knn_weights(x_own, dataset, k, exclude=exclude).w
    x_neighbors = list(x_neighbors)
    if not x_neighbors or gamma == 1.0:
        w = own
    else:
        nb = np.zeros(len(dataset))
        for xm in x_neighbors:
            nb += knn_weights(xm, dataset, k, exclude=exclude).w
        nb /= len(x_neighbors)
        w = gamma * own + (1.0 - gamma) * nb
    return WeightVector(w=w, meta={"k": k, "gamma": gamma, "n_shared": len(x_neighbors), "source": "cknn"})


def dump_weights_csv(path, weights: WeightVector) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("sample,weight\n")
        for i, v in enumerate(weights.w):
            f.write(f"{i},{repr(float(v))}\n")
