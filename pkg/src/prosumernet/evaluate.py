"""Baseline methods and evaluation metrics.

Method inventory: predict-then-optimize (point-predict the prices with a
kNN mean, then solve the deterministic problem), plain SAA (uniform
weights), weighted SAA with trained kNN weights, and weighted SAA with
consensus-kNN weights.  Evaluation is always ex post: the realized cost
of the committed first stage with the real-time response re-optimized at
the realized outcome.

Peak accounting is import-only: per prosumer, the grid exchange below
zero (export) does not offset another prosumer's import.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DecisionVector, ProsumerParams
from .scenarios import Dataset, Outcome
from .twostage import expost_cost, solve_wsaa
from .weights import knn_neighbors

__all__ = [
    "METHODS",
    "MethodResult",
    "PeakMetrics",
    "solve_po",
    "solve_saa",
    "evaluate_expost",
    "grid_exchange",
    "peak_metrics",
    "results_csv",
]

METHODS = ("PO", "SAA", "WSAA_KNN", "WSAA_CKNN")


@dataclass
class MethodResult:
    method: str
    trial_costs: list[float] = field(default_factory=list)
    import_profile: np.ndarray | None = None   # per-hour aggregate grid import (kW)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.trial_costs))

    @property
    def peak(self) -> float:
        return float(np.max(self.import_profile)) if self.import_profile is not None else float("nan")


@dataclass
class PeakMetrics:
    totals: np.ndarray
    peak: float
    reduction: float | None = None


def solve_po(x_new, dataset: Dataset, params: ProsumerParams, k: int = 1) -> DecisionVector:
    """Predict-then-optimize: point-predict prices as the kNN mean of the
    neighbors' outcomes, then solve the deterministic single-scenario
    problem under that prediction."""
    idx = knn_neighbors(x_new, dataset, k)
    outs = [dataset.outcomes()[i] for i in idx]
    c_q = np.mean([o.c_q for o in outs], axis=0)
    c_nm = np.mean([o.c_nm for o in outs], axis=0) if outs[0].c_nm.size else outs[0].c_nm
    predicted = Outcome(c_q=c_q, c_nm=c_nm)
    res = solve_wsaa(params, [predicted], np.array([1.0]))
    return res.decision


def solve_saa(dataset: Dataset, params: ProsumerParams) -> DecisionVector:
    """Sample average approximation: weighted SAA with uniform weights."""
    S = len(dataset)
    res = solve_wsaa(params, dataset.outcomes(), np.full(S, 1.0 / S))
    return res.decision


def evaluate_expost(z: DecisionVector, realized: Outcome, params: ProsumerParams, use_qp: bool = False) -> float:
    """Realized cost of a committed decision (recourse re-optimized)."""
    cost, _ = expost_cost(params, z, realized, use_qp=use_qp)
    return cost


def grid_exchange(params: ProsumerParams, z: DecisionVector, realized: Outcome) -> np.ndarray:
    """Signed grid exchange trajectory (import positive) at the realized outcome."""
    from .twostage import recourse_q

    return np.asarray(z.p_mt) + recourse_q(params, z, realized)


def peak_metrics(exchanges, baseline_peak: float | None = None) -> PeakMetrics:
    """Aggregate import profile, its peak and the reduction vs a baseline.

    ``exchanges`` holds one signed grid-exchange trajectory per prosumer;
    exports are clipped at zero before summing.
    """
    arr = np.atleast_2d(np.asarray(exchanges, dtype=float))
    totals = np.maximum(arr, 0.0).sum(axis=0)
    peak = float(totals.max())
    reduction = None
    if baseline_peak is not None:
        reduction = 1.0 - peak / baseline_peak if baseline_peak > 0 else 0.0
    return PeakMetrics(totals=totals, peak=peak, reduction=reduction)


def results_csv(results: dict[str, MethodResult]) -> str:
    """Per-trial realized costs in the four-method column layout."""
    cols = [m for m in METHODS if m in results]
    n = max(len(results[m].trial_costs) for m in cols)
    lines = ["trial," + ",".join(cols)]
    for t in range(n):
        row = [str(t)]
        for m in cols:
            costs = results[m].trial_costs
            row.append(repr(float(costs[t])) if t < len(costs) else "")
        lines.append(",".join(row))
    lines.append("mean," + ",".join(repr(results[m].mean_cost) for m in cols))
    return "\n".join(lines) + "\n"
