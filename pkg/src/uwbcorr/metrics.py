"""Positioning-error metrics: MAE and circular error probability."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CEP_QUANTILES = (50, 75, 90, 95, 99)


def position_errors(estimates, truths) -> np.ndarray:
    estimates = np.asarray(estimates, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if estimates.shape != truths.shape:
        raise ValueError(f"shape mismatch: {estimates.shape} vs {truths.shape}")
    if estimates.ndim != 2 or estimates.shape[0] == 0:
        raise ValueError("need a non-empty (n, 3) array of positions")
    return np.linalg.norm(estimates - truths, axis=1)


def mae(estimates, truths) -> float:
    """Mean Euclidean distance to the ground truth, meters."""
    return float(position_errors(estimates, truths).mean())


def cep(estimates, truths, q: float) -> float:
    """Smallest radius covering at least q percent of the errors.

    Implemented as the ceil(q/100 * n)-th order statistic; no interpolation,
    so the returned radius is always one of the observed errors.
    """
    if not 0.0 < q <= 100.0:
        raise ValueError(f"quantile must be in (0, 100], got {q}")
    errors = np.sort(position_errors(estimates, truths))
    n = len(errors)
    exact = q * n / 100.0
    k = int(round(exact)) if abs(exact - round(exact)) < 1e-9 else math.ceil(exact)
    return float(errors[max(k, 1) - 1])


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    cep: dict[int, float]
    n_samples: int


def metrics_report(estimates, truths) -> MetricsReport:
    return MetricsReport(
        mae=mae(estimates, truths),
        cep={q: cep(estimates, truths, q) for q in CEP_QUANTILES},
        n_samples=len(np.asarray(estimates)),
    )
