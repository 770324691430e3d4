"""Estimation error and support recovery metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatch
from .matrixcore import SparseSymMatrix


@dataclass(frozen=True)
class MetricsRecord:
    estimator: str
    trial: int
    M: int
    beta: float
    mse: float
    linf: float
    fpr: float
    fnr: float
    wall_ms: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(est, truth):
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise DimensionMismatch(f"shape {est.shape} does not match {truth.shape}")
    return est, truth


def frobenius_sq_error(est, truth) -> float:
    """Sum of squared differences over all p*p cells."""
    est, truth = _pair(est, truth)
    return float(np.sum((est - truth) ** 2))


def linf_error(est, truth) -> float:
    est, truth = _pair(est, truth)
    return float(np.max(np.abs(est - truth)))


def support_metrics(est, truth) -> tuple[float, float]:
    """False positive and false negative rates over off-diagonal pairs.

    ``est`` may be a :class:`SparseSymMatrix` or a dense array; ``truth`` is a
    ground-truth model (anything with ``theta``) or a dense precision matrix.
    Only the zero pattern matters. Empty denominators give a rate of 0.
    """
    est_dense = est.to_dense() if isinstance(est, SparseSymMatrix) else np.asarray(est)
    truth_dense = np.asarray(getattr(truth, "theta", truth))
    est_dense, truth_dense = _pair(est_dense, truth_dense)
    iu, ju = np.triu_indices(truth_dense.shape[0], k=1)
    true_edge = truth_dense[iu, ju] != 0
    est_edge = est_dense[iu, ju] != 0
    n_edges = int(true_edge.sum())
    n_zeros = true_edge.size - n_edges
    fpr = np.count_nonzero(est_edge & ~true_edge) / n_zeros if n_zeros else 0.0
    fnr = np.count_nonzero(~est_edge & true_edge) / n_edges if n_edges else 0.0
    return float(fpr), float(fnr)
