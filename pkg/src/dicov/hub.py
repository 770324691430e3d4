"""Hub-side aggregation and the comparison estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .debias import debias, variance_estimates
from .errors import DimensionMismatch, DuplicateMachine, InvalidParameter
from .glasso import DEFAULT_MAX_ITER, DEFAULT_TOL, graphical_lasso
from .matrixcore import SparseSymMatrix, as_symmetric, empirical_covariance


@dataclass(frozen=True, eq=False)
class HubEstimate:
    theta_bar: np.ndarray
    theta_final: SparseSymMatrix
    tau: float
    M: int


def aggregate(updates) -> np.ndarray:
    """Entrywise mean of the updates, absent entries counting as zero.

    Updates are summed in ``machine_id`` order so the result does not
    depend on arrival order.
    """
    updates = sorted(updates, key=lambda u: u.machine_id)
    if not updates:
        raise InvalidParameter("need at least one update")
    p = updates[0].p
    seen = set()
    for u in updates:
        if u.p != p or u.entries.p != p:
            raise DimensionMismatch(f"update from machine {u.machine_id} has p={u.p}, expected {p}")
        if u.machine_id in seen:
            raise DuplicateMachine(f"machine {u.machine_id} sent more than one update")
        seen.add(u.machine_id)
    total = np.zeros((p, p))
    for u in updates:
        total += u.entries.to_dense()
    return total / len(updates)


def hub_variance(theta_bar) -> np.ndarray:
    return variance_estimates(theta_bar)


def final_threshold(theta_bar, sigma_sq, tau: float, M: int = 1) -> HubEstimate:
    """Zero every off-diagonal cell with ``|theta_bar_ij| <= tau * sigma_ij``.

    The diagonal is copied through untouched.
    """
    theta_bar = as_symmetric(theta_bar, "theta_bar")
    sigma_sq = as_symmetric(sigma_sq, "sigma_sq")
    if tau < 0:
        raise InvalidParameter("tau must be >= 0")
    keep = np.abs(theta_bar) > tau * np.sqrt(sigma_sq)
    np.fill_diagonal(keep, True)
    return HubEstimate(theta_bar, SparseSymMatrix.from_dense(theta_bar, keep=keep), float(tau), int(M))


def combine(updates, tau: float) -> HubEstimate:
    """Average, estimate variances, threshold."""
    updates = list(updates)
    theta_bar = aggregate(updates)
    return final_threshold(theta_bar, hub_variance(theta_bar), tau, M=len(updates))


def naive_estimator(theta_hats) -> np.ndarray:
    """Plain average of the per-machine glasso fits."""
    mats = [as_symmetric(t, "theta_hat") for t in theta_hats]
    if not mats:
        raise InvalidParameter("need at least one estimate")
    if any(m.shape != mats[0].shape for m in mats):
        raise DimensionMismatch("estimates differ in shape")
    return sum(mats[1:], mats[0].copy()) / len(mats)


def full_estimators(
    x,
    lam_full: float,
    tau_full: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, SparseSymMatrix]:
    """Glasso on the pooled data, and its thresholded debiased version."""
    S = empirical_covariance(x)
    fit = graphical_lasso(S, lam_full, tol=tol, max_iter=max_iter)
    theta_d = debias(fit.theta_hat, S)
    thresholded = final_threshold(theta_d, hub_variance(theta_d), tau_full)
    return fit.theta_hat, thresholded.theta_final
