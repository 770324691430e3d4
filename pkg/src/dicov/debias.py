"""Machine-side estimate: debias the glasso fit and keep what fits the channel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .glasso import DEFAULT_MAX_ITER, DEFAULT_TOL, graphical_lasso
from .matrixcore import SparseSymMatrix, as_data_matrix, as_symmetric, empirical_covariance


@dataclass(frozen=True, eq=False)
class SparseUpdate:
    """What one machine sends to the hub.

    ``bandwidth_used`` counts logical cells of the p x p matrix: one per
    stored diagonal entry, two per stored off-diagonal entry.
    """

    machine_id: int
    p: int
    n: int
    entries: SparseSymMatrix
    rho: float

    @property
    def bandwidth_used(self) -> int:
        return self.entries.n_diagonal + 2 * self.entries.n_offdiagonal

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseUpdate):
            return NotImplemented
        return (
            self.machine_id == other.machine_id
            and self.p == other.p
            and self.n == other.n
            and np.float64(self.rho).view(np.uint64) == np.float64(other.rho).view(np.uint64)
            and self.entries == other.entries
        )

    def __repr__(self) -> str:
        return (
            f"SparseUpdate(machine_id={self.machine_id}, p={self.p}, n={self.n}, "
            f"rho={self.rho!r}, nnz={self.entries.nnz}, bandwidth_used={self.bandwidth_used})"
        )


def debias(theta_hat, sigma_hat) -> np.ndarray:
    """One-step bias correction ``2 theta - theta S theta``.

    Algebraically equal to ``theta + theta (inv(theta) - S) theta`` but
    needs no inverse.
    """
    theta = as_symmetric(theta_hat, "theta_hat")
    S = as_symmetric(sigma_hat, "sigma_hat")
    if theta.shape != S.shape:
        raise InvalidParameter("theta_hat and sigma_hat differ in shape")
    out = 2.0 * theta - theta @ S @ theta
    return 0.5 * (out + out.T)


def variance_estimates(theta) -> np.ndarray:
    """Entrywise ``theta_ii * theta_jj + theta_ij**2``."""
    theta = as_symmetric(theta, "theta")
    diag = np.diag(theta)
    if np.any(diag <= 0):
        raise InvalidParameter("variance estimate needs a strictly positive diagonal")
    return np.outer(diag, diag) + theta**2


def bandwidth_threshold(theta_d, sigma_sq, B: int, machine_id: int = 0, n: int = 0) -> SparseUpdate:
    """Keep the diagonal plus as many significant off-diagonal pairs as fit in ``B``.

    Off-diagonal pairs are ranked by ``|theta_d_ij| / sqrt(sigma_sq_ij)``.
    With room for ``k = (B - p) // 2`` pairs, ``rho`` is the (k+1)-th largest
    score (0 when fewer than k+1 scores are nonzero) and a pair survives iff
    its score is strictly above ``rho``. Ties at ``rho`` are dropped, so the
    budget is never exceeded.
    """
    theta_d = as_symmetric(theta_d, "theta_d")
    sigma_sq = as_symmetric(sigma_sq, "sigma_sq")
    p = theta_d.shape[0]
    B = int(B)
    if B < p:
        raise InvalidParameter(f"bandwidth {B} cannot hold the {p} diagonal entries")
    if np.any(sigma_sq <= 0):
        raise InvalidParameter("variance estimates must be positive")

    iu, ju = np.triu_indices(p, k=1)
    scores = np.abs(theta_d[iu, ju]) / np.sqrt(sigma_sq[iu, ju])
    capacity = (B - p) // 2
    nonzero = np.sort(scores[scores > 0])[::-1]
    rho = float(nonzero[capacity]) if nonzero.size > capacity else 0.0

    keep = np.zeros((p, p), dtype=bool)
    keep[iu, ju] = scores > rho
    np.fill_diagonal(keep, True)
    entries = SparseSymMatrix.from_dense(theta_d, keep=keep)
    return SparseUpdate(machine_id=int(machine_id), p=p, n=int(n), entries=entries, rho=rho)


def machine_estimate(
    x,
    lam: float,
    B: int,
    machine_id: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SparseUpdate:
    """Run the whole worker pipeline on one machine's data block."""
    return fit_and_threshold(x, lam, B, machine_id, tol=tol, max_iter=max_iter)[1]


def fit_and_threshold(x, lam, B, machine_id=0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Like :func:`machine_estimate` but also returns the glasso fit."""
    x = as_data_matrix(x)
    S = empirical_covariance(x)
    fit = graphical_lasso(S, lam, tol=tol, max_iter=max_iter)
    theta_d = debias(fit.theta_hat, S)
    update = bandwidth_threshold(theta_d, variance_estimates(fit.theta_hat), B, machine_id, x.shape[0])
    return fit, update
