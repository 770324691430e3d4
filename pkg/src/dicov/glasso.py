"""Graphical lasso with an unpenalized diagonal.

The solver is the classical block coordinate descent on the covariance side:
every column of the working matrix ``W`` is updated by solving a lasso
problem with coordinate descent, and the precision matrix is read off the
lasso coefficients. Unlike the textbook version no ridge is added to the
diagonal, so ``W`` keeps the diagonal of the sample covariance throughout.
Convergence is declared on the KKT residual of the returned precision
matrix, which is also what :func:`kkt_residual` reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidParameter, MaxIterationsExceeded, NotPositiveDefinite
from .matrixcore import as_symmetric, invert_spd

DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class GlassoSolution:
    theta_hat: np.ndarray
    w: np.ndarray
    lam: float
    iterations: int
    kkt_residual: float
    certified: bool = True


def kkt_residual(theta, sigma_hat, lam: float) -> float:
    """Largest violation of the stationarity conditions.

    With ``G = sigma_hat - inv(theta)``: diagonal cells contribute ``|G_ii|``,
    nonzero off-diagonal cells ``|G_ij + lam * sign(theta_ij)|`` and zero
    off-diagonal cells ``max(0, |G_ij| - lam)``.
    """
    theta = as_symmetric(theta, "theta")
    sigma_hat = as_symmetric(sigma_hat, "sigma_hat")
    return _kkt_residual(theta, sigma_hat, float(lam), invert_spd(theta))


def _kkt_residual(theta, sigma_hat, lam, theta_inv) -> float:
    g = sigma_hat - theta_inv
    viol = np.where(theta != 0, np.abs(g + lam * np.sign(theta)), np.maximum(np.abs(g) - lam, 0.0))
    np.fill_diagonal(viol, np.abs(np.diag(g)))
    return float(viol.max())


def penalized_objective(theta, sigma_hat, lam: float) -> float:
    """``tr(theta S) - log det theta + lam * sum_{i != j} |theta_ij|``."""
    theta = np.asarray(theta, dtype=np.float64)
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return math.inf
    off = np.abs(theta).sum() - np.abs(np.diag(theta)).sum()
    return float(np.sum(theta * sigma_hat) - logdet + lam * off)


@numba.njit(cache=True)
def _lasso_column(W, s, j, lam, b, v, tol, max_pass):
    """Coordinate descent for min 0.5 b'W11 b - s12'b + lam |b|_1.

    ``W11`` is ``W`` with row and column ``j`` removed; this works in place on
    full-length vectors with ``b[j] == 0``. ``v`` is ``W11 @ b``, kept current.
    """
    p = W.shape[0]
    for _ in range(max_pass):
        max_change = 0.0
        for k in range(p):
            if k == j:
                continue
            wkk = W[k, k]
            old = b[k]
            z = s[k, j] - (v[k] - wkk * old)
            if z > lam:
                new = (z - lam) / wkk
            elif z < -lam:
                new = (z + lam) / wkk
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                b[k] = new
                for i in range(p):
                    if i != j:
                        v[i] += delta * W[i, k]
                change = abs(delta) * wkk
                if change > max_change:
                    max_change = change
        if max_change < tol:
            return True
    return False


@numba.njit(cache=True)
def _sweep(W, S, B, lam, tol, max_pass):
    """One pass of block updates over all columns; returns False if a lasso stalled."""
    p = W.shape[0]
    ok = True
    v = np.zeros(p)
    for j in range(p):
        b = B[:, j].copy()
        for i in range(p):
            acc = 0.0
            if i != j:
                for k in range(p):
                    if k != j:
                        acc += W[i, k] * b[k]
            v[i] = acc
        if not _lasso_column(W, S, j, lam, b, v, tol, max_pass):
            ok = False
        B[:, j] = b
        for i in range(p):
            if i != j:
                W[i, j] = v[i]
                W[j, i] = v[i]
    return ok


def _precision_from_blocks(W, B) -> np.ndarray:
    p = W.shape[0]
    theta = -B.copy()
    for j in range(p):
        denom = W[j, j] - W[:, j] @ B[:, j]
        if not denom > 0:
            raise NotPositiveDefinite("working covariance lost positive definiteness")
        theta[:, j] /= denom
        theta[j, j] = 1.0 / denom
    theta = 0.5 * (theta + theta.T)
    return theta


def _initial_w(S, lam) -> np.ndarray:
    """A positive definite start that already satisfies |W_ij - S_ij| <= lam.

    ``(1 - t) S + t diag(S)`` keeps the diagonal of ``S`` and is positive
    definite for ``t > 0`` whenever ``S`` is PSD with positive diagonal.
    """
    off = np.abs(S - np.diag(np.diag(S))).max()
    if off == 0.0 or lam == 0.0:
        return S.copy()
    t = min(1.0, lam / off)
    return (1.0 - t) * S + t * np.diag(np.diag(S))


def graphical_lasso(
    sigma_hat,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> GlassoSolution:
    """Minimize ``tr(theta S) - log det theta + lam * ||theta||_{1,off}``.

    Parameters
    ----------
    sigma_hat : array, shape (p, p)
        Sample covariance with a strictly positive diagonal.
    lam : float
        Penalty on the off-diagonal entries. Must be positive when
        ``sigma_hat`` is singular.
    tol : float
        Required KKT residual of the returned estimate.
    max_iter : int
        Cap on the number of block coordinate sweeps.

    Returns
    -------
    GlassoSolution
        ``kkt_residual <= tol`` is guaranteed.

    Raises
    ------
    MaxIterationsExceeded
        Carries the best iterate (``certified=False``) as ``.solution``.
    NotPositiveDefinite
        If ``lam == 0`` and ``sigma_hat`` is singular, or no positive
        definite starting point exists.
    """
    S = as_symmetric(sigma_hat, "sigma_hat")
    lam = float(lam)
    if lam < 0:
        raise InvalidParameter("lam must be >= 0")
    if np.any(np.diag(S) <= 0):
        raise InvalidParameter("sigma_hat must have a strictly positive diagonal")
    p = S.shape[0]

    if lam == 0.0:
        # unpenalized maximum likelihood has the closed form inv(S)
        theta = invert_spd(S)
        res = _kkt_residual(theta, S, lam, S)
        return GlassoSolution(theta, S, lam, 0, res)

    off = np.abs(S - np.diag(np.diag(S))).max()
    if lam >= off:
        # the diagonal estimate already satisfies every subgradient condition
        theta = np.diag(1.0 / np.diag(S))
        return GlassoSolution(theta, np.diag(np.diag(S)), lam, 0, 0.0)

    W = _initial_w(S, lam)
    B = np.zeros((p, p))
    inner_tol = min(1e-10, tol * 1e-4)
    best = None
    for it in range(1, max_iter + 1):
        _sweep(W, S, B, lam, inner_tol, 10_000)
        theta = _precision_from_blocks(W, B)
        try:
            res = _kkt_residual(theta, S, lam, invert_spd(theta))
        except NotPositiveDefinite:
            continue
        if best is None or res < best.kkt_residual:
            w_sym = 0.5 * (W + W.T)
            best = GlassoSolution(theta, w_sym, lam, it, res, certified=res <= tol)
        if res <= tol:
            return best
    raise MaxIterationsExceeded(
        f"graphical lasso did not reach KKT residual {tol:g} in {max_iter} sweeps"
        + (f" (best {best.kkt_residual:.3g})" if best else ""),
        solution=best,
    )
