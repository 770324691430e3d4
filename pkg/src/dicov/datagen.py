"""Synthetic ground truth, Gaussian sampling and machine splits.

Randomness
----------
All draws use numpy's ``PCG64`` bit generator seeded through
``numpy.random.SeedSequence``. A trial with seed ``s`` gives machine ``m``
the stream ``default_rng([s, m])``; the pooled sample is the concatenation of
the machine blocks in machine order, so every machine can regenerate its own
block without seeing the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .matrixcore import as_data_matrix, as_symmetric, cholesky, invert_spd


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """True precision matrix with its covariance and edge set.

    ``support`` holds the off-diagonal nonzero pairs ``(i, j)`` with
    ``i < j``; ``s`` counts them in both triangles and ``d`` is the largest
    number of nonzeros in a row, diagonal included.
    """

    theta: np.ndarray
    sigma: np.ndarray
    support: frozenset
    s: int
    d: int

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def from_precision(cls, theta) -> "GroundTruthModel":
        theta = as_symmetric(theta, "theta")
        sigma = invert_spd(theta)
        nz = theta != 0
        rows, cols = np.nonzero(np.triu(nz, k=1))
        support = frozenset(zip(rows.tolist(), cols.tolist()))
        return cls(
            theta=theta,
            sigma=sigma,
            support=support,
            s=2 * len(support),
            d=int(nz.sum(axis=1).max()),
        )


def chain_precision(p: int, a: float = 0.4) -> GroundTruthModel:
    """Tridiagonal precision with unit diagonal and ``a`` on both off-diagonals."""
    if p < 2:
        raise InvalidParameter("p must be >= 2")
    if not abs(a) < 0.5:
        raise InvalidParameter(f"|a| must be < 0.5 for positive definiteness, got {a}")
    theta = np.eye(p)
    idx = np.arange(p - 1)
    theta[idx, idx + 1] = a
    theta[idx + 1, idx] = a
    return GroundTruthModel.from_precision(theta)


def sample_gaussian(model: GroundTruthModel, n: int, seed) -> np.ndarray:
    """Draw ``n`` rows from N(0, sigma) as ``L z`` with ``L = cholesky(sigma)``.

    ``seed`` is anything ``numpy.random.default_rng`` accepts; an int or a
    sequence of ints gives a reproducible stream.
    """
    if n < 1:
        raise InvalidParameter("n must be >= 1")
    rng = np.random.default_rng(seed)
    chol = cholesky(model.sigma)
    z = rng.standard_normal((n, model.p))
    return z @ chol.T


def machine_samples(model: GroundTruthModel, n: int, trial_seed: int, machine_id: int) -> np.ndarray:
    """Block of ``n`` samples owned by ``machine_id`` in the trial seeded ``trial_seed``."""
    return sample_gaussian(model, n, [int(trial_seed), int(machine_id)])


def pooled_samples(model: GroundTruthModel, n: int, M: int, trial_seed: int) -> np.ndarray:
    """All ``M * n`` samples of a trial, machine blocks stacked in order."""
    return np.vstack([machine_samples(model, n, trial_seed, m) for m in range(M)])


def split_samples(x, M: int) -> list[np.ndarray]:
    """Split rows into ``M`` equal contiguous blocks, preserving order."""
    x = as_data_matrix(x)
    if M < 1:
        raise InvalidParameter("M must be >= 1")
    if x.shape[0] % M:
        raise InvalidParameter(f"{x.shape[0]} rows cannot be split equally over {M} machines")
    return [block.copy() for block in np.split(x, M)]
