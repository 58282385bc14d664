"""Gram-matrix factorization with duplicate merging and jitter escalation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial import cKDTree

from .kernels import Kernel

logger = logging.getLogger(__name__)

__all__ = [
    "IllConditionedGramError",
    "GramFactorization",
    "gram_factorize",
    "merge_duplicates",
    "DEDUP_TOL",
    "JITTER_START",
    "JITTER_MAX",
]

DEDUP_TOL = 1e-10
JITTER_START = 1e-14
JITTER_MAX = 1e-4


class IllConditionedGramError(np.linalg.LinAlgError):
    """Cholesky failed even at the largest admissible jitter."""

    def __init__(self, message: str, condition_estimate: float, jitter: float, size: int):
        super().__init__(message)
        self.condition_estimate = condition_estimate
        self.jitter = jitter
        self.size = size


def merge_duplicates(points: ArrayLike, tol: float = DEDUP_TOL) -> tuple[NDArray, NDArray, NDArray]:
    """Collapse points closer than ``tol`` (max-norm) onto their first occurrence.

    Returns ``(unique_points, inverse, counts)`` where ``inverse[i]`` is the
    row of ``unique_points`` that input row ``i`` was merged into.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    m = P.shape[0]
    if m == 0:
        return P.reshape(0, P.shape[1]), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    # each point joins the earliest point within tol, or starts its own group
    root = np.arange(m)
    for i, j in sorted(cKDTree(P).query_pairs(tol, p=np.inf)):
        if root[j] == j:
            root[j] = root[i]
    keep, inverse = np.unique(root, return_inverse=True)
    counts = np.bincount(inverse, minlength=keep.size)
    return P[keep].copy(), inverse, counts


@dataclass(frozen=True)
class GramFactorization:
    """Cholesky factor of ``K(D, D) + diag(noise) + jitter * I``.

    ``noise`` holds the per-point observation variance; a point observed
    ``c`` times with variance ``sigma2`` each enters once with variance
    ``sigma2 / c`` and the averaged observation, which leaves every posterior
    quantity unchanged.
    """

    points: NDArray
    matrix: NDArray
    noise: NDArray
    jitter: float
    factor: NDArray

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def solve(self, rhs: ArrayLike) -> NDArray:
        rhs = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros_like(rhs)
        return cho_solve((self.factor, True), rhs, check_finite=False)

    def half_solve(self, rhs: ArrayLike) -> NDArray:
        """``L^{-1} rhs`` for the lower factor ``L``."""
        rhs = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros_like(rhs)
        return solve_triangular(self.factor, rhs, lower=True, check_finite=False)


def _factorize(K: NDArray, noise: NDArray, jitter_start: float, jitter_max: float) -> tuple[NDArray, NDArray, float]:
    m = K.shape[0]
    base = K + np.diag(noise)
    base = 0.5 * (base + base.T)
    scale = float(np.mean(np.diag(K))) if m else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    rel = jitter_start
    while True:
        jitter = rel * scale
        A = base + jitter * np.eye(m)
        try:
            L = np.linalg.cholesky(A)
            if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
                return A, L, jitter
        except np.linalg.LinAlgError:
            pass
        if rel >= jitter_max * (1 - 1e-12):
            cond = float(np.linalg.cond(base)) if m else 1.0
            raise IllConditionedGramError(
                f"Gram matrix of size {m} not positive definite at jitter {jitter:.3g} "
                f"(condition estimate {cond:.3g})",
                cond,
                jitter,
                m,
            )
        rel = min(rel * 10.0, jitter_max)


def gram_factorize(
    k: Kernel,
    points: ArrayLike,
    noise_variance: float | ArrayLike = 0.0,
    *,
    counts: ArrayLike | None = None,
    jitter_start: float = JITTER_START,
    jitter_max: float = JITTER_MAX,
) -> GramFactorization:
    """Factorize the (noisy) Gram matrix of ``points`` after merging duplicates.

    Parameters
    ----------
    k : Kernel
    points : (m, d) array
    noise_variance : float or (m,) array
        Observation variance of each submitted point.
    counts : (m,) array, optional
        Number of repeated observations already folded into each point.
    jitter_start, jitter_max : float
        Jitter ladder relative to the mean prior variance; the jitter is
        multiplied by 10 until the Cholesky factorization succeeds.

    Raises
    ------
    IllConditionedGramError
        If factorization fails at ``jitter_max``.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.size == 0:
        d = P.shape[1] if P.ndim == 2 else 0
        empty = np.zeros((0, 0))
        return GramFactorization(np.zeros((0, d)), empty, np.zeros(0), 0.0, empty)
    m = P.shape[0]
    noise = np.broadcast_to(np.asarray(noise_variance, dtype=float), (m,)).copy()
    if np.any(noise < 0):
        raise ValueError("noise variance must be nonnegative")
    c = np.ones(m) if counts is None else np.asarray(counts, dtype=float).reshape(m)
    per_row = noise / c
    U, inverse, _ = merge_duplicates(P)
    if U.shape[0] < m:
        # merged observations combine by precision; an exact one stays exact
        with np.errstate(divide="ignore"):
            prec = np.bincount(inverse, weights=1.0 / per_row, minlength=U.shape[0])
        noise = np.where(np.isinf(prec), 0.0, 1.0 / prec)
    else:
        noise = per_row
    K = k(U, U)
    matrix, L, jitter = _factorize(K, noise, jitter_start, jitter_max)
    return GramFactorization(U, matrix, noise, jitter, L)


def solve_triangular_lower(L: NDArray, rhs: NDArray) -> NDArray:
    if L.shape[0] == 0:
        return np.zeros((0,) + rhs.shape[1:])
    return solve_triangular(L, rhs, lower=True, check_finite=False)
