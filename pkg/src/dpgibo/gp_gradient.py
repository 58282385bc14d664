"""Posterior over the gradient of a zero-mean GP at a query point.

Observations enter only through :func:`posterior_gradient_means`; the
posterior covariance is a function of the design alone, which is what lets
the acquisition step run without touching user data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .kernels import Kernel
from .linalg import DEDUP_TOL, GramFactorization, gram_factorize

logger = logging.getLogger(__name__)

__all__ = [
    "EvaluationSet",
    "GradientPosterior",
    "posterior_gradient_means",
    "posterior_gradient_covariance",
    "gradient_posterior",
    "aggregate_mean_gradient",
]


@dataclass
class EvaluationSet:
    """Append-only design with per-user observations.

    ``observations`` has one row per user and one column per (unique) design
    point.  Re-evaluating an existing point averages the new observations
    into its column and increments ``counts``, so the effective noise of that
    column is ``noise_variance / count``.

    Parameters
    ----------
    dim : int
    n_users : int
    noise_variance : float
        Declared per-evaluation noise variance used for conditioning.
    max_design_points : int, optional
        When set, the oldest points are dropped once the cap is exceeded.
        This departs from the append-only design and logs a warning.
    """

    dim: int
    n_users: int
    noise_variance: float = 0.0
    max_design_points: int | None = None
    points: NDArray = field(init=False)
    observations: NDArray = field(init=False)
    counts: NDArray = field(init=False)

    def __post_init__(self) -> None:
        if self.n_users < 1:
            raise ValueError("need at least one user")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")
        self.points = np.zeros((0, self.dim))
        self.observations = np.zeros((self.n_users, 0))
        self.counts = np.zeros(0, dtype=int)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def point_noise(self) -> NDArray:
        return self.noise_variance / self.counts

    def add(self, Z: ArrayLike, Y: ArrayLike) -> None:
        """Append points ``Z`` (b, d) with observations ``Y`` (n, b)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Y = np.asarray(Y, dtype=float).reshape(self.n_users, Z.shape[0])
        for z, y in zip(Z, Y.T):
            if len(self):
                dist = np.max(np.abs(self.points - z), axis=1)
                j = int(np.argmin(dist))
                if dist[j] <= DEDUP_TOL:
                    c = self.counts[j]
                    self.observations[:, j] = (c * self.observations[:, j] + y) / (c + 1)
                    self.counts[j] = c + 1
                    continue
            self.points = np.vstack([self.points, z])
            self.observations = np.hstack([self.observations, y[:, None]])
            self.counts = np.append(self.counts, 1)
        cap = self.max_design_points
        if cap is not None and len(self) > cap:
            drop = len(self) - cap
            logger.warning("design cap %d exceeded; discarding %d oldest points", cap, drop)
            self.points = self.points[drop:]
            self.observations = self.observations[:, drop:]
            self.counts = self.counts[drop:]

    def factorize(self, k: Kernel) -> GramFactorization:
        return gram_factorize(k, self.points, self.point_noise)


@dataclass(frozen=True)
class GradientPosterior:
    location: NDArray
    per_user_means: NDArray
    covariance: NDArray

    @property
    def covariance_trace(self) -> float:
        return float(np.trace(self.covariance))


def posterior_gradient_means(k: Kernel, ev: EvaluationSet, theta: ArrayLike, fact: GramFactorization | None = None) -> NDArray:
    """Per-user posterior mean gradients at ``theta``, shape ``(n, d)``.

    One factorization of the Gram matrix is shared by every user.
    """
    if len(ev) == 0:
        raise ValueError("evaluation set is empty")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    fact = ev.factorize(k) if fact is None else fact
    G = k.grad_first(theta, fact.points)  # (m, d)
    W = fact.solve(ev.observations.T)  # (m, n)
    return W.T @ G


def posterior_gradient_covariance(
    k: Kernel,
    points: ArrayLike,
    noise_variance: float | ArrayLike,
    theta: ArrayLike,
    fact: GramFactorization | None = None,
) -> NDArray:
    """Covariance of the gradient at ``theta`` given evaluations at ``points``.

    ``noise_variance`` may be a scalar or one value per point.  No
    observation values are needed.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    prior = k.cross_hessian(theta, theta)
    P = np.asarray(points, dtype=float).reshape(-1, theta.size)
    if P.shape[0] == 0:
        return prior
    if fact is None:
        fact = gram_factorize(k, P, noise_variance)
    A = fact.half_solve(k.grad_first(theta, fact.points))
    cov = prior - A.T @ A
    return 0.5 * (cov + cov.T)


def gradient_posterior(k: Kernel, ev: EvaluationSet, theta: ArrayLike) -> GradientPosterior:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    fact = ev.factorize(k)
    means = posterior_gradient_means(k, ev, theta, fact)
    cov = posterior_gradient_covariance(k, fact.points, fact.noise, theta, fact)
    return GradientPosterior(theta, means, cov)


def aggregate_mean_gradient(per_user: ArrayLike) -> NDArray:
    """Unclipped average of the per-user gradients (diagnostics only)."""
    G = np.asarray(per_user, dtype=float)
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) matrix of per-user gradients")
    return G.mean(axis=0)
