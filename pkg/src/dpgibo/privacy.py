"""Clipping, the Gaussian mechanism and Gaussian-DP accounting.

Privacy parameters follow the Gaussian differential privacy convention: a
mechanism is mu-GDP when telling neighbouring inputs apart is at least as
hard as testing N(0, 1) against N(mu, 1).  ``mu_total = 0`` is reserved as
the non-private sentinel: no noise is drawn and nothing is recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BudgetExhaustedError",
    "PrivacyBudget",
    "NoisyGradient",
    "Purpose",
    "rng_stream",
    "clip",
    "clip_aggregate",
    "gaussian_mechanism_scale",
    "privatize_gradient",
    "gdp_compose",
    "max_noise_envelope",
]

_COMPOSE_TOL = 1e-12


class BudgetExhaustedError(RuntimeError):
    """A release would push the composed privacy loss past the total budget."""


class Purpose(IntEnum):
    """Independent random streams used inside one run."""

    ACQUISITION = 0
    PRIVACY = 1
    EVALUATION = 2
    INIT = 3


def rng_stream(seed: int, iteration: int, purpose: Purpose | int) -> np.random.Generator:
    """Counter-based generator for one ``(run seed, iteration, purpose)`` triple.

    Streams for different triples are statistically independent, so extra
    draws in one of them (for example more acquisition restarts) never shift
    the privacy noise.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(iteration), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def clip(v: ArrayLike, B: float) -> NDArray:
    """Radial projection of ``v`` onto the ball of radius ``B``; ``clip(0) = 0``."""
    if not B > 0:
        raise ValueError("clipping bound must be positive")
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= B:
        return v.copy()
    return v * (B / norm)


def _clip_rows(G: NDArray, B: float) -> tuple[NDArray, NDArray]:
    norms = np.linalg.norm(G, axis=1)
    scale = np.ones_like(norms)
    over = norms > B
    scale[over] = B / norms[over]
    return G * scale[:, None], over


def clip_aggregate(per_user: ArrayLike, B: float) -> NDArray:
    """Mean of the per-user rows after clipping each to norm ``B``.

    Replacing one row moves the result by at most ``2B/n``.
    """
    if not B > 0:
        raise ValueError("clipping bound must be positive")
    G = np.asarray(per_user, dtype=float)
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) matrix of per-user gradients")
    clipped, _ = _clip_rows(G, B)
    return clipped.mean(axis=0)


def gaussian_mechanism_scale(sensitivity: float, mu: float) -> float:
    """Noise standard deviation making a release of the given L2 sensitivity mu-GDP."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if sensitivity < 0:
        raise ValueError("sensitivity must be nonnegative")
    return sensitivity / mu


def gdp_compose(mus: ArrayLike) -> float:
    """Composed GDP parameter of a sequence of mechanisms."""
    m = np.asarray(mus, dtype=float).reshape(-1)
    if np.any(m < 0):
        raise ValueError("GDP parameters must be nonnegative")
    return float(math.sqrt(math.fsum(m * m)))


def max_noise_envelope(T: int, d: int, delta: float) -> float:
    """High-probability bound on ``max_t ||w_t||`` for T standard normal d-vectors."""
    if T < 1 or d < 1:
        raise ValueError("T and d must be positive")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    return 4.0 * math.sqrt(d) + 2.0 * math.sqrt(2.0 * math.log(T / delta))


@dataclass
class PrivacyBudget:
    """Total GDP budget split evenly over ``T`` planned releases.

    The ledger records the per-release parameter actually spent.  A release
    that would exceed ``mu_total`` is refused, so stopping early simply
    leaves budget unused.
    """

    mu_total: float
    T: int
    B: float
    n: int
    ledger: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.mu_total < 0 or not math.isfinite(self.mu_total):
            raise ValueError("mu_total must be finite and nonnegative (0 means non-private)")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.B > 0:
            raise ValueError("clipping bound must be positive")
        if self.n < 1:
            raise ValueError("need at least one user")

    @property
    def private(self) -> bool:
        return self.mu_total > 0

    @property
    def per_step_mu(self) -> float:
        return self.mu_total / math.sqrt(self.T) if self.private else 0.0

    @property
    def sensitivity(self) -> float:
        return 2.0 * self.B / self.n

    @property
    def noise_scale(self) -> float:
        """Per-coordinate noise standard deviation ``2 B sqrt(T) / (n mu)``."""
        if not self.private:
            return 0.0
        return gaussian_mechanism_scale(self.sensitivity, self.per_step_mu)

    @property
    def consumed(self) -> float:
        return gdp_compose(self.ledger)

    @property
    def remaining_releases(self) -> int:
        return self.T - len(self.ledger) if self.private else self.T

    def charge(self) -> float:
        """Record one release and return its GDP parameter."""
        if not self.private:
            return 0.0
        step = self.per_step_mu
        if len(self.ledger) >= self.T or gdp_compose(self.ledger + [step]) > self.mu_total + _COMPOSE_TOL:
            raise BudgetExhaustedError(
                f"release {len(self.ledger) + 1} would exceed mu_total={self.mu_total:g} "
                f"(consumed {self.consumed:.6g} over {len(self.ledger)} releases)"
            )
        self.ledger.append(step)
        return step


@dataclass(frozen=True)
class NoisyGradient:
    value: NDArray
    clipped_aggregate: NDArray
    noise: NDArray
    noise_scale: float
    clip_fraction: float


def privatize_gradient(per_user: ArrayLike, budget: PrivacyBudget, rng: np.random.Generator) -> NoisyGradient:
    """Clip, average and perturb per-user gradients, charging one release.

    In non-private mode the noise is exactly zero and the ledger is left
    untouched.
    """
    G = np.asarray(per_user, dtype=float)
    if G.ndim != 2 or G.shape[0] != budget.n:
        raise ValueError(f"expected a ({budget.n}, d) matrix of per-user gradients")
    clipped, over = _clip_rows(G, budget.B)
    g = clipped.mean(axis=0)
    if budget.private:
        budget.charge()
        scale = budget.noise_scale
        noise = scale * rng.standard_normal(g.size)
    else:
        scale = 0.0
        noise = np.zeros_like(g)
    return NoisyGradient(g + noise, g, noise, scale, float(np.mean(over)))
