"""Design selection that shrinks the posterior gradient covariance at an iterate.

The acquisition value of a batch ``z`` given design ``D`` is the negative
explained variance

    alpha(z; D, theta) = -tr( grad k(theta, D+z) (K + sigma^2 I)^{-1} k(D+z, theta) grad^T )

so ``tr(prior) + alpha`` is the trace of the posterior gradient covariance.
Batches are grown one point at a time.  Each size-``b`` batch is the best of

* the size-``b-1`` batch extended by a multi-start pattern search, and
* symmetric axis designs and regular-simplex designs over a ladder of scales,

followed by cyclic coordinate refinement of every point.  The stopping test
compares the achieved posterior trace (not ``alpha`` itself, which is never
positive) with the tolerance ``epsilon``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

from .gp_gradient import posterior_gradient_covariance
from .kernels import Kernel
from .linalg import JITTER_START, gram_factorize

logger = logging.getLogger(__name__)

__all__ = [
    "AcquisitionConfig",
    "BatchProposal",
    "acquisition_value",
    "posterior_trace",
    "minimize_batch",
    "select_minimal_batch",
    "axis_design",
    "simplex_design",
]


@dataclass(frozen=True)
class AcquisitionConfig:
    """Settings for batch selection.

    ``search_radius`` is the half-width of the candidate box around the
    iterate in units of the kernel lengthscale.  ``b_max=None`` means
    ``2 * (d + 1)``.  ``neighborhood`` (lengthscales beyond the box) limits
    which existing design points the search conditions on; the stopping
    test always uses the full design.  ``None`` keeps every point.
    Batches larger than ``refine_max_batch`` (default ``d + 1``) skip the
    leave-one-out refinement pass, whose cost grows quadratically in ``b``.
    While growing a batch toward ``epsilon``, refinement is also skipped
    when the unrefined trace exceeds ``refine_gate * epsilon``; the last
    admissible size is always refined.
    """

    epsilon: float = 0.5
    b_max: int | None = None
    search_radius: float = 1.0
    restarts: int = 2
    local_steps: int = 15
    candidate_seed_count: int = 32
    refine_sweeps: int = 1
    refine_steps: int = 20
    refine_max_batch: int | None = None
    refine_gate: float = 4.0
    neighborhood: float | None = 6.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.b_max is not None and self.b_max < 1:
            raise ValueError("b_max must be at least 1")
        if self.search_radius <= 0:
            raise ValueError("search_radius must be positive")
        for name in ("restarts", "local_steps", "candidate_seed_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.refine_sweeps < 0 or self.refine_steps < 0:
            raise ValueError("refinement budgets must be nonnegative")
        if not self.refine_gate >= 1:
            raise ValueError("refine_gate must be at least 1")
        if self.neighborhood is not None and self.neighborhood <= 0:
            raise ValueError("neighborhood must be positive")

    def batch_cap(self, d: int) -> int:
        return 2 * (d + 1) if self.b_max is None else self.b_max


@dataclass(frozen=True)
class BatchProposal:
    points: NDArray
    achieved_trace: float
    batch_size_used: int
    hit_cap: bool


class _BaseState:
    """Factor of the existing design's Gram matrix and its whitened gradient block.

    With ``L L^T = K + diag(noise) + jitter I`` and ``A = L^{-1} grad k(D, theta)``
    the posterior gradient covariance is ``prior - A^T A``.
    """

    def __init__(self, k: Kernel, theta: NDArray, points: NDArray, noise: NDArray):
        self.k = k
        self.theta = theta
        d = theta.size
        self.prior_trace = float(np.trace(k.cross_hessian(theta, theta)))
        if points.shape[0]:
            fact = gram_factorize(k, points, noise, jitter_start=_jitter_start(points.shape[0]))
            self.points = fact.points
            self.L = fact.factor
            self.jitter = fact.jitter
            self.A = solve_triangular(self.L, k.grad_first(theta, self.points), lower=True, check_finite=False)
            # candidate scoring multiplies by L^{-1} thousands of times
            self.Linv = solve_triangular(self.L, np.eye(self.L.shape[0]), lower=True, check_finite=False)
        else:
            self.points = np.zeros((0, d))
            self.L = np.zeros((0, 0))
            self.jitter = _jitter_start(1) * float(k.diag(theta[None, :])[0])
            self.A = np.zeros((0, d))
        self.trace = self.prior_trace - float(np.sum(self.A * self.A))

    def cross(self, Z: NDArray) -> NDArray:
        if self.points.shape[0] == 0:
            return np.zeros((0, Z.shape[0]))
        return self.Linv @ self.k(self.points, Z)


class _BatchState:
    """The base design plus a batch ``Z``, conditioned through a Schur complement.

    Candidate scoring costs one triangular solve against the base factor and a
    small one against the batch block, so nothing of size ``|D|^2`` is copied.
    """

    def __init__(self, base: _BaseState, Z: NDArray, sigma2: float, VZ: NDArray | None = None):
        self.base = base
        self.sigma2 = sigma2
        self.Z = Z
        k, theta = base.k, base.theta
        d = theta.size
        b = Z.shape[0]
        self.VZ = base.cross(Z) if VZ is None else VZ
        self.valid = True
        if b == 0:
            self.LS = np.zeros((0, 0))
            self.AZ = np.zeros((0, d))
            self.trace = base.trace
            return
        S = k(Z, Z) + (sigma2 + base.jitter) * np.eye(b) - self.VZ.T @ self.VZ
        try:
            self.LS = np.linalg.cholesky(0.5 * (S + S.T))
        except np.linalg.LinAlgError:
            # coincident noiseless points carry no extra information
            self.valid = False
            self.LS = np.zeros((0, 0))
            self.AZ = np.zeros((0, d))
            self.trace = np.inf
            return
        C = k.grad_first(theta, Z) - self.VZ.T @ base.A
        self.AZ = solve_triangular(self.LS, C, lower=True, check_finite=False)
        self.trace = base.trace - float(np.sum(self.AZ * self.AZ))

    @property
    def theta(self) -> NDArray:
        return self.base.theta

    @property
    def prior_trace(self) -> float:
        return self.base.prior_trace

    @property
    def jitter(self) -> float:
        return self.base.jitter

    def gains(self, W: NDArray) -> NDArray:
        """Reduction of the posterior trace from observing each row of ``W`` once."""
        base, k = self.base, self.base.k
        VW = base.cross(W)
        var = k.diag(W) + self.sigma2 + base.jitter - np.sum(VW * VW, axis=0)
        C = k.grad_first(base.theta, W) - VW.T @ base.A
        if self.AZ.shape[0]:
            U = solve_triangular(self.LS, k(self.Z, W) - self.VZ.T @ VW, lower=True, check_finite=False)
            var -= np.sum(U * U, axis=0)
            C -= U.T @ self.AZ
        num = np.sum(C * C, axis=1)
        ok = var > 0.5 * base.jitter
        out = np.zeros(W.shape[0])
        out[ok] = num[ok] / var[ok]
        return out

    def drop(self, i: int) -> "_BatchState":
        keep = np.arange(self.Z.shape[0]) != i
        return _BatchState(self.base, self.Z[keep], self.sigma2, self.VZ[:, keep])


def _jitter_start(m: int) -> float:
    # never below the rounding level of a size-m Cholesky factorization
    return max(JITTER_START, 4.0 * m * np.finfo(float).eps)


def posterior_trace(k: Kernel, points: ArrayLike, theta: ArrayLike, sigma2: float | ArrayLike) -> float:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    P = np.asarray(points, dtype=float).reshape(-1, theta.size)
    if P.shape[0] == 0:
        return float(np.trace(k.cross_hessian(theta, theta)))
    fact = gram_factorize(k, P, sigma2, jitter_start=_jitter_start(P.shape[0]))
    return float(np.trace(posterior_gradient_covariance(k, fact.points, fact.noise, theta, fact)))


def acquisition_value(k: Kernel, D: ArrayLike, z: ArrayLike, theta: ArrayLike, sigma2: float) -> float:
    """Negative explained gradient variance of the design ``D`` plus batch ``z``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = theta.size
    D = np.asarray(D, dtype=float).reshape(-1, d)
    z = np.asarray(z, dtype=float).reshape(-1, d)
    P = np.vstack([D, z])
    if P.shape[0] == 0:
        return 0.0
    prior = float(np.trace(k.cross_hessian(theta, theta)))
    return posterior_trace(k, P, theta, sigma2) - prior


# -- seed designs -------------------------------------------------------------


def axis_design(theta: ArrayLike, b: int, h: float | ArrayLike) -> NDArray:
    """Points ``theta +- h e_j`` taken axis by axis; wraps at doubled scale past ``2d``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = theta.size
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    pts = []
    level = 1.0
    while len(pts) < b:
        for j in range(d):
            for sign in (1.0, -1.0):
                p = theta.copy()
                p[j] += sign * level * h[j]
                pts.append(p)
        level *= 2.0
    return np.array(pts[:b])


def _regular_simplex(n_vertices: int, d: int) -> NDArray:
    """``n_vertices <= d + 1`` unit-circumradius vertices centred at 0 in the first axes."""
    q = n_vertices - 1
    if q == 0:
        return np.zeros((1, d))
    V = np.eye(q + 1)
    V -= V.mean(axis=0)
    # orthonormal basis of the centred (q)-dim subspace
    U, _, _ = np.linalg.svd(V.T, full_matrices=False)
    coords = V @ U[:, :q]
    coords /= np.linalg.norm(coords[0])
    out = np.zeros((n_vertices, d))
    out[:, :q] = coords
    return out


def simplex_design(theta: ArrayLike, b: int, h: float | ArrayLike) -> NDArray:
    """Regular simplex of circumradius ``h`` around ``theta``, topped up with axis points."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = theta.size
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    nv = min(b, d + 1)
    pts = theta + _regular_simplex(nv, d) * h
    if b > nv:
        pts = np.vstack([pts, axis_design(theta, b - nv, h)])
    return pts


# -- local search ---------------------------------------------------------------


class _Box:
    def __init__(self, theta: NDArray, half_width: NDArray):
        self.center = theta
        self.half = half_width
        self.lo = theta - half_width
        self.hi = theta + half_width

    def clip(self, X: NDArray) -> NDArray:
        return np.clip(X, self.lo, self.hi)

    def uniform(self, rng: np.random.Generator, n: int) -> NDArray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.center.size))


def _pattern_search(
    state: _BatchState,
    X0: NDArray,
    step0: NDArray,
    box: _Box,
    n_steps: int,
) -> tuple[NDArray, NDArray]:
    """Compass search from each row of ``X0``, maximizing the trace reduction."""
    S, d = X0.shape
    X = box.clip(X0.copy())
    best = state.gains(X)
    step = np.array(np.broadcast_to(step0, (S, d)), dtype=float)
    dirs = np.vstack([np.eye(d), -np.eye(d)])
    min_step = 1e-9 * np.max(box.half)
    for _ in range(n_steps):
        active = np.max(step, axis=1) > min_step
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        cand = X[idx, None, :] + dirs[None, :, :] * np.tile(step[idx], (1, 2))[:, :, None]
        cand = box.clip(cand.reshape(-1, d))
        g = state.gains(cand).reshape(len(idx), 2 * d)
        j = np.argmax(g, axis=1)
        gj = g[np.arange(len(idx)), j]
        improved = gj > best[idx] + 1e-15 * max(1.0, state.prior_trace)
        up = idx[improved]
        X[up] = cand.reshape(len(idx), 2 * d, d)[improved, j[improved]]
        best[up] = gj[improved]
        step[idx[~improved]] *= 0.5
    return X, best


def _greedy_point(
    state: _BatchState,
    box: _Box,
    sigma2: float,
    cfg: AcquisitionConfig,
    rng: np.random.Generator,
    ell: NDArray,
) -> NDArray:
    d = state.theta.size
    h = float((sigma2 + state.jitter) ** 0.25)
    h = min(max(h, 1e-6), cfg.search_radius)
    pool = [box.uniform(rng, cfg.candidate_seed_count), axis_design(state.theta, 2 * d, h * ell)]
    pool = box.clip(np.vstack(pool))
    g = state.gains(pool)
    order = np.argsort(-g, kind="stable")[: cfg.restarts]
    X0 = pool[order]
    X, gains = _pattern_search(state, X0, 0.25 * box.half, box, cfg.local_steps)
    # ties resolved by lowest restart index
    return X[int(np.argmax(gains))]


def _refine(
    base: _BaseState,
    Z: NDArray,
    box: _Box,
    sigma2: float,
    cfg: AcquisitionConfig,
    ell: NDArray,
) -> tuple[NDArray, float]:
    """Cyclic coordinate refinement: move each point with the others held fixed."""
    full = _BatchState(base, Z, sigma2)
    Z, current = Z.copy(), full.trace
    for _ in range(cfg.refine_sweeps):
        for i in range(Z.shape[0]):
            st = full.drop(i)
            if not st.valid:
                continue
            scale = np.max(np.abs(Z[i] - base.theta) / ell)
            step = 0.5 * max(scale, 1e-6) * ell
            x, g = _pattern_search(st, Z[i][None, :], step, box, cfg.refine_steps)
            tr = st.trace - g[0]
            if tr < current:
                Z = Z.copy()
                Z[i] = x[0]
                full = _BatchState(base, Z, sigma2)
                current = full.trace
    return Z, current


def _scale_ladder(sigma2: float, jitter: float, radius: float) -> NDArray:
    h0 = (sigma2 + jitter) ** 0.25
    grid = np.logspace(-4, 0, 9) * radius
    return np.unique(np.clip(np.concatenate([grid, [h0, 2 * h0]]), 1e-6, radius))


def _batch_sequence(
    k: Kernel,
    D: NDArray,
    theta: NDArray,
    cfg: AcquisitionConfig,
    sigma2: float,
    rng: np.random.Generator,
    b_limit: int,
    D_noise: NDArray | float | None = None,
    target: float | None = None,
):
    """Yield ``(batch, search_trace)`` for ``b = 1, 2, ..., b_limit``.

    With a ``target`` trace, sizes whose unrefined trace is far above it
    are not refined.
    """
    d = theta.size
    noise = np.broadcast_to(np.asarray(sigma2 if D_noise is None else D_noise, dtype=float), (D.shape[0],))
    ell = k.lengthscale_vector(d) if k.stationary else np.ones(d)
    if k.stationary and cfg.neighborhood is not None and D.shape[0]:
        near = np.sqrt(np.sum(((D - theta) / ell) ** 2, axis=1)) <= cfg.neighborhood + cfg.search_radius
        D, noise = D[near], noise[near]
    base = _BaseState(k, theta, D, noise)
    box = _Box(theta, cfg.search_radius * ell)
    scales = _scale_ladder(sigma2, base.jitter, cfg.search_radius)
    Z = np.zeros((0, d))
    state = _BatchState(base, Z, sigma2)
    for b in range(1, b_limit + 1):
        z = _greedy_point(state, box, sigma2, cfg, rng, ell)
        cands = [np.vstack([Z, z])]
        for h in scales:
            cands.append(axis_design(theta, b, h * ell))
            if b > 1:
                cands.append(simplex_design(theta, b, h * ell))
        cands = [box.clip(c) for c in cands]
        traces = [_BatchState(base, c, sigma2).trace for c in cands]
        best = int(np.argmin(traces))
        Z = cands[best]
        refine_cap = d + 1 if cfg.refine_max_batch is None else cfg.refine_max_batch
        hopeless = target is not None and b < min(b_limit, refine_cap) and traces[best] > cfg.refine_gate * target
        if cfg.refine_sweeps and b <= refine_cap and not hopeless:
            Z, _ = _refine(base, Z, box, sigma2, cfg, ell)
        state = _BatchState(base, Z, sigma2)
        yield Z.copy(), state.trace


def minimize_batch(
    k: Kernel,
    D: ArrayLike,
    theta: ArrayLike,
    b: int,
    cfg: AcquisitionConfig,
    rng: np.random.Generator,
    sigma2: float = 0.0,
    D_noise: ArrayLike | float | None = None,
) -> NDArray:
    """Return ``b`` points approximately minimizing the acquisition value."""
    if b < 1:
        raise ValueError("batch size must be at least 1")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    D = np.asarray(D, dtype=float).reshape(-1, theta.size)
    Z = None
    for Z, _ in _batch_sequence(k, D, theta, cfg, sigma2, rng, b, D_noise):
        pass
    return Z


def select_minimal_batch(
    k: Kernel,
    D: ArrayLike,
    theta: ArrayLike,
    cfg: AcquisitionConfig,
    sigma2: float,
    rng: np.random.Generator,
    D_noise: ArrayLike | float | None = None,
    warn: bool = True,
) -> BatchProposal:
    """Smallest batch whose posterior gradient trace falls to ``cfg.epsilon``.

    ``D_noise`` gives the noise variance of the existing design points when
    they differ from ``sigma2`` (repeated evaluations).  If ``b_max`` is
    reached first the best batch found is returned with ``hit_cap=True``
    and, unless ``warn`` is false, a warning is logged.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = theta.size
    D = np.asarray(D, dtype=float).reshape(-1, d)
    noise = sigma2 if D_noise is None else D_noise
    current = posterior_trace(k, D, theta, noise) if D.shape[0] else float(np.trace(k.cross_hessian(theta, theta)))
    if current <= cfg.epsilon:
        return BatchProposal(np.zeros((0, d)), current, 0, False)
    cap = cfg.batch_cap(d)
    Z, tr = np.zeros((0, d)), current
    for Z, _ in _batch_sequence(k, D, theta, cfg, sigma2, rng, cap, D_noise, target=cfg.epsilon):
        tr = _certified_trace(k, D, noise, Z, sigma2, theta)
        if tr <= cfg.epsilon:
            return BatchProposal(Z, tr, Z.shape[0], False)
    if warn:
        logger.warning(
            "batch cap %d reached with posterior gradient trace %.3g > epsilon %.3g", cap, tr, cfg.epsilon
        )
    return BatchProposal(Z, tr, Z.shape[0], True)


def _certified_trace(k: Kernel, D: NDArray, D_noise, Z: NDArray, sigma2: float, theta: NDArray) -> float:
    """Posterior trace recomputed from a fresh factorization of ``D`` plus ``Z``."""
    nD = np.broadcast_to(np.asarray(D_noise, dtype=float), (D.shape[0],))
    P = np.vstack([D, Z])
    noise = np.concatenate([nD, np.full(Z.shape[0], sigma2)])
    return posterior_trace(k, P, theta, noise)
