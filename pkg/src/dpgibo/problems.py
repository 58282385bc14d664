"""Per-user objectives, synthetic test functions and baseline optimizers.

A :class:`Problem` is a collection of ``n`` user losses sharing a parameter
``theta``.  Querying it at a batch of points returns an ``(n, b)`` matrix of
(optionally noisy) per-user losses.  The diagnostic oracles ``true_loss``,
``gradient`` and ``per_user_gradients`` exist for reporting and for the
gradient-descent baseline; the GP-based optimizer never calls them to make
decisions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import special_ortho_group

from .kernels import Kernel, rbf
from .optimizer import OptimizerConfig, RunRecord, gradient_descent_run
from .privacy import Purpose, rng_stream

__all__ = [
    "Problem",
    "SyntheticGPDraw",
    "normal_location_problem",
    "huber_regression_problem",
    "gp_lengthscale_tuning_problem",
    "noisy_wrapper",
    "svm_surrogate_problem",
    "synthetic_gp_problem",
    "random_search_baseline",
    "dp_gd_baseline",
]

SVM_REG_BOUNDS = ((0.01, 1.0), (0.1, 3.0), (0.01, 5.0))


@dataclass(frozen=True)
class Problem:
    """Per-user black-box objective.

    ``losses(Z)`` maps a ``(b, d)`` batch to the noise-free ``(n, b)``
    per-user losses.  ``noise_std`` is the standard deviation actually added
    to each evaluation; ``declared_sigma`` is what the optimizer is told
    (they differ only when studying misspecification).
    """

    name: str
    dim: int
    n_users: int
    losses: Callable[[NDArray], NDArray]
    noise_std: float = 0.0
    declared_sigma: float = 0.0
    true_loss: Callable[[NDArray], float] | None = None
    gradient: Callable[[NDArray], NDArray] | None = None
    per_user_gradients: Callable[[NDArray], NDArray] | None = None
    gradient_bound: float = math.inf
    box: tuple[NDArray, NDArray] | None = None
    minimizer: NDArray | None = None

    def evaluate(self, Z: ArrayLike, rng: np.random.Generator) -> NDArray:
        """Observed per-user losses at the rows of ``Z``, shape ``(n, b)``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.dim:
            raise ValueError(f"points have dimension {Z.shape[1]}, problem has {self.dim}")
        Y = np.asarray(self.losses(Z), dtype=float).reshape(self.n_users, Z.shape[0])
        if self.noise_std > 0:
            Y = Y + self.noise_std * rng.standard_normal(Y.shape)
        return Y

    def per_user_eval(self, theta: ArrayLike, i: int, rng: np.random.Generator) -> float:
        return float(self.evaluate(np.asarray(theta, dtype=float)[None, :], rng)[i, 0])

    def mean_loss(self, theta: ArrayLike) -> float:
        """Noise-free average of the user losses."""
        return float(np.mean(self.losses(np.asarray(theta, dtype=float)[None, :])))

    def sample_box(self, rng: np.random.Generator, size: int | None = None) -> NDArray:
        if self.box is None:
            raise ValueError(f"problem {self.name!r} has no domain box")
        lo, hi = self.box
        shape = (self.dim,) if size is None else (size, self.dim)
        return lo + (hi - lo) * rng.random(shape)


@dataclass(frozen=True)
class SyntheticGPDraw:
    """``f(x) = sum_j alpha_j k(x, c_j)``, a function with known RKHS norm."""

    kernel: Kernel
    centers: NDArray
    weights: NDArray
    rkhs_norm_sq: float

    @classmethod
    def build(cls, kernel: Kernel, centers: ArrayLike, weights: ArrayLike) -> "SyntheticGPDraw":
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        a = np.asarray(weights, dtype=float).reshape(C.shape[0])
        return cls(kernel, C, a, float(a @ kernel(C, C) @ a))

    @classmethod
    def random(
        cls, kernel: Kernel, dim: int, n_centers: int, rng: np.random.Generator, spread: float = 1.0
    ) -> "SyntheticGPDraw":
        return cls.build(kernel, spread * rng.uniform(-1, 1, (n_centers, dim)), rng.standard_normal(n_centers))

    @property
    def rkhs_norm(self) -> float:
        return math.sqrt(max(self.rkhs_norm_sq, 0.0))

    def __call__(self, X: ArrayLike) -> NDArray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.kernel(X, self.centers) @ self.weights

    def gradient(self, x: ArrayLike) -> NDArray:
        return self.weights @ self.kernel.grad_first(np.asarray(x, dtype=float), self.centers)


def synthetic_gp_problem(draws: list[SyntheticGPDraw], box_halfwidth: float = 2.0) -> Problem:
    """One user per synthetic draw; the loss is their mean."""
    d = draws[0].centers.shape[1]

    def losses(Z):
        return np.stack([f(Z) for f in draws])

    def per_user_grads(theta):
        return np.stack([f.gradient(theta) for f in draws])

    return Problem(
        name="synthetic_gp",
        dim=d,
        n_users=len(draws),
        losses=losses,
        true_loss=lambda th: float(np.mean(losses(np.asarray(th)[None, :]))),
        gradient=lambda th: per_user_grads(th).mean(axis=0),
        per_user_gradients=per_user_grads,
        box=(np.full(d, -box_halfwidth), np.full(d, box_halfwidth)),
    )


def normal_location_problem(
    n: int = 50, d: int = 5, theta_star: ArrayLike | None = None, seed: int = 0
) -> Problem:
    """Users hold ``x_i ~ N(theta_star, I)`` and lose ``||x_i - theta||^2 / 2``."""
    if n < 1:
        raise ValueError("need at least one user")
    ts = np.ones(d) if theta_star is None else np.asarray(theta_star, dtype=float).reshape(d)
    x = ts + rng_stream(seed, 0, Purpose.INIT).standard_normal((n, d))
    xbar = x.mean(axis=0)

    def losses(Z):
        return 0.5 * np.sum((x[:, None, :] - Z[None, :, :]) ** 2, axis=2)

    return Problem(
        name="normal_location",
        dim=d,
        n_users=n,
        losses=losses,
        true_loss=lambda th: float(0.5 * np.mean(np.sum((x - th) ** 2, axis=1))),
        gradient=lambda th: np.asarray(th, dtype=float) - xbar,
        per_user_gradients=lambda th: np.asarray(th, dtype=float)[None, :] - x,
        box=(ts - 3.0, ts + 3.0),
        minimizer=xbar,
    )


def _huber(r: NDArray, c: float) -> NDArray:
    a = np.abs(r)
    return np.where(a <= c, 0.5 * r * r, c * a - 0.5 * c * c)


def _huber_score(r: NDArray, c: float) -> NDArray:
    return np.clip(r, -c, c)


def huber_regression_problem(
    n: int = 100, d: int = 4, theta_star: ArrayLike | None = None, c: float = 1.0, seed: int = 0
) -> Problem:
    """Weighted Huber regression with ``y_i = x_i' theta_star + N(0, 1)``.

    Each user's loss is down-weighted by ``min(1, 2 / ||x_i||^2)``, which
    caps the per-user gradient norm at ``c * sqrt(2)``.
    """
    if n < 1:
        raise ValueError("need at least one user")
    ts = np.ones(d) if theta_star is None else np.asarray(theta_star, dtype=float).reshape(d)
    rng = rng_stream(seed, 0, Purpose.INIT)
    x = rng.standard_normal((n, d))
    y = x @ ts + rng.standard_normal(n)
    w = np.minimum(1.0, 2.0 / np.sum(x * x, axis=1))

    def losses(Z):
        return _huber(y[:, None] - x @ Z.T, c) * w[:, None]

    def per_user_grads(th):
        r = y - x @ np.asarray(th, dtype=float)
        return -(_huber_score(r, c) * w)[:, None] * x

    def true_loss(th):
        return float(np.mean(losses(np.asarray(th, dtype=float)[None, :])))

    def grad(th):
        return per_user_grads(th).mean(axis=0)

    opt = minimize(true_loss, ts, jac=grad, method="BFGS", options={"gtol": 1e-12})
    return Problem(
        name="huber_regression",
        dim=d,
        n_users=n,
        losses=losses,
        true_loss=true_loss,
        gradient=grad,
        per_user_gradients=per_user_grads,
        gradient_bound=c * math.sqrt(2.0),
        box=(ts - 3.0, ts + 3.0),
        minimizer=opt.x,
    )


def gp_lengthscale_tuning_problem(
    d: int = 15,
    n_total: int = 2000,
    seed: int = 0,
    data_noise: float = 0.1,
    relevant_fraction: float = 0.4,
) -> Problem:
    """Tune the log-lengthscales of a GP regression on synthetic GP data.

    Inputs are ``N(0, I / d)`` so that lengthscales in ``exp([-2, 2])``
    span the interesting range in any dimension.  Targets are one draw from
    an ARD RBF GP plus ``N(0, data_noise^2)``; a ``relevant_fraction`` of
    the inputs get short generating lengthscales and the rest long ones.  The data are
    split evenly into training and validation halves.  Validation point
    ``i`` is user ``i`` and its loss is the squared prediction error of the
    GP fit on the training half with lengthscales ``exp(theta)``.
    """
    if n_total < 4:
        raise ValueError("need at least four data points")
    rng = rng_stream(seed, 0, Purpose.INIT)
    n_rel = max(1, int(round(relevant_fraction * d)))
    log_ell = np.concatenate([rng.uniform(-1.0, -0.3, n_rel), rng.uniform(1.0, 2.0, d - n_rel)])
    log_ell = rng.permutation(log_ell)
    X = rng.standard_normal((n_total, d)) / math.sqrt(d)
    K = rbf(np.exp(log_ell))(X, X) + 1e-8 * np.eye(n_total)
    f = np.linalg.cholesky(K) @ rng.standard_normal(n_total)
    y = f + data_noise * rng.standard_normal(n_total)
    n_tr = n_total // 2
    Xtr, ytr, Xva, yva = X[:n_tr], y[:n_tr], X[n_tr:], y[n_tr:]
    noise_var = data_noise**2

    def sq_errors(theta):
        k = rbf(np.exp(np.clip(theta, -10.0, 10.0)))
        F = cho_factor(k(Xtr, Xtr) + noise_var * np.eye(n_tr), lower=True, check_finite=False)
        pred = k(Xva, Xtr) @ cho_solve(F, ytr, check_finite=False)
        return (yva - pred) ** 2

    def losses(Z):
        return np.stack([sq_errors(z) for z in Z], axis=1)

    return Problem(
        name="gp_tuning",
        dim=d,
        n_users=n_total - n_tr,
        losses=losses,
        true_loss=lambda th: float(np.mean(sq_errors(np.asarray(th, dtype=float)))),
        box=(np.full(d, -2.0), np.full(d, 2.0)),
        minimizer=log_ell,
    )


def noisy_wrapper(p: Problem, lam: float, declared_sigma: float | None = None) -> Problem:
    """Add ``N(0, lam^2)`` to every evaluation of ``p``.

    ``declared_sigma`` defaults to ``lam``; set it separately to tell the
    optimizer a wrong noise level.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    total = math.hypot(p.noise_std, lam)
    return replace(
        p,
        name=f"{p.name}+noise",
        noise_std=total,
        declared_sigma=total if declared_sigma is None else declared_sigma,
    )


def svm_surrogate_problem(d: int = 20, seed: int = 0, n: int = 100) -> Problem:
    """Synthetic stand-in for SVM hyperparameter tuning (a SURROGATE, not an SVM).

    The first ``d - 3`` coordinates play the role of log-lengthscales on
    ``[-2, 2]``; the last three are regularization-like parameters on their
    usual intervals.  The mean loss is a rotated sum of ``log(1 + u^2)``
    terms with a planted minimum; each user adds a zero-mean perturbation
    that cancels exactly in the average.
    """
    if d < 4:
        raise ValueError("need d >= 4")
    rng = rng_stream(seed, 0, Purpose.INIT)
    lo = np.concatenate([np.full(d - 3, -2.0), [b[0] for b in SVM_REG_BOUNDS]])
    hi = np.concatenate([np.full(d - 3, 2.0), [b[1] for b in SVM_REG_BOUNDS]])
    width = hi - lo
    star = lo + width * rng.uniform(0.3, 0.7, d)
    scale = 0.3 * width
    R = special_ortho_group.rvs(d, random_state=rng)
    a = rng.uniform(0.5, 1.5, d) / d
    e = rng.standard_normal(n)
    e -= e.mean()
    v = rng.standard_normal(d)

    def u_of(Z):
        return ((Z - star) / scale) @ R.T

    def mean_losses(Z):
        return 0.2 + np.log1p(u_of(Z) ** 2) @ a

    def losses(Z):
        Z = np.atleast_2d(Z)
        wobble = 0.1 * np.sin(((Z - star) / scale) @ v)
        return mean_losses(Z)[None, :] + e[:, None] * wobble[None, :]

    def grad(th):
        u = u_of(np.asarray(th, dtype=float)[None, :])[0]
        return (R.T @ (a * 2 * u / (1 + u * u))) / scale

    return Problem(
        name="svm_surrogate",
        dim=d,
        n_users=n,
        losses=losses,
        true_loss=lambda th: float(mean_losses(np.asarray(th, dtype=float)[None, :])[0]),
        gradient=grad,
        box=(lo, hi),
        minimizer=star,
    )


def random_search_baseline(p: Problem, budget_evals: int, seed: int) -> RunRecord:
    """Uniform random search in the domain box with a running incumbent.

    Each configuration costs ``n`` evaluations (one per user); the number
    of configurations is ``ceil(budget_evals / n)``.  The incumbent is
    chosen on observed mean losses; the ``loss`` column reports the
    diagnostic loss of the incumbent when the problem provides one.
    """
    if budget_evals < 1:
        raise ValueError("budget must be at least one evaluation")
    start = time.perf_counter()
    n_conf = -(-budget_evals // p.n_users)
    rec = RunRecord("random_search", p.dim, meta={"problem": p.name, "budget_evals": budget_evals, "seed": seed})
    best_obs, best = math.inf, None
    for t in range(1, n_conf + 1):
        theta = p.sample_box(rng_stream(seed, t, Purpose.INIT))
        obs = float(np.mean(p.evaluate(theta[None, :], rng_stream(seed, t, Purpose.EVALUATION))))
        if obs < best_obs:
            best_obs, best = obs, theta
        loss = p.true_loss(best) if p.true_loss is not None else best_obs
        rec.append(t, best, loss=loss, batch_size_used=1, cumulative_evaluations=t * p.n_users)
    rec.wall_time = time.perf_counter() - start
    return rec


def dp_gd_baseline(p: Problem, cfg: OptimizerConfig) -> RunRecord:
    """Noisy gradient descent with the true per-user gradients."""
    return gradient_descent_run(p, cfg)
