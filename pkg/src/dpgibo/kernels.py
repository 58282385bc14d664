"""Covariance kernels with the derivative blocks needed for gradient inference.

Every kernel exposes three quantities:

* ``k(u, v)`` -- the covariance itself,
* ``grad_first(u, V)`` -- the gradient of ``k(u, v)`` with respect to ``u``,
* ``cross_hessian(u, v)`` -- the mixed second derivative ``d^2 k / du_i dv_j``,
  which at ``u == v`` is the prior covariance of the gradient of a GP draw.

Stationary families (RBF and Matern 5/2, 7/2) are written in terms of the
scaled distance ``rho = ||(u - v) / lengthscale||`` through a radial profile
``psi(rho)`` and the two smooth helpers ``A = psi'(rho) / rho`` and
``C = A'(rho) / rho``, so that

    d phi / dr_i         = A * r_i / l_i^2
    d^2 phi / dr_i dr_j  = A * delta_ij / l_i^2 + C * (r_i / l_i^2) (r_j / l_j^2)

with ``r = u - v``.  Neither helper has a singularity at ``rho = 0``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "KernelFamily",
    "Kernel",
    "rbf",
    "matern",
    "polynomial2",
    "kernel_eval",
    "kernel_grad_first",
    "kernel_cross_hessian",
]

_SQRT5 = np.sqrt(5.0)
_SQRT7 = np.sqrt(7.0)


class KernelFamily(str, enum.Enum):
    RBF = "rbf"
    MATERN52 = "matern52"
    MATERN72 = "matern72"
    POLY2 = "poly2"

    @classmethod
    def parse(cls, name: str) -> "KernelFamily":
        key = name.strip().lower().replace("_", "").replace("-", "").replace("/", "")
        aliases = {
            "rbf": cls.RBF,
            "se": cls.RBF,
            "squaredexponential": cls.RBF,
            "matern52": cls.MATERN52,
            "matern2.5": cls.MATERN52,
            "matern72": cls.MATERN72,
            "matern3.5": cls.MATERN72,
            "poly2": cls.POLY2,
            "polynomial2": cls.POLY2,
            "polynomialdeg2": cls.POLY2,
        }
        try:
            return aliases[key]
        except KeyError:
            valid = ", ".join(sorted({f.value for f in cls}))
            raise ValueError(f"unknown kernel family {name!r}; expected one of {valid}") from None


def _radial_profile(family: KernelFamily, rho: NDArray) -> tuple[NDArray, NDArray, NDArray]:
    """Return ``(psi, A, C)`` evaluated at scaled distances ``rho``."""
    if family is KernelFamily.RBF:
        psi = np.exp(-0.5 * rho**2)
        return psi, -psi, psi
    if family is KernelFamily.MATERN52:
        e = np.exp(-_SQRT5 * rho)
        psi = (1.0 + _SQRT5 * rho + 5.0 / 3.0 * rho**2) * e
        a = -5.0 / 3.0 * (1.0 + _SQRT5 * rho) * e
        c = 25.0 / 3.0 * e
        return psi, a, c
    if family is KernelFamily.MATERN72:
        s = _SQRT7
        e = np.exp(-s * rho)
        psi = (1.0 + s * rho + 2.0 * s**2 * rho**2 / 5.0 + s**3 * rho**3 / 15.0) * e
        a = -(s**2 / 15.0) * (3.0 + 3.0 * s * rho + s**2 * rho**2) * e
        c = (s**4 / 15.0) * (1.0 + s * rho) * e
        return psi, a, c
    raise ValueError(f"{family} has no radial profile")


@dataclass(frozen=True)
class Kernel:
    """A positive-definite covariance function on R^d.

    Parameters
    ----------
    family : KernelFamily
        RBF, Matern (nu = 5/2 or 7/2) or the degree-2 polynomial kernel.
    lengthscales : array_like
        One positive value per dimension (ARD) or a scalar for an isotropic
        kernel.  For the polynomial kernel they rescale the inner product,
        ``k(u, v) = s * (sum_j u_j v_j / l_j^2 + 1)^2``.
    output_scale : float
        Multiplicative amplitude ``s`` (the prior variance of stationary
        kernels).
    dim : int, optional
        Required when ``lengthscales`` is a scalar and the dimension cannot be
        inferred.  ``None`` leaves an isotropic kernel dimension-agnostic.
    """

    family: KernelFamily
    lengthscales: NDArray = field(default_factory=lambda: np.ones(1))
    output_scale: float = 1.0
    dim: int | None = None

    def __post_init__(self) -> None:
        fam = self.family if isinstance(self.family, KernelFamily) else KernelFamily.parse(self.family)
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a scalar or a 1-d array")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError(f"lengthscales must be strictly positive, got {ls}")
        if not np.isfinite(self.output_scale) or self.output_scale <= 0:
            raise ValueError(f"output_scale must be positive, got {self.output_scale}")
        dim = self.dim
        if ls.size > 1:
            if dim is not None and dim != ls.size:
                raise ValueError(f"dim={dim} disagrees with {ls.size} lengthscales")
            dim = ls.size
        ls.setflags(write=False)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "output_scale", float(self.output_scale))
        object.__setattr__(self, "dim", dim)

    # -- helpers -----------------------------------------------------------

    @property
    def stationary(self) -> bool:
        return self.family is not KernelFamily.POLY2

    def _check(self, x: NDArray) -> NDArray:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        if self.dim is not None and d != self.dim:
            raise ValueError(f"kernel expects dimension {self.dim}, got {d}")
        return x

    def inv_sq_lengthscales(self, d: int) -> NDArray:
        if self.lengthscales.size == 1:
            return np.full(d, 1.0 / self.lengthscales[0] ** 2)
        return 1.0 / self.lengthscales**2

    def lengthscale_vector(self, d: int) -> NDArray:
        if self.lengthscales.size == 1:
            return np.full(d, self.lengthscales[0])
        return self.lengthscales.copy()

    # -- covariance ----------------------------------------------------------

    def __call__(self, X: ArrayLike, Y: ArrayLike) -> NDArray:
        """Gram block ``k(X, Y)`` of shape ``(len(X), len(Y))``."""
        X = self._check(np.atleast_2d(X))
        Y = self._check(np.atleast_2d(Y))
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        w = self.inv_sq_lengthscales(X.shape[1])
        if self.family is KernelFamily.POLY2:
            return self.output_scale * ((X * w) @ Y.T + 1.0) ** 2
        rho = np.sqrt(_scaled_sqdist(X, Y, w))
        psi, _, _ = _radial_profile(self.family, rho)
        return self.output_scale * psi

    def diag(self, X: ArrayLike) -> NDArray:
        """``k(x, x)`` for every row of ``X``."""
        X = self._check(np.atleast_2d(X))
        if self.family is KernelFamily.POLY2:
            w = self.inv_sq_lengthscales(X.shape[1])
            return self.output_scale * (np.sum(X * X * w, axis=1) + 1.0) ** 2
        return np.full(X.shape[0], self.output_scale)

    def grad_first(self, u: ArrayLike, Y: ArrayLike) -> NDArray:
        """Gradient of ``k(u, y)`` with respect to ``u`` for each row ``y`` of ``Y``.

        Returns an array of shape ``(len(Y), d)``.
        """
        u = self._check(np.asarray(u, dtype=float).reshape(-1))
        Y = self._check(np.atleast_2d(Y))
        if Y.shape[1] != u.size:
            raise ValueError(f"dimension mismatch: {u.size} vs {Y.shape[1]}")
        w = self.inv_sq_lengthscales(u.size)
        if self.family is KernelFamily.POLY2:
            inner = (Y * w) @ u + 1.0
            return self.output_scale * 2.0 * inner[:, None] * (Y * w)
        R = u[None, :] - Y
        rho = np.sqrt(np.sum(R * R * w, axis=1))
        _, a, _ = _radial_profile(self.family, rho)
        return self.output_scale * a[:, None] * (R * w)

    def cross_hessian(self, u: ArrayLike, v: ArrayLike) -> NDArray:
        """Mixed derivative matrix with entries ``d^2 k(u, v) / du_i dv_j``."""
        u = self._check(np.asarray(u, dtype=float).reshape(-1))
        v = self._check(np.asarray(v, dtype=float).reshape(-1))
        if u.size != v.size:
            raise ValueError(f"dimension mismatch: {u.size} vs {v.size}")
        w = self.inv_sq_lengthscales(u.size)
        if self.family is KernelFamily.POLY2:
            inner = float(np.sum(u * v * w)) + 1.0
            return self.output_scale * 2.0 * (np.outer(w * v, w * u) + inner * np.diag(w))
        r = u - v
        rho = np.sqrt(np.sum(r * r * w))
        _, a, c = _radial_profile(self.family, np.array([rho]))
        s = r * w
        # k(u, v) = phi(u - v), so d/dv_j = -d/dr_j
        return -self.output_scale * (a[0] * np.diag(w) + c[0] * np.outer(s, s))

    def prior_gradient_covariance(self, theta: ArrayLike) -> NDArray:
        return self.cross_hessian(theta, theta)


def _scaled_sqdist(X: NDArray, Y: NDArray, w: NDArray) -> NDArray:
    Xs = X * np.sqrt(w)
    Ys = Y * np.sqrt(w)
    D = (
        np.sum(Xs * Xs, axis=1)[:, None]
        + np.sum(Ys * Ys, axis=1)[None, :]
        - 2.0 * Xs @ Ys.T
    )
    np.maximum(D, 0.0, out=D)
    # the expansion above loses digits for nearby points; recompute those exactly
    close = D < 1e-6 * (1.0 + np.sum(Xs * Xs, axis=1)[:, None])
    if np.any(close):
        ii, jj = np.nonzero(close)
        diff = Xs[ii] - Ys[jj]
        D[ii, jj] = np.sum(diff * diff, axis=1)
    return D


def rbf(lengthscales: ArrayLike = 1.0, output_scale: float = 1.0, dim: int | None = None) -> Kernel:
    return Kernel(KernelFamily.RBF, np.atleast_1d(lengthscales), output_scale, dim)


def matern(
    nu: float = 2.5,
    lengthscales: ArrayLike = 1.0,
    output_scale: float = 1.0,
    dim: int | None = None,
) -> Kernel:
    """Matern kernel; only ``nu`` in {5/2, 7/2} is four times differentiable."""
    if np.isclose(nu, 2.5):
        fam = KernelFamily.MATERN52
    elif np.isclose(nu, 3.5):
        fam = KernelFamily.MATERN72
    else:
        raise ValueError(f"Matern smoothness must be 5/2 or 7/2, got {nu}")
    return Kernel(fam, np.atleast_1d(lengthscales), output_scale, dim)


def polynomial2(lengthscales: ArrayLike = 1.0, output_scale: float = 1.0, dim: int | None = None) -> Kernel:
    return Kernel(KernelFamily.POLY2, np.atleast_1d(lengthscales), output_scale, dim)


def _pair(k: Kernel, u: ArrayLike, v: ArrayLike) -> tuple[NDArray, NDArray]:
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if u.size != v.size:
        raise ValueError(f"dimension mismatch: {u.size} vs {v.size}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("kernel arguments must be finite")
    return u, v


def kernel_eval(k: Kernel, u: ArrayLike, v: ArrayLike) -> float:
    u, v = _pair(k, u, v)
    return float(k(u[None, :], v[None, :])[0, 0])


def kernel_grad_first(k: Kernel, u: ArrayLike, v: ArrayLike) -> NDArray:
    u, v = _pair(k, u, v)
    return k.grad_first(u, v[None, :])[0]


def kernel_cross_hessian(k: Kernel, u: ArrayLike, v: ArrayLike) -> NDArray:
    u, v = _pair(k, u, v)
    return k.cross_hessian(u, v)
