"""Covariances of the joint Gaussian process (W^H, W) and their factorization.

``W^H`` is the Riemann-Liouville fractional Brownian motion

    W^H_t = int_0^t K(t - r) dW_r,    K(r) = sqrt(2H) r^(H - 1/2),

driven by the same Brownian motion ``W``.  On a uniform grid the vector
``(W^H_{t_1}, ..., W^H_{t_n}, W_{t_1}, ..., W_{t_n})`` is Gaussian with a
``2n x 2n`` covariance that is assembled here and factorized by a symmetric
eigendecomposition with clipping of round-off negative eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gamma, hyp2f1, rgamma

from .quadrature import QuadratureError, power_exp_integral

__all__ = [
    "CovBlocks",
    "HurstParams",
    "NotPSDError",
    "PsdFactor",
    "QuadratureError",
    "TimeGrid",
    "Tolerances",
    "build_joint_covariance",
    "cov_bm_bm",
    "cov_fbm_bm",
    "cov_fbm_fbm",
    "psd_factor",
    "rl_kernel",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances; all relative ones are w.r.t. the largest eigenvalue."""

    factor_tol: float = 1e-8
    cov_xcheck_tol: float = 1e-8
    clip_tol: float = 1e-10
    quad_tol: float = 1e-10


DEFAULT_TOLERANCES = Tolerances()


class NotPSDError(ValueError):
    """Raised when a covariance matrix is genuinely indefinite."""

    def __init__(self, min_eigenvalue: float, threshold: float) -> None:
        super().__init__(
            f"matrix is not positive semidefinite: smallest eigenvalue "
            f"{min_eigenvalue:.3e} is below the clipping threshold {-threshold:.3e}"
        )
        self.min_eigenvalue = min_eigenvalue
        self.threshold = threshold


@dataclass(frozen=True)
class HurstParams:
    """Hurst index ``H`` in (0, 1/2] and the constants derived from it."""

    H: float

    def __post_init__(self) -> None:
        if not (0.0 < self.H <= 0.5):
            raise ValueError(f"Hurst parameter must lie in (0, 1/2], got {self.H!r}")

    @property
    def is_brownian(self) -> bool:
        return self.H == 0.5

    @property
    def gamma(self) -> float:
        return 0.5 - self.H

    @property
    def p(self) -> float:
        """Mean-reversion power 2/(1-2H); infinite at H = 1/2."""
        if self.is_brownian:
            return math.inf
        return 2.0 / (1.0 - 2.0 * self.H)

    @property
    def c_H(self) -> float:
        return math.sqrt(2.0 * self.H) / gamma(1.5 - self.H)

    @property
    def c_tilde_H(self) -> float:
        # 1/Gamma(0) = 0 at H = 1/2
        return math.sqrt(2.0 * self.H) * float(rgamma(0.5 - self.H))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i T / n`` on ``[0, T]``."""

    T: float
    n: int

    def __post_init__(self) -> None:
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"step count n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return self.T / self.n

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.n + 1) * self.dt
        t[-1] = self.T
        return t

    def coarsen(self, stride: int) -> "TimeGrid":
        if stride < 1 or self.n % stride:
            raise ValueError(f"stride {stride} does not divide n = {self.n}")
        return TimeGrid(self.T, self.n // stride)


def rl_kernel(r, hp: HurstParams):
    """Riemann-Liouville kernel ``sqrt(2H) r^(H-1/2)`` for ``r > 0``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("kernel is only defined for r > 0")
    out = math.sqrt(2.0 * hp.H) * r_arr ** (hp.H - 0.5)
    return float(out) if out.ndim == 0 else out


def cov_bm_bm(t, s):
    return np.minimum(t, s)


def cov_fbm_bm(t, s, hp: HurstParams):
    """``cov(W^H_t, W_s) = int_0^{min(t,s)} K(t - r) dr`` in closed form."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("times must be non-negative")
    if hp.is_brownian:
        out = np.minimum(t, s)
    else:
        a = hp.H + 0.5
        out = math.sqrt(2.0 * hp.H) / a * (t**a - (t - np.minimum(t, s)) ** a)
    return float(out) if out.ndim == 0 else out


def _fbm_cov_quadrature(u, v, hp: HurstParams, tol):
    # 2H int_0^u (u-r)^b (v-r)^b dr with u <= v, written as 2H int_0^u q^b (d+q)^b dq
    b = hp.H - 0.5
    d = v - u
    return 2.0 * hp.H * power_exp_integral(d, u, 0.0, b, b, tol=tol)


def _fbm_cov_hypergeometric(u, v, hp: HurstParams):
    # u^{2H} G(v/u) with the Gauss hypergeometric series; u <= v, u > 0
    g = hp.gamma
    x = v / u
    G = 2.0 * hp.H * (
        x ** (-g) / (1.0 - g)
        + g * x ** (-1.0 - g) / (1.0 - g) * hyp2f1(1.0, 1.0 + g, 3.0 - g, 1.0 / x) / (2.0 - g)
    )
    return np.where(u == v, u ** (2.0 * hp.H), u ** (2.0 * hp.H) * G)


def cov_fbm_fbm(t, s, hp: HurstParams, method: str = "quadrature", *, tol: float | None = None):
    """``cov(W^H_t, W^H_s) = 2H int_0^{min} (t-r)^(H-1/2) (s-r)^(H-1/2) dr``.

    ``method="quadrature"`` is the primary path (graded Gauss-Jacobi with the
    ``(min - r)^(H-1/2)`` endpoint singularity in the weight).
    ``method="closed_form"`` uses the hypergeometric representation and serves
    as an independent cross-check.  ``tol`` is the quadrature error threshold
    (defaults to :attr:`Tolerances.quad_tol`); exceeding it raises
    :class:`QuadratureError` carrying the achieved estimate.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("times must be non-negative")
    u, v = np.broadcast_arrays(np.minimum(t, s), np.maximum(t, s))
    if hp.is_brownian:
        out = u.astype(float, copy=True)
    elif method == "quadrature":
        out = _fbm_cov_quadrature(u, v, hp, DEFAULT_TOLERANCES.quad_tol if tol is None else tol)
    elif method == "closed_form":
        out = np.zeros(u.shape)
        pos = u > 0
        out[pos] = _fbm_cov_hypergeometric(u[pos], v[pos], hp)
    else:
        raise ValueError(f"unknown covariance method {method!r}")
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CovBlocks:
    """Blocks of the joint covariance of ``(W^H_{t_1..n}, W_{t_1..n})``."""

    S11: np.ndarray
    S12: np.ndarray
    S22: np.ndarray

    @property
    def n(self) -> int:
        return self.S11.shape[0]

    @cached_property
    def joint(self) -> np.ndarray:
        return np.block([[self.S11, self.S12], [self.S12.T, self.S22]])


def build_joint_covariance(
    grid: TimeGrid, hp: HurstParams, method: str = "quadrature"
) -> CovBlocks:
    """Assemble the covariance blocks over ``t_1..t_n`` (``t_0 = 0`` is excluded)."""
    t = grid.times[1:]
    S22 = np.minimum.outer(t, t)
    if hp.is_brownian:
        return CovBlocks(S22.copy(), S22.copy(), S22)
    # only the upper triangle is computed; every entry is independent of the others
    iu, ju = np.triu_indices(grid.n)
    vals = cov_fbm_fbm(t[iu], t[ju], hp, method=method)
    S11 = np.empty((grid.n, grid.n))
    S11[iu, ju] = vals
    S11[ju, iu] = vals
    S12 = cov_fbm_bm(t[:, None], t[None, :], hp)
    return CovBlocks(S11, S12, S22)


@dataclass(frozen=True)
class PsdFactor:
    """``F`` with ``F @ F.T`` reproducing a covariance, plus the clipping report."""

    F: np.ndarray
    eigenvalues: np.ndarray
    clipped_count: int = 0
    clipped_magnitude: float = 0.0
    lambda_max: float = field(default=0.0)

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    def residual(self, cov) -> float:
        """Max-norm of ``F F^T - cov``."""
        cov = cov.joint if isinstance(cov, CovBlocks) else np.asarray(cov)
        return float(np.max(np.abs(self.F @ self.F.T - cov)))


def psd_factor(cov, clip_tol: float = DEFAULT_TOLERANCES.clip_tol) -> PsdFactor:
    """Eigen-factorize a symmetric covariance, clipping rounding-level eigenvalues.

    Eigenvalues below ``clip_tol * lambda_max`` in magnitude are set to zero;
    anything more negative raises :class:`NotPSDError`.  Columns of ``F`` are ordered by
    decreasing eigenvalue and signed so that each column's largest entry is
    positive, which makes the factor deterministic.
    """
    S = cov.joint if isinstance(cov, CovBlocks) else np.asarray(cov, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-14 * max(1.0, float(np.max(np.abs(S))))):
        raise ValueError("covariance must be symmetric")
    if S.shape[0] == 0:
        return PsdFactor(np.zeros((0, 0)), np.zeros(0))
    w, V = np.linalg.eigh(S)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    lam_max = max(float(w[0]), 0.0)
    threshold = clip_tol * lam_max
    if w[-1] < -threshold:
        raise NotPSDError(float(w[-1]), threshold)
    # rounding-level eigenvalues of either sign carry no signal, only noise
    clip = w < threshold if threshold > 0 else w < 0
    clipped_mag = float(np.abs(w[clip]).max()) if np.any(clip) else 0.0
    w = np.where(clip, 0.0, w)
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    V = V * np.where(signs == 0, 1.0, signs)
    F = V * np.sqrt(w)
    return PsdFactor(F, w, int(clip.sum()), clipped_mag, lam_max)
