"""Affine Markovian surrogate of the Riemann-Liouville fBm.

For H < 1/2 the fBm is a superposition of Ornstein-Uhlenbeck processes,

    W^H_t = c_H int_0^inf Y_t(theta) dtheta,
    Y_t(theta) = int_0^t exp(-(t - s) theta^p) dW_s,   p = 2 / (1 - 2H),

and a quadrature in ``theta`` truncated at ``L`` gives the finite-state surrogate
``What^H_t = c_H sum_l Y^l_t dtheta_l``.  Everything here is Gaussian and is
sampled exactly from closed-form covariances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels_cov import (
    DEFAULT_TOLERANCES,
    HurstParams,
    TimeGrid,
    build_joint_covariance,
    psd_factor,
)
from .path_sampler import DEFAULT_CHUNK, block_normals
from .quadrature import power_exp_integral

__all__ = [
    "ExtendedBatch",
    "QuadratureGrid",
    "build_theta_grid",
    "extended_covariance",
    "fbm_ou_cov",
    "l2_error",
    "l2_error_profile",
    "ou_cov",
    "sample_extended",
    "surrogate_error_variance",
    "surrogate_fbm",
    "tail_variance_bound",
]


@dataclass(frozen=True)
class QuadratureGrid:
    """Nodes ``theta_l`` in ``[0, L]`` and weights ``dtheta_l``."""

    L: float
    nodes: np.ndarray
    weights: np.ndarray
    hp: HurstParams
    rule: str = "uniform"

    def __post_init__(self) -> None:
        nodes, weights = np.asarray(self.nodes, float), np.asarray(self.weights, float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size == 0:
            raise ValueError("nodes and weights must be non-empty 1-d arrays of equal length")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0 or nodes[-1] > self.L:
            raise ValueError("nodes must be strictly increasing within [0, L]")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if self.hp.is_brownian:
            raise ValueError("the Markovian surrogate needs H < 1/2")

    @property
    def N_L(self) -> int:
        return self.nodes.size

    @property
    def speeds(self) -> np.ndarray:
        """Mean-reversion speeds ``theta_l^p``."""
        return self.nodes**self.hp.p

    def to_dict(self) -> dict:
        return {
            "H": self.hp.H,
            "L": self.L,
            "rule": self.rule,
            "nodes": [float(x) for x in self.nodes],
            "weights": [float(w) for w in self.weights],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuadratureGrid":
        return cls(float(data["L"]), np.asarray(data["nodes"], float),
                   np.asarray(data["weights"], float), HurstParams(float(data["H"])),
                   data.get("rule", "explicit"))


def build_theta_grid(L: float, N_L: int, rule: str, hp: HurstParams) -> QuadratureGrid:
    """Quadrature grid on ``[0, L]``.

    ``uniform``: left-endpoint rule ``theta_l = (l-1) L / N_L`` with weights ``L / N_L``.
    ``geometric``: log-spaced nodes on ``[1e-6 L, L]`` with trapezoid weights.
    """
    if not L > 1:
        raise ValueError(f"domain cap L must exceed 1, got {L}")
    if int(N_L) != N_L or N_L < 1:
        raise ValueError(f"node count must be a positive integer, got {N_L}")
    N_L = int(N_L)
    if rule == "uniform":
        h = L / N_L
        return QuadratureGrid(L, np.arange(N_L) * h, np.full(N_L, h), hp, rule)
    if rule == "geometric":
        if N_L < 2:
            raise ValueError("geometric rule needs at least two nodes")
        nodes = np.geomspace(L * 1e-6, L, N_L)
        gaps = np.diff(nodes)
        weights = np.empty(N_L)
        weights[0] = gaps[0] / 2
        weights[-1] = gaps[-1] / 2
        weights[1:-1] = (gaps[:-1] + gaps[1:]) / 2
        return QuadratureGrid(L, nodes, weights, hp, rule)
    raise ValueError(f"unknown quadrature rule {rule!r}")


def _relax(x, t):
    """(1 - exp(-x t)) / x with the limit t at x = 0."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(-x * t) / x
    return np.where(x == 0, t * np.ones_like(out), out)


def ou_cov(theta, eta, t, hp: HurstParams):
    """``cov(Y_t(theta), Y_t(eta)) = (1 - exp(-(theta^p + eta^p) t)) / (theta^p + eta^p)``."""
    if hp.is_brownian:
        raise ValueError("OU representation needs H < 1/2")
    x = np.asarray(theta, float) ** hp.p + np.asarray(eta, float) ** hp.p
    out = _relax(x, t)
    return float(out) if out.ndim == 0 else out


def _ou_time_cov(lam_k, lam_l, ti, tj):
    """cov(Y^k_{ti}, Y^l_{tj}) for arbitrary ti, tj (broadcasting)."""
    lo = np.minimum(ti, tj)
    # the process observed later decays from the common time
    lag_l = np.maximum(tj - ti, 0.0)
    lag_k = np.maximum(ti - tj, 0.0)
    return np.exp(-lam_l * lag_l - lam_k * lag_k) * _relax(lam_k + lam_l, lo)


def _ou_increment_cov(lam, ti, tj, tj1):
    """cov(Y_{ti}, W_{tj1} - W_{tj}) = int_{tj}^{min(tj1, ti)} exp(-lam (ti - r)) dr."""
    b = np.minimum(tj1, ti)
    width = np.maximum(b - tj, 0.0)
    return np.exp(-lam * np.maximum(ti - b, 0.0)) * _relax(lam, width)


def fbm_ou_cov(t, s, speed, hp: HurstParams):
    """``cov(W^H_t, Y_s(theta)) = int_0^{min(t,s)} K(t - r) exp(-(s - r) speed) dr``.

    ``speed = theta^p``.  Evaluated with the graded singular-endpoint quadrature.
    """
    t, s, speed = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float),
                                      np.asarray(speed, float))
    U = np.minimum(t, s)
    a = np.maximum(t - s, 0.0)
    decay = np.exp(-speed * np.maximum(s - t, 0.0))
    b = hp.H - 0.5
    vals = power_exp_integral(a, U, speed, 0.0, b, tol=DEFAULT_TOLERANCES.quad_tol)
    out = math.sqrt(2.0 * hp.H) * decay * vals
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ExtendedBatch:
    """Exact draws of OU states ``Y[l, i, m]`` and Brownian increments ``dW[i, m]``."""

    quadrature: QuadratureGrid
    grid: TimeGrid
    Y: np.ndarray
    dW: np.ndarray
    seed: int

    @property
    def M(self) -> int:
        return self.dW.shape[1]

    @property
    def W(self) -> np.ndarray:
        W = np.zeros((self.grid.n + 1, self.M))
        np.cumsum(self.dW, axis=0, out=W[1:])
        return W


def extended_covariance(quadrature: QuadratureGrid, grid: TimeGrid) -> np.ndarray:
    """Covariance of ``(Y^l_{t_i})_{l, i>=1}`` (node-major) followed by ``(dW_{t_j})_j``."""
    lam = quadrature.speeds
    N, n = lam.size, grid.n
    t = grid.times
    ti = t[1:]
    # Y block indexed (l, i) -> l * n + (i - 1)
    lk = lam[:, None, None, None]
    ll = lam[None, None, :, None]
    Ti = ti[None, :, None, None]
    Tj = ti[None, None, None, :]
    YY = _ou_time_cov(lk, ll, Ti, Tj).reshape(N * n, N * n)
    YdW = _ou_increment_cov(lam[:, None, None], ti[None, :, None],
                            t[None, None, :-1], t[None, None, 1:]).reshape(N * n, n)
    dWdW = np.eye(n) * grid.dt
    return np.block([[YY, YdW], [YdW.T, dWdW]])


def sample_extended(quadrature: QuadratureGrid, grid: TimeGrid, M: int, seed: int,
                    stream_layout: int = DEFAULT_CHUNK,
                    clip_tol: float = DEFAULT_TOLERANCES.clip_tol) -> ExtendedBatch:
    """Exact joint draw of all OU states and Brownian increments on ``grid``."""
    N, n = quadrature.N_L, grid.n
    factor = psd_factor(extended_covariance(quadrature, grid), clip_tol=clip_tol)
    dim = N * n + n
    Y = np.zeros((N, n + 1, M))
    dW = np.zeros((n, M))
    for b, lo in enumerate(range(0, M, stream_layout)):
        paths = min(stream_layout, M - lo)
        X = factor.F @ block_normals(seed, b, paths, dim).T
        Y[:, 1:, lo:lo + paths] = X[: N * n].reshape(N, n, paths)
        dW[:, lo:lo + paths] = X[N * n:]
    return ExtendedBatch(quadrature, grid, Y, dW, seed)


def surrogate_fbm(batch: ExtendedBatch) -> np.ndarray:
    """``What^H_{t_i} = c_H sum_l Y^l_{t_i} dtheta_l`` as an ``(n+1) x M`` matrix."""
    q = batch.quadrature
    return q.hp.c_H * np.tensordot(q.weights, batch.Y, axes=(0, 0))


def tail_variance_bound(L: float, hp: HurstParams) -> float:
    """Upper bound ``c_H^2 (pi/2) L^(2-p) / (p-2)`` on the variance of the truncated tail."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if hp.is_brownian:
        raise ValueError("tail bound needs H < 1/2")
    p = hp.p
    return float(hp.c_H**2 * (math.pi / 2.0) * L ** (2.0 - p) / (p - 2.0))


def _coupled_blocks(quadrature: QuadratureGrid, grid: TimeGrid):
    """Covariances of (W^H_{t_i}) and (What^H_{t_i}) over t_1..t_n."""
    hp = quadrature.hp
    lam, w = quadrature.speeds, quadrature.weights
    c = hp.c_H
    t = grid.times[1:]
    n = t.size
    S11 = build_joint_covariance(grid, hp).S11
    # cross[i, j] = cov(W^H_{t_i}, What^H_{t_j})
    kern = fbm_ou_cov(t[:, None, None], t[None, :, None], lam[None, None, :], hp)
    cross = c * (kern @ w)
    # surrogate covariance from the OU double sum; only t_i <= t_j is needed
    B = np.empty((n, n))
    for i in range(n):
        A = _relax(lam[:, None] + lam[None, :], t[i])
        lags = t[i:] - t[i]
        V = w[None, :] * np.exp(-np.outer(lags, lam))
        row = c * c * (V @ (A @ w))
        B[i, i:] = row
        B[i:, i] = row
    return S11, cross, B


def surrogate_error_variance(quadrature: QuadratureGrid, grid: TimeGrid) -> np.ndarray:
    """Exact ``Var(What^H_{t_i} - W^H_{t_i})`` for ``i = 0..n``."""
    S11, cross, B = _coupled_blocks(quadrature, grid)
    var = np.diag(S11) - 2.0 * np.diag(cross) + np.diag(B)
    return np.concatenate([[0.0], np.maximum(var, 0.0)])


def l2_error_profile(quadrature: QuadratureGrid, grid: TimeGrid, M: int, seed: int,
                     stream_layout: int = DEFAULT_CHUNK,
                     clip_tol: float = DEFAULT_TOLERANCES.clip_tol):
    """Monte Carlo mean-square of ``What^H_{t_i} - W^H_{t_i}`` with standard errors.

    ``W^H`` and the surrogate are drawn jointly from one Gaussian vector whose
    cross-covariance is ``cov(W^H_t, Y_s(theta))``, i.e. both are functionals of
    the same Brownian path.  Returns ``(mean_square, se)`` arrays over ``t_0..t_n``.
    """
    n = grid.n
    S11, cross, B = _coupled_blocks(quadrature, grid)
    factor = psd_factor(np.block([[S11, cross], [cross.T, B]]), clip_tol=clip_tol)
    sums = np.zeros(n)
    sq = np.zeros(n)
    for b, lo in enumerate(range(0, M, stream_layout)):
        paths = min(stream_layout, M - lo)
        X = factor.F @ block_normals(seed, b, paths, 2 * n).T
        D2 = (X[n:] - X[:n]) ** 2
        sums += D2.sum(axis=1)
        sq += (D2**2).sum(axis=1)
    ms = sums / M
    se = np.sqrt(np.maximum(sq / M - ms**2, 0.0) / max(M - 1, 1))
    return np.concatenate([[0.0], ms]), np.concatenate([[0.0], se])


def l2_error(quadrature: QuadratureGrid, grid: TimeGrid | None, M: int, seed: int) -> float:
    """Max over grid points of the Monte Carlo L2 norm of ``What^H_t - W^H_t``.

    ``grid=None`` stands for the trivial grid without interior points and gives 0.
    """
    if grid is None or M == 0:
        return 0.0
    ms, _ = l2_error_profile(quadrature, grid, M, seed)
    return float(np.sqrt(ms.max()))
