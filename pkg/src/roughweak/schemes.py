"""Left-point Euler scheme for X_T = int_0^T psi(t, W^H_t) dW_t and its moment oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .kernels_cov import HurstParams
from .path_sampler import PathBatch

__all__ = [
    "EulerResult",
    "PsiSpec",
    "discrete_second_moment",
    "euler_left_point",
    "exact_second_moment",
    "reference_solution",
    "second_moment_density",
]


@dataclass(frozen=True)
class PsiSpec:
    """Integrand family.

    ``linear``: psi(t, x) = x (rough Stein-Stein).
    ``rbergomi``: psi(t, x) = sqrt(xi) exp(eta x / 2 - eta^2 t^(2H) / 4), the square
    root of the rough Bergomi variance with flat forward variance ``xi``.
    """

    kind: str = "linear"
    xi: float | None = None
    eta: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "linear":
            return
        if self.kind != "rbergomi":
            raise ValueError(f"unknown psi kind {self.kind!r}")
        if self.xi is None or self.eta is None:
            raise ValueError("rbergomi psi needs xi and eta")
        if not self.xi >= 0:
            raise ValueError(f"forward variance xi must be non-negative, got {self.xi}")

    @classmethod
    def parse(cls, text: str) -> "PsiSpec":
        """Parse ``"linear"`` or ``"rbergomi:<xi>,<eta>"``."""
        kind, _, args = text.strip().partition(":")
        if kind == "linear" and not args:
            return cls("linear")
        if kind == "rbergomi":
            parts = [p for p in args.split(",") if p.strip()]
            if len(parts) != 2:
                raise ValueError(f"expected rbergomi:<xi>,<eta>, got {text!r}")
            return cls("rbergomi", float(parts[0]), float(parts[1]))
        raise ValueError(f"cannot parse psi spec {text!r}")

    def __str__(self) -> str:
        if self.kind == "linear":
            return "linear"
        return f"rbergomi:{self.xi!r},{self.eta!r}"

    def __call__(self, t, x, H: float):
        if self.kind == "linear":
            return x
        return math.sqrt(self.xi) * np.exp(0.5 * self.eta * x - 0.25 * self.eta**2 * np.power(t, 2.0 * H))


@dataclass(frozen=True)
class EulerResult:
    values: np.ndarray
    n: int
    dt: float
    psi: PsiSpec


def euler_left_point(batch: PathBatch, psi: PsiSpec, hp: HurstParams) -> EulerResult:
    """Per path ``sum_i psi(t_i, W^H_{t_i}) (W_{t_{i+1}} - W_{t_i})``.

    Accumulated in ascending ``i`` with Neumaier compensation; rows are
    processed one at a time so memory stays at O(M).
    """
    n = batch.grid.n
    if batch.WH.shape[0] < 2:
        raise ValueError("batch needs at least two grid rows")
    t = batch.grid.times
    total = np.zeros(batch.M)
    comp = np.zeros(batch.M)
    for i in range(n):
        term = psi(t[i], batch.WH[i], hp.H) * (batch.W[i + 1] - batch.W[i])
        s = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - s) + term, (term - s) + total)
        total = s
    return EulerResult(total + comp, n, batch.grid.dt, psi)


def reference_solution(batch: PathBatch, psi: PsiSpec, hp: HurstParams) -> EulerResult:
    """Euler scheme on the finest grid; stands in for X_T in weak-error differences."""
    return euler_left_point(batch, psi, hp)


def second_moment_density(psi: PsiSpec, hp: HurstParams, s, method: str = "analytic"):
    """``g(s) = E[psi(s, s^H V)^2]`` with V standard normal.

    For ``rbergomi`` the analytic value is ``xi`` (lognormal mean one);
    ``method="gauss_hermite"`` evaluates the expectation numerically instead.
    """
    s = np.asarray(s, dtype=float)
    if method == "analytic":
        if psi.kind == "linear":
            out = s ** (2.0 * hp.H)
        else:
            out = np.full(s.shape, float(psi.xi))
    elif method == "gauss_hermite":
        x, w = hermegauss(80)
        w = w / math.sqrt(2.0 * math.pi)
        vals = psi(s[..., None], s[..., None] ** hp.H * x, hp.H) ** 2
        out = vals @ w
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out) if out.ndim == 0 else out


def exact_second_moment(psi: PsiSpec, hp: HurstParams, T: float) -> float:
    """``E[X_T^2] = int_0^T g(s) ds`` by the Ito isometry."""
    if T < 0:
        raise ValueError("T must be non-negative")
    if psi.kind == "linear":
        return T ** (2.0 * hp.H + 1.0) / (2.0 * hp.H + 1.0)
    return float(psi.xi) * T


def discrete_second_moment(psi: PsiSpec, hp: HurstParams, T: float, n: int) -> float:
    """``E[Xbar_T(n)^2] = sum_{i<n} g(t_i) dt`` for the left-point scheme."""
    if n < 1:
        raise ValueError("n must be >= 1")
    dt = T / n
    g = second_moment_density(psi, hp, np.arange(n) * dt)
    return math.fsum(np.atleast_1d(g) * dt)
