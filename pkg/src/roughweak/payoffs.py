"""Payoff catalogue, zero-rate Black-Scholes call and the Romano-Touzi estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .kernels_cov import HurstParams
from .path_sampler import PathBatch
from .schemes import PsiSpec, euler_left_point

__all__ = ["PAYOFF_KINDS", "Payoff", "black_scholes_call", "romano_touzi_price"]

PAYOFF_KINDS = ("square", "cube", "heaviside", "shifted_cube", "polynomial", "call")
_ALIASES = {"poly": "polynomial", "x2": "square", "x3": "cube", "step": "heaviside"}


@dataclass(frozen=True)
class Payoff:
    """A payoff function phi(x).

    The grammar accepted by :meth:`parse` is ``kind[:params]``: ``square``,
    ``cube``, ``heaviside`` (1 for x >= 0), ``shifted_cube:c`` for (x+c)^3,
    ``poly:a0,a1,...`` for sum a_k x^k and ``call:K`` for max(x-K, 0).
    """

    kind: str
    shift: float = 0.0
    coeffs: tuple[float, ...] = field(default=())
    strike: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "polynomial" and not self.coeffs:
            raise ValueError("polynomial payoff needs at least one coefficient")

    @classmethod
    def parse(cls, text: str) -> "Payoff":
        head, _, args = text.strip().partition(":")
        kind = _ALIASES.get(head, head)
        try:
            values = tuple(float(a) for a in args.split(",")) if args else ()
        except ValueError:
            raise ValueError(f"bad payoff parameters in {text!r}") from None
        if kind in ("square", "cube", "heaviside"):
            if values:
                raise ValueError(f"payoff {kind!r} takes no parameters")
            return cls(kind)
        if kind == "shifted_cube":
            if len(values) != 1:
                raise ValueError("shifted_cube takes one shift, e.g. shifted_cube:1.5")
            return cls(kind, shift=values[0])
        if kind == "polynomial":
            return cls(kind, coeffs=values)
        if kind == "call":
            if len(values) != 1:
                raise ValueError("call takes one strike, e.g. call:100")
            return cls(kind, strike=values[0])
        raise ValueError(f"unknown payoff kind {head!r}")

    def __str__(self) -> str:
        if self.kind == "shifted_cube":
            return f"shifted_cube:{self.shift!r}"
        if self.kind == "polynomial":
            return "poly:" + ",".join(repr(c) for c in self.coeffs)
        if self.kind == "call":
            return f"call:{self.strike!r}"
        return self.kind

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "square":
            out = x * x
        elif self.kind == "cube":
            out = x * x * x
        elif self.kind == "heaviside":
            out = (x >= 0).astype(float)
        elif self.kind == "shifted_cube":
            out = (x + self.shift) ** 3
        elif self.kind == "polynomial":
            out = np.polynomial.polynomial.polyval(x, self.coeffs)
        else:
            out = np.maximum(x - self.strike, 0.0)
        return float(out) if out.ndim == 0 else out


def black_scholes_call(S0, total_var, K):
    """Zero-rate Black-Scholes call price with total variance ``sigma^2 T``."""
    S0, total_var, K = np.broadcast_arrays(
        np.asarray(S0, dtype=float), np.asarray(total_var, dtype=float), np.asarray(K, dtype=float)
    )
    if np.any(total_var < 0):
        raise ValueError("total variance must be non-negative")
    intrinsic = np.maximum(S0 - K, 0.0)
    sd = np.sqrt(total_var)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(S0 / K) + 0.5 * total_var) / sd
        price = S0 * ndtr(d1) - K * ndtr(d1 - sd)
    out = np.where(sd > 0, price, intrinsic)
    return float(out) if out.ndim == 0 else out


def romano_touzi_price(batch: PathBatch, psi: PsiSpec, rho: float, S0: float, K: float,
                       hp: HurstParams) -> tuple[float, float]:
    """Conditional Monte Carlo call price in the rough Bergomi model.

    Conditionally on the variance-driving Brownian path, log S_T is Gaussian, so
    each path contributes a Black-Scholes price at spot
    ``S0 exp(-rho^2/2 int v ds + rho int sqrt(v) dW)`` and total variance
    ``(1 - rho^2) int v ds``, where ``v = psi^2``.  Both integrals use left
    endpoints on the batch grid.  Returns ``(estimate, standard error)``.
    """
    if psi.kind != "rbergomi":
        raise ValueError("Romano-Touzi pricing needs an rbergomi psi")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    if batch.M < 1:
        raise ValueError("empty path batch")
    t = batch.grid.times
    v = psi(t[:-1, None], batch.WH[:-1], hp.H) ** 2
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("variance path is negative or not finite")
    int_v = v.sum(axis=0) * batch.grid.dt
    int_sqrt_v_dW = euler_left_point(batch, psi, hp).values
    spot = S0 * np.exp(-0.5 * rho**2 * int_v + rho * int_sqrt_v_dW)
    prices = black_scholes_call(spot, (1.0 - rho**2) * int_v, K)
    prices = np.atleast_1d(prices)
    est = float(prices.mean())
    if prices.size < 2:
        se = math.inf
    elif np.all(prices == prices[0]):
        se = 0.0  # std would report rounding noise of the mean
    else:
        se = float(prices.std(ddof=1) / math.sqrt(prices.size))
    return est, se
