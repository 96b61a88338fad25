"""Graded Gauss-Jacobi / Gauss-Legendre rules for power-law integrands.

Every covariance in this package that involves the Riemann-Liouville kernel
reduces to one integral family,

.. math::

    I(a, U, \\lambda) = \\int_0^U q^{b_1} (a + q)^{b_2} e^{-\\lambda q}\\, dq,

with exponents :math:`b_1, b_2 > -1` and :math:`a \\ge 0`.  For ``a == 0`` the
two powers merge into a single endpoint singularity which is absorbed into a
Gauss-Jacobi weight.  For ``a > 0`` the factor :math:`(a+q)^{b_2}` is analytic on
the interval but has a branch point at distance ``a`` from it, so the interval
is cut into dyadically graded panels ``[0, h], [h, 2h], [2h, 4h], ...`` with
``h <= a``.  Each panel then sits at least one panel-length away from every
singularity and a fixed low-order Gauss rule converges geometrically.  The same
grading resolves the boundary layer of :math:`e^{-\\lambda q}`.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = ["QuadratureError", "power_exp_integral"]

#: Nodes per panel for the main rule and for the error-estimate rule.
NODES = 16
CHECK_NODES = 10
#: Decay cut-off: e^{-DECAY_CUTOFF} is below double precision relative to the integral.
DECAY_CUTOFF = 45.0
MIN_PANELS = 6


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, error_estimate: float) -> None:
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


@lru_cache(maxsize=None)
def _legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def _jacobi01(n: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    # weight s**beta on [0, 1]
    x, w = roots_jacobi(n, 0.0, beta)
    return (x + 1.0) / 2.0, w / 2.0 ** (beta + 1.0)


def _integrate(a, U, lam, b1, b2, panels, n):
    """One fixed-order evaluation. All array arguments share one shape."""
    total = np.zeros_like(U)
    h = U * 2.0 ** (-panels)
    merged = a == 0.0

    # first panel [0, h]
    if np.any(merged):
        s, w = _jacobi01(n, b1 + b2)
        hm = h[merged][..., None]
        q = hm * s
        f = np.exp(-lam[merged][..., None] * q)
        total[merged] = hm[..., 0] ** (b1 + b2 + 1.0) * (f @ w)
    if np.any(~merged):
        s, w = _jacobi01(n, b1) if b1 != 0.0 else _legendre01(n)
        hs = h[~merged][..., None]
        q = hs * s
        f = (a[~merged][..., None] + q) ** b2 * np.exp(-lam[~merged][..., None] * q)
        total[~merged] = hs[..., 0] ** (b1 + 1.0) * (f @ w)

    s, w = _legendre01(n)
    a_ = a[..., None]
    lam_ = lam[..., None]
    lo = h
    for _ in range(panels):
        q = lo[..., None] * (1.0 + s)
        f = q**b1 * (a_ + q) ** b2 * np.exp(-lam_ * q)
        total += lo * (f @ w)
        lo = 2.0 * lo
    return total


def power_exp_integral(a, U, lam=0.0, b1=0.0, b2=0.0, *, tol=None):
    """Evaluate ``int_0^U q**b1 * (a+q)**b2 * exp(-lam*q) dq`` elementwise.

    Parameters
    ----------
    a, U, lam : array_like
        Broadcastable non-negative arrays.  ``a`` is the distance of the
        interior branch point from the left endpoint.
    b1, b2 : float
        Exponents, each > -1 (``b1 + b2 > -1`` when ``a == 0``).
    tol : float, optional
        If given, raise :class:`QuadratureError` when the absolute difference
        between the main rule and a lower-order rule on the same panels exceeds
        ``tol``.

    Returns
    -------
    numpy.ndarray or float
    """
    a, U, lam = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(U, dtype=float), np.asarray(lam, dtype=float)
    )
    scalar = a.ndim == 0
    a, U, lam = (np.atleast_1d(x).astype(float, copy=True) for x in (a, U, lam))
    if np.any(a < 0) or np.any(U < 0) or np.any(lam < 0):
        raise ValueError("a, U and lam must be non-negative")

    with np.errstate(divide="ignore"):
        U_eff = np.where(lam > 0, np.minimum(U, DECAY_CUTOFF / lam), U)
    live = U_eff > 0
    out = np.zeros_like(U)
    if np.any(live):
        a_l, U_l, lam_l = a[live], U_eff[live], lam[live]
        with np.errstate(divide="ignore"):
            ratio = np.where(a_l > 0, U_l / a_l, 1.0)
        panels = max(MIN_PANELS, int(np.ceil(np.log2(max(ratio.max(), 1.0)))))
        val = _integrate(a_l, U_l, lam_l, b1, b2, panels, NODES)
        if tol is not None:
            coarse = _integrate(a_l, U_l, lam_l, b1, b2, panels, CHECK_NODES)
            err = float(np.max(np.abs(val - coarse)))
            if err > tol:
                raise QuadratureError("graded Gauss rule did not converge", err)
        out[live] = val
    return float(out[0]) if scalar else out.reshape(np.shape(out))
