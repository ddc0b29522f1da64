"""Truncated Taylor-series arithmetic.

A series holds the coefficients x[0..K] of a local expansion
x(t0 + d) = sum_k x[k] d^k. Products convolve, reciprocals recurse on the
leading coefficient, and time differentiation shifts orders. These scalar
operations are the reference semantics for the vectorized kernels used
inside the solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DefsimError


class SeriesSingularity(DefsimError):
    """Reciprocal of a series whose leading coefficient vanishes."""


@dataclass
class Series:
    coeffs: np.ndarray
    unit: str = ""

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 1:
            raise ValueError("series coefficients must be one-dimensional")

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def constant(cls, value, order, unit=""):
        c = np.zeros(order + 1)
        c[0] = value
        return cls(c, unit)


def _coeffs(x) -> np.ndarray:
    return x.coeffs if isinstance(x, Series) else np.asarray(x, dtype=float)


def conv(x, y, k: int) -> float:
    """k-th coefficient of the product series: sum_m x[m] y[k-m]."""
    cx, cy = _coeffs(x), _coeffs(y)
    if k >= cx.shape[0] or k >= cy.shape[0]:
        raise ValueError(f"order {k} exceeds series length")
    acc = 0.0
    for m in range(k + 1):
        acc += cx[m] * cy[k - m]
    return acc


def recip(x) -> Series:
    """Coefficients of 1/x(t); requires a nonzero leading coefficient."""
    cx = _coeffs(x)
    if cx[0] == 0.0:
        raise SeriesSingularity("reciprocal of a series with zero leading coefficient")
    r = np.zeros_like(cx)
    r[0] = 1.0 / cx[0]
    for k in range(1, cx.shape[0]):
        acc = 0.0
        for m in range(k):
            acc += r[m] * cx[k - m]
        r[k] = -acc / cx[0]
    return Series(r, unit=f"1/({x.unit})" if isinstance(x, Series) and x.unit else "")


def derive(x) -> Series:
    """Coefficients of dx/dt: (k+1) x[k+1], truncated at the top order."""
    cx = _coeffs(x)
    d = np.zeros_like(cx)
    n = cx.shape[0]
    d[: n - 1] = np.arange(1, n) * cx[1:]
    return Series(d, unit=x.unit if isinstance(x, Series) else "")


def eval_at(x, dt: float) -> float:
    """Horner evaluation of the truncated expansion at offset dt."""
    cx = _coeffs(x)
    acc = 0.0
    for c in cx[::-1]:
        acc = acc * dt + c
    return acc


def friction_coeff(m, pi, sign_m0: float, k: int) -> float:
    """k-th coefficient of m|m|/pi with the flow sign frozen at the window start.

    With a constant sign s over the window, m|m| = s m^2 and the
    coefficient is s * (m*m*recip(pi))[k]. A sign change inside the window
    is not representable here; the solver detects crossings and shrinks
    the window instead.
    """
    cm, cpi = _coeffs(m), _coeffs(pi)
    if cpi[0] <= 0.0:
        raise SeriesSingularity("friction term needs a positive leading pressure")
    if sign_m0 == 0.0:
        return 0.0
    rp = recip(cpi).coeffs
    acc = 0.0
    for i in range(k + 1):
        mm_i = 0.0
        for m_ in range(i + 1):
            mm_i += cm[m_] * cm[i - m_]
        acc += mm_i * rp[k - i]
    return float(np.sign(sign_m0)) * acc
