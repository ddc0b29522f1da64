"""Damped Newton driver shared by the steady initializer and the
iterative reference solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import SolverError, StructuralError


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-8
    max_iter: int = 50
    damping: float = 1.0

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1 or not (0 < self.damping <= 1):
            raise ValueError("invalid Newton configuration")


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float


def newton(residual_fn, jacobian_fn, x0, cfg: NewtonConfig = NewtonConfig(),
           row_scale=None) -> NewtonResult:
    """Solve residual_fn(x) = 0 with an analytic Jacobian and backtracking.

    ``row_scale`` rescales residual rows to comparable magnitudes before the
    infinity-norm test; the step itself uses the unscaled system. A singular
    Jacobian or exhausted iteration budget raises SolverError with the final
    norm attached.
    """
    x = np.asarray(x0, dtype=float).copy()
    scale = np.ones_like(x) if row_scale is None else np.asarray(row_scale, dtype=float)

    def norm(r):
        return float(np.max(np.abs(r * scale))) if r.size else 0.0

    r = np.asarray(residual_fn(x), dtype=float)
    if r.shape[0] != x.shape[0]:
        raise StructuralError(
            f"residual dimension {r.shape[0]} does not match unknowns {x.shape[0]}"
        )
    rn = norm(r)
    for it in range(1, cfg.max_iter + 1):
        if rn <= cfg.tol:
            return NewtonResult(x=x, iterations=it - 1, residual_norm=rn)
        jac = jacobian_fn(x)
        factor = linalg.lu_factor(jac)
        if factor.singular:
            raise SolverError(
                f"singular Jacobian in Newton iteration {it} (pivot row "
                f"{factor.pivot_index})",
                residual=rn,
            )
        dx = factor.solve(-r)
        lam = cfg.damping
        accepted = False
        for _ in range(30):
            x_try = x + lam * dx
            r_try = np.asarray(residual_fn(x_try), dtype=float)
            rn_try = norm(r_try)
            if np.isfinite(rn_try) and rn_try < rn:
                x, r, rn = x_try, r_try, rn_try
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            # Accept the best full step anyway once; quadratic phase often
            # recovers from a locally non-descending direction.
            x_try = x + dx
            r_try = np.asarray(residual_fn(x_try), dtype=float)
            rn_try = norm(r_try)
            if not np.isfinite(rn_try):
                raise SolverError(
                    f"Newton diverged at iteration {it} (non-finite residual)",
                    residual=rn,
                )
            x, r, rn = x_try, r_try, rn_try
    if rn <= cfg.tol:
        return NewtonResult(x=x, iterations=cfg.max_iter, residual_norm=rn)
    exc = SolverError(
        f"Newton did not converge in {cfg.max_iter} iterations "
        f"(residual norm {rn:.3e})",
        residual=rn,
    )
    exc.last_x = x
    raise exc
