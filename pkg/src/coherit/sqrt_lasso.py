"""Scaled (square-root) Lasso by alternating noise-scale and coefficient steps.

The joint program

    min_{beta, sigma > 0}  ||y - X beta||^2 / (2 n sigma) + sigma / 2
                           + lambda0 / sqrt(n) * sum_j ||X_j|| / sqrt(n) * |beta_j|

is solved by alternating ``sigma <- ||y - X beta|| / sqrt(n)`` with a
weighted Lasso in ``beta`` whose penalty is ``sigma * lambda0 * ||X_j|| / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import GramView, NoConvergenceError, RegressionSample, standardize_columns

DEFAULT_B = 0.5


def universal_lambda0(p: int, b: float = DEFAULT_B) -> float:
    """``b * sqrt(2.01 log p)``; ``log p`` is floored at ``log 2`` so p=1 stays positive."""
    return b * math.sqrt(2.01 * math.log(max(p, 2)))


@dataclass(frozen=True)
class SolverSettings:
    outer_tol: float = 1e-6
    max_outer: int = 1000
    inner_tol: float = 1e-7
    max_sweeps: int = 20000
    sigma_floor_rel: float = 1e-10


@dataclass(frozen=True, eq=False)
class ScaledLassoFit:
    beta_hat: np.ndarray
    sigma_hat: float
    lambda0: float
    iterations: int
    kkt_residual: float
    degenerate: bool = False
    converged: bool = True
    sigma_path: tuple = ()
    objective_path: tuple = ()

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]


def _response_scale(y: np.ndarray) -> float:
    n = y.shape[0]
    sd = float(np.linalg.norm(y - y.mean())) / math.sqrt(n)
    if sd > 0.0:
        return sd
    return float(np.linalg.norm(y)) / math.sqrt(n)


def lasso_weighted_cd(
    sample: RegressionSample,
    penalties,
    beta_init=None,
    tol: float = 1e-7,
    max_sweeps: int = 20000,
    gram: GramView | None = None,
) -> np.ndarray:
    """Weighted Lasso ``||y - X b||^2/(2n) + sum_j pen_j |b_j|``.

    Coordinates are visited in ascending order; the returned point satisfies
    the KKT conditions to ``tol``.  Raises ``NoConvergenceError`` when the
    budget of ``max_sweeps`` full sweeps is exhausted first.
    """
    pen = np.asarray(penalties, dtype=np.float64)
    if pen.shape != (sample.p,) or not np.all(np.isfinite(pen)) or np.any(pen < 0):
        raise ValueError("penalties must be a finite non-negative length-p vector")
    if tol <= 0:
        raise ValueError("tol must be positive")
    gram = gram or GramView(sample)
    c = sample.design.T @ sample.response / sample.n
    sweeper = kernels.Sweeper(gram, c, pen, 1.0, beta_init)
    _, kkt, status = sweeper.run(tol, max_sweeps)
    if status != kernels.CONVERGED:
        raise NoConvergenceError(
            f"KKT residual {kkt:.3g} above {tol:.3g} after {sweeper.sweeps} sweeps"
        )
    return sweeper.x


def _joint_kkt(grad, x, pen: float) -> float:
    viol = np.where(x == 0.0, np.maximum(np.abs(grad) - pen, 0.0), np.abs(grad - pen * np.sign(x)))
    return float(viol.max()) if viol.size else 0.0


def scaled_lasso_objective(sample: RegressionSample, beta, sigma: float, lambda0: float) -> float:
    n = sample.n
    r = sample.response - sample.design @ beta
    weights = sample.col_norms / n
    return float(r @ r) / (2 * n * sigma) + sigma / 2 + lambda0 * float(weights @ np.abs(beta))


def fit_scaled_lasso(
    sample: RegressionSample,
    lambda0: float | None = None,
    settings: SolverSettings = SolverSettings(),
    b: float = DEFAULT_B,
) -> ScaledLassoFit:
    """Scaled Lasso fit; ``lambda0`` defaults to ``b * sqrt(2.01 log p)``.

    Works on the column-standardised design, where every penalty weight is
    equal, and maps the coefficients back to the original scale.  The
    reported ``kkt_residual`` is measured on the standardised problem in
    units of the response scale.  A zero response (or a noise scale below
    the floor) returns ``beta = 0``, ``sigma = 0`` with ``degenerate=True``.
    """
    if lambda0 is None:
        lambda0 = universal_lambda0(sample.p, b)
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    n, p = sample.n, sample.p
    y = sample.response
    scale = _response_scale(y)
    if scale == 0.0:
        return ScaledLassoFit(np.zeros(p), 0.0, lambda0, 0, 0.0, degenerate=True)

    std, scales = standardize_columns(sample)
    gram = GramView(std)
    c = std.design.T @ y / n
    pen = np.empty(p)
    tol = settings.inner_tol * scale
    floor = settings.sigma_floor_rel * scale
    root_n = math.sqrt(n)

    sweeper = kernels.Sweeper(gram, c, pen, 1.0)
    sigma = scale
    sigmas = [sigma]
    objectives = []
    kkt = 0.0
    converged = False
    it = 0
    while it < settings.max_outer:
        it += 1
        sweeper.pen[:] = sigma * lambda0 / root_n
        _, kkt, status = sweeper.run(tol, settings.max_sweeps)
        if status != kernels.CONVERGED:
            raise NoConvergenceError(
                f"inner Lasso stalled at KKT residual {kkt / scale:.3g} (outer step {it})"
            )
        resid = y - std.design @ sweeper.x
        sigma_new = float(np.linalg.norm(resid)) / root_n
        if sigma_new < floor:
            return ScaledLassoFit(np.zeros(p), 0.0, lambda0, it, 0.0, degenerate=True)
        objectives.append(
            float(resid @ resid) / (2 * n * sigma_new) + sigma_new / 2
            + lambda0 / root_n * float(np.abs(sweeper.x).sum())
        )
        sigmas.append(sigma_new)
        change = abs(sigma_new - sigma) / max(sigma, floor)
        sigma = sigma_new
        # stationarity of the pair (beta, sigma), not of beta at the previous sigma
        kkt = _joint_kkt(std.design.T @ resid / n, sweeper.x, sigma * lambda0 / root_n)
        if change < settings.outer_tol and kkt <= settings.outer_tol * scale:
            converged = True
            break

    return ScaledLassoFit(
        beta_hat=sweeper.x / scales,
        sigma_hat=sigma,
        lambda0=lambda0,
        iterations=it,
        kkt_residual=kkt / scale,
        converged=converged,
        sigma_path=tuple(sigmas),
        objective_path=tuple(objectives),
    )
