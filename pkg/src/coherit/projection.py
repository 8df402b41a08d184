"""Projection directions for the residual corrections.

A direction solves

    min_u  u' S u   subject to   ||S u - g||_inf <= lam

for a sample covariance ``S``.  It is computed through the penalised dual

    min_v  v' S v / 4 + g' v + lam ||v||_1,

whose stationarity condition ``||S v / 2 + g||_inf <= lam`` makes
``u = -v / 2`` primal feasible.  ``lam`` walks down a geometric path until
the dual stops being solvable; the last solvable point is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import kernels
from .core import GramView

SHRINK = 1.5
MAX_STEPS = 10


@dataclass(frozen=True)
class DualSettings:
    rel_tol: float = 1e-7
    # 10 * p * 50 coordinate updates
    max_sweeps: int = 500
    check_every: int = 10
    cap_factor: float = 1e6
    # exact solve on the support once its sign pattern stops changing
    polish: bool = True


@dataclass(frozen=True, eq=False)
class ProjectionDirection:
    u_hat: np.ndarray
    lambda_accepted: float
    dual_steps: int
    feasibility_gap: float
    quad_value: float
    status: str = "ok"
    path_lambdas: tuple = ()
    path_quad_values: tuple = ()

    @property
    def solved(self) -> bool:
        return self.status in ("ok", "zero_target")


def default_lambda_start(p: int, n: int, g_norm: float = 1.0) -> float:
    """``||g||_2 * sqrt(2.01 log p / n)``, with ``log p`` floored at ``log 2``.

    The feasibility threshold of the constraint scales with the target, so
    the path starts at the same multiple of ``||g||_2`` for every target.
    """
    return g_norm * math.sqrt(2.01 * math.log(max(p, 2)) / n)


def theoretical_lambda(sigma_max_eig: float, p: int, n: int, g_norm: float) -> float:
    """Constraint bound ``||g|| * 12 * eig_max(Sigma)^2 * sqrt(log p) / sqrt(n)``."""
    return g_norm * 12.0 * sigma_max_eig**2 * math.sqrt(math.log(max(p, 2))) / math.sqrt(n)


def dual_objective(gram: GramView, g, lam: float, v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return gram.quad(v) / 4 + float(np.dot(g, v)) + lam * float(np.abs(v).sum())


def _unbounded_certificate(gram: GramView, g, lam: float, d) -> bool:
    """True if the null-space part of ``d`` proves the dual is unbounded.

    Any ``d`` with ``X d = 0`` and ``g'd + lam ||d||_1 < 0`` is a descent ray
    along which the dual objective decreases linearly forever.
    """
    basis = gram.row_space
    d_null = d - basis @ (basis.T @ d)
    l1 = float(np.abs(d_null).sum())
    if l1 == 0.0:
        return False
    slope = float(np.dot(g, d_null)) + lam * l1
    return slope < -1e-6 * lam * l1


def _polish(gram: GramView, g, lam: float, v):
    """Exact minimiser on the current support and signs, or ``None``.

    Solves ``S_AA v_A / 2 = -(g_A + lam s_A)`` and keeps the result only if
    the signs are reproduced.
    """
    active = np.flatnonzero(v)
    if active.size == 0 or active.size > gram.n:
        return None
    signs = np.sign(v[active])
    if gram.dense:
        S_aa = gram.matrix[np.ix_(active, active)]
    else:
        Xa = gram.design[:, active]
        S_aa = Xa.T @ Xa * gram.scale
    try:
        factor = cho_factor(S_aa, check_finite=False)
    except LinAlgError:
        return None
    w = cho_solve(factor, -2.0 * (g[active] + lam * signs), check_finite=False)
    if not np.array_equal(np.sign(w), signs):
        return None
    out = np.zeros_like(v)
    out[active] = w
    return out


def _dual_kkt(gram: GramView, g, lam: float, v) -> float:
    grad = 0.5 * gram.gram_vec(v) + g
    viol = np.where(v == 0.0, np.maximum(np.abs(grad) - lam, 0.0), np.abs(grad + lam * np.sign(v)))
    return float(viol.max())


def solve_dual_penalized(
    gram: GramView,
    g,
    lam: float,
    v_init=None,
    settings: DualSettings = DualSettings(),
    backend: str | None = None,
) -> np.ndarray | None:
    """Minimise ``v'Sv/4 + g'v + lam ||v||_1`` by coordinate descent.

    Returns the KKT-certified minimiser, or ``None`` when the problem is
    judged unsolvable at this ``lam``: an unbounded-direction certificate is
    found, ``||v||_1`` passes its cap, or the sweep budget runs out.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    g = np.ascontiguousarray(g, dtype=np.float64)
    p = g.shape[0]
    g_inf = float(np.abs(g).max()) if p else 0.0
    if g_inf == 0.0:
        return np.zeros(p)
    tol = settings.rel_tol * g_inf
    cap = settings.cap_factor * (1.0 + float(np.linalg.norm(g))) / lam
    budget = settings.max_sweeps
    check_null = gram.rank_deficient

    pen = np.full(p, lam)
    sweeper = kernels.Sweeper(gram, -g, pen, 0.5, v_init, backend=backend)
    prev = sweeper.x.copy()
    last_signs = np.sign(prev)
    tried = None
    used = 0
    while used < budget:
        chunk = min(settings.check_every, budget - used)
        done, _, status = sweeper.run(tol, chunk, cap)
        used += done
        if status == kernels.CONVERGED:
            return sweeper.x
        if status in (kernels.DIVERGED, kernels.UNBOUNDED):
            return None
        if check_null and _unbounded_certificate(gram, g, lam, sweeper.x - prev):
            return None
        signs = np.sign(sweeper.x)
        if settings.polish and np.array_equal(signs, last_signs) and not (
            tried is not None and np.array_equal(signs, tried)
        ):
            tried = signs
            w = _polish(gram, g, lam, sweeper.x)
            if w is not None:
                if _dual_kkt(gram, g, lam, w) <= tol:
                    return w
                # restart from the better point so missing coordinates can enter
                sweeper = kernels.Sweeper(gram, -g, pen, 0.5, w, backend=backend)
                signs = np.sign(w)
        last_signs = signs
        prev = sweeper.x.copy()
    return None


def _direction(gram: GramView, g, u, lam, steps, status, lams, quads) -> ProjectionDirection:
    gap = float(np.abs(gram.gram_vec(u) - g).max()) if u.size else 0.0
    return ProjectionDirection(
        u_hat=u,
        lambda_accepted=lam,
        dual_steps=steps,
        feasibility_gap=gap,
        quad_value=gram.quad(u),
        status=status,
        path_lambdas=tuple(lams),
        path_quad_values=tuple(quads),
    )


def find_projection(
    gram: GramView,
    g,
    lambda_start: float | None = None,
    shrink: float = SHRINK,
    max_steps: int = MAX_STEPS,
    settings: DualSettings = DualSettings(),
    backend: str | None = None,
) -> ProjectionDirection:
    """Walk ``lam_t = lam_{t-1} / shrink`` from ``lambda_start``.

    Each dual solve is warm-started from the previous one.  The walk stops
    at the first unsolvable ``lam`` or after ``max_steps`` reductions and
    returns ``u = -v/2`` from the last solved point.  A zero target gives
    ``u = 0`` directly; if even ``lambda_start`` is unsolvable the result is
    ``u = 0`` with ``status="unsolvable"``.
    """
    g = np.ascontiguousarray(g, dtype=np.float64)
    p = g.shape[0]
    if p != gram.p:
        raise ValueError(f"target has length {p}, Gram is {gram.p} x {gram.p}")
    if lambda_start is None:
        lambda_start = default_lambda_start(p, gram.n, float(np.linalg.norm(g)))
    if not np.any(g):
        return _direction(gram, g, np.zeros(p), lambda_start or 0.0, 0, "zero_target", (), ())
    if not lambda_start > 0:
        raise ValueError("lambda_start must be positive")
    if not shrink > 1:
        raise ValueError("shrink must exceed 1")

    lam = lambda_start
    v = solve_dual_penalized(gram, g, lam, None, settings, backend)
    if v is None:
        return _direction(gram, g, np.zeros(p), lam, 0, "unsolvable", (), ())

    lams = [lam]
    quads = [gram.quad(v) / 4]
    steps = 0
    while steps < max_steps:
        nxt = lam / shrink
        v_next = solve_dual_penalized(gram, g, nxt, v, settings, backend)
        if v_next is None:
            break
        v, lam = v_next, nxt
        steps += 1
        lams.append(lam)
        quads.append(gram.quad(v) / 4)
    u = -0.5 * v
    return _direction(gram, g, u, lam, steps, "ok", lams, quads)
