"""Inner-product, quadratic and ratio estimators plus the plug-in baselines.

Every corrected estimator has the same shape: a plug-in value from the
scaled Lasso fits plus ``u' X'(y - X b)/n``, where ``u`` is a projection
direction for a target vector ``g``.  Directions are solved on the
column-standardised design and mapped back, so the constraint reads
``|(S u - g)_j| <= lam * scale_j`` in original units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .core import GramView, RegressionSample, RngStream, standardize_columns
from .projection import DualSettings, ProjectionDirection, default_lambda_start, find_projection
from .sqrt_lasso import DEFAULT_B, ScaledLassoFit, SolverSettings, fit_scaled_lasso, universal_lambda0

log = logging.getLogger(__name__)

METHODS = ("fde_split", "fde_nosplit", "plugin_lasso", "debiased", "thresholded")


@dataclass(frozen=True)
class FDEConfig:
    b: float = DEFAULT_B
    lambda0: float | None = None
    # multiplies the default path start sqrt(2.01 log p / n)
    lambda_scale: float = 1.0
    shrink: float = 1.5
    max_steps: int = 10
    solver: SolverSettings = SolverSettings()
    dual: DualSettings = DualSettings()
    backend: str | None = None
    split_seed: int = 0

    def lambda0_for(self, p: int) -> float:
        return self.lambda0 if self.lambda0 is not None else universal_lambda0(p, self.b)


@dataclass(frozen=True, eq=False)
class CoheritabilityEstimate:
    inner: float
    quad_beta: float
    quad_gamma: float
    ratio: float
    method: str
    diagnostics: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.inner, self.quad_beta, self.quad_gamma, self.ratio)


def normalized_ratio(inner: float, quad_beta: float, quad_gamma: float) -> float:
    """``sign(I) * min(|I| / sqrt(Qb Qg), 1)``, and 0 when ``Qb Qg`` is not positive."""
    prod = quad_beta * quad_gamma
    if not prod > 0.0:
        return 0.0
    mag = min(abs(inner) / math.sqrt(prod), 1.0)
    return math.copysign(mag, inner) if inner != 0.0 else 0.0


class Projector:
    """Projection directions against one design, solved on standardised columns."""

    def __init__(self, design, config: FDEConfig = FDEConfig()):
        X = design.design if isinstance(design, RegressionSample) else np.asarray(design, dtype=np.float64)
        self.n, self.p = X.shape
        norms = np.linalg.norm(X, axis=0)
        if np.any(norms == 0.0):
            # the same check and message as standardize_columns
            standardize_columns(RegressionSample(X, np.zeros(self.n)))
        self.scales = norms / math.sqrt(self.n)
        self.gram = GramView(X / self.scales)
        self.config = config

    def direction(self, target) -> tuple[np.ndarray, ProjectionDirection]:
        g = np.asarray(target, dtype=np.float64) / self.scales
        cfg = self.config
        start = cfg.lambda_scale * default_lambda_start(self.p, self.n, float(np.linalg.norm(g)))
        d = find_projection(self.gram, g, start or None, cfg.shrink, cfg.max_steps, cfg.dual, cfg.backend)
        return d.u_hat / self.scales, d


class TraitModel:
    """A fitted trait: scaled Lasso fit, score vector and a projector for its design.

    ``score`` is ``X'(y - X b)/n``; any correction is ``u' score``.
    """

    def __init__(
        self,
        sample: RegressionSample,
        config: FDEConfig = FDEConfig(),
        fit: ScaledLassoFit | None = None,
        projector: Projector | None = None,
    ):
        self.sample = sample
        self.config = config
        self.fit = fit or fit_scaled_lasso(sample, config.lambda0_for(sample.p), config.solver)
        self.projector = projector or Projector(sample.design, config)
        resid = sample.response - sample.design @ self.fit.beta_hat
        self.score = sample.design.T @ resid / sample.n
        self._quad = None

    @property
    def beta(self) -> np.ndarray:
        return self.fit.beta_hat

    def correction(self, target) -> tuple[float, ProjectionDirection]:
        u, d = self.projector.direction(target)
        return float(u @ self.score), d

    def quadratic(self) -> tuple[float, dict]:
        """No-split ``(||b||^2 + 2 u' score)_+`` with the direction targeting ``b`` itself."""
        if self._quad is None:
            corr, d = self.correction(self.beta)
            plug = float(self.beta @ self.beta)
            self._quad = (max(plug + 2.0 * corr, 0.0), _diag(d, corr))
        return self._quad


def _diag(d: ProjectionDirection, corr: float) -> dict:
    return {
        "feasibility_gap": d.feasibility_gap,
        "lambda": d.lambda_accepted,
        "steps": d.dual_steps,
        "status": d.status,
        "correction": corr,
    }


def corrected_inner(a: TraitModel, b: TraitModel) -> tuple[float, dict]:
    """Inner product with both residual corrections; exactly symmetric under swap."""
    corr_a, da = a.correction(b.beta)
    corr_b, db = b.correction(a.beta)
    value = float(a.beta @ b.beta) + (corr_a + corr_b)
    return value, {"first": _diag(da, corr_a), "second": _diag(db, corr_b)}


def estimate_inner_fde(sample_x: RegressionSample, sample_z: RegressionSample, config: FDEConfig = FDEConfig()) -> float:
    _check_pair(sample_x, sample_z)
    return corrected_inner(TraitModel(sample_x, config), TraitModel(sample_z, config))[0]


def split_rows(n: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random halves; with odd ``n`` the first half gets the extra row."""
    perm = rng.generator().permutation(n)
    cut = (n + 1) // 2
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def split_quadratic(sample: RegressionSample, config: FDEConfig, rng: RngStream) -> tuple[float, dict]:
    """Fit on one half, project and correct on the other."""
    if sample.n < 4:
        raise ValueError("sample splitting needs n >= 4")
    first, second = split_rows(sample.n, rng)
    fit = fit_scaled_lasso(sample.subset(first), config.lambda0_for(sample.p), config.solver)
    held = sample.subset(second)
    beta = fit.beta_hat
    u, d = Projector(held.design, config).direction(beta)
    resid = held.response - held.design @ beta
    corr = float(u @ (held.design.T @ resid)) / held.n
    return max(float(beta @ beta) + 2.0 * corr, 0.0), _diag(d, corr)


def estimate_quadratic_fde(
    sample: RegressionSample,
    split: bool = False,
    config: FDEConfig = FDEConfig(),
    rng: RngStream | None = None,
) -> float:
    if split:
        return split_quadratic(sample, config, rng or RngStream(config.split_seed))[0]
    return TraitModel(sample, config).quadratic()[0]


def estimate_ratio_fde(
    sample_x: RegressionSample,
    sample_z: RegressionSample,
    split: bool = False,
    config: FDEConfig = FDEConfig(),
    rng: RngStream | None = None,
) -> float:
    _check_pair(sample_x, sample_z)
    a, b = TraitModel(sample_x, config), TraitModel(sample_z, config)
    return fde_estimate(a, b, split, config, rng).ratio


def fde_estimate(
    a: TraitModel,
    b: TraitModel,
    split: bool,
    config: FDEConfig = FDEConfig(),
    rng: RngStream | None = None,
) -> CoheritabilityEstimate:
    """All four corrected quantities for one pair of fitted traits.

    The inner product always uses the full samples.  With ``split`` the two
    quadratic terms come from independent halves drawn from ``rng`` (child 0
    for the first trait, child 1 for the second).
    """
    inner, diag_inner = corrected_inner(a, b)
    if split:
        rng = rng or RngStream(config.split_seed)
        qa, diag_a = split_quadratic(a.sample, config, rng.child(0))
        qb, diag_b = split_quadratic(b.sample, config, rng.child(1))
        method = "fde_split"
    else:
        qa, diag_a = a.quadratic()
        qb, diag_b = b.quadratic()
        method = "fde_nosplit"
    diag = {"inner": diag_inner, "quad_beta": diag_a, "quad_gamma": diag_b}
    return CoheritabilityEstimate(
        inner, qa, qb, normalized_ratio(inner, qa, qb), method, MappingProxyType(diag)
    )


def _plug(beta, gamma, method: str, diag=None) -> CoheritabilityEstimate:
    inner = float(beta @ gamma)
    qa = float(beta @ beta)
    qb = float(gamma @ gamma)
    return CoheritabilityEstimate(
        inner, qa, qb, normalized_ratio(inner, qa, qb), method, MappingProxyType(diag or {})
    )


def plugin_estimates(fit_x: ScaledLassoFit, fit_z: ScaledLassoFit) -> CoheritabilityEstimate:
    if fit_x.p != fit_z.p:
        raise ValueError(f"fits have different lengths {fit_x.p} and {fit_z.p}")
    return _plug(fit_x.beta_hat, fit_z.beta_hat, "plugin_lasso")


@dataclass(frozen=True, eq=False)
class NodewiseDirections:
    """Rows ``m_j`` of the de-biasing matrix and their quadratic values ``m_j' S m_j``."""

    matrix: np.ndarray
    quad_values: np.ndarray
    fallback: np.ndarray


def nodewise_directions(projector: Projector) -> NodewiseDirections:
    """One projection per coordinate with target ``e_j``.

    When a path cannot be started the row falls back to ``e_j / S_jj``.
    """
    p = projector.p
    M = np.empty((p, p))
    quads = np.empty(p)
    fallback = np.zeros(p, dtype=bool)
    e = np.zeros(p)
    raw_diag = projector.scales**2
    for j in range(p):
        e[j] = 1.0
        u, d = projector.direction(e)
        e[j] = 0.0
        if not d.solved:
            fallback[j] = True
            u = np.zeros(p)
            u[j] = 1.0 / raw_diag[j]
        M[j] = u
        quads[j] = d.quad_value if d.solved else projector.gram.quad(u * projector.scales)
    if fallback.any():
        log.warning("nodewise projection fell back to e_j/S_jj for %d coordinates", int(fallback.sum()))
    return NodewiseDirections(M, quads, fallback)


def debias_coefficients(
    sample: RegressionSample,
    fit: ScaledLassoFit,
    config: FDEConfig = FDEConfig(),
    nodewise: NodewiseDirections | None = None,
) -> np.ndarray:
    """``b + M X'(y - X b)/n`` with the rows of ``M`` from :func:`nodewise_directions`."""
    if nodewise is None:
        nodewise = nodewise_directions(Projector(sample.design, config))
    resid = sample.response - sample.design @ fit.beta_hat
    return fit.beta_hat + nodewise.matrix @ (sample.design.T @ resid / sample.n)


def threshold_coefficients(beta_tilde, sigma_hat: float, quad_values, n: int, p: int) -> np.ndarray:
    """Keep ``b_j`` only where ``|b_j| > sigma * sqrt(q_j) * sqrt(2.01 log p / n)``."""
    beta_tilde = np.asarray(beta_tilde, dtype=np.float64)
    level = sigma_hat * np.sqrt(np.asarray(quad_values, dtype=np.float64)) * default_lambda_start(p, n)
    return np.where(np.abs(beta_tilde) > level, beta_tilde, 0.0)


def _check_pair(sample_x: RegressionSample, sample_z: RegressionSample):
    if sample_x.p != sample_z.p:
        raise ValueError(f"samples have different numbers of columns ({sample_x.p} and {sample_z.p})")


def estimate_methods(
    sample_x: RegressionSample,
    sample_z: RegressionSample,
    methods=METHODS,
    config: FDEConfig = FDEConfig(),
    rng: RngStream | None = None,
    projectors: tuple[Projector, Projector] | None = None,
    nodewise: tuple[NodewiseDirections, NodewiseDirections] | None = None,
) -> dict[str, CoheritabilityEstimate]:
    """Run the requested methods on one pair, reusing fits and directions.

    ``projectors`` and ``nodewise`` let callers share per-design work across
    several responses drawn on the same designs.
    """
    _check_pair(sample_x, sample_z)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    px, pz = projectors if projectors is not None else (None, None)
    a = TraitModel(sample_x, config, projector=px)
    b = TraitModel(sample_z, config, projector=pz)
    out = {}
    if "fde_nosplit" in methods:
        out["fde_nosplit"] = fde_estimate(a, b, False, config)
    if "fde_split" in methods:
        out["fde_split"] = fde_estimate(a, b, True, config, rng)
    if "plugin_lasso" in methods:
        out["plugin_lasso"] = plugin_estimates(a.fit, b.fit)
    if "debiased" in methods or "thresholded" in methods:
        nx, nz = nodewise if nodewise is not None else (
            nodewise_directions(a.projector), nodewise_directions(b.projector)
        )
        bt = debias_coefficients(sample_x, a.fit, config, nx)
        gt = debias_coefficients(sample_z, b.fit, config, nz)
        if "debiased" in methods:
            out["debiased"] = _plug(bt, gt, "debiased")
        if "thresholded" in methods:
            bb = threshold_coefficients(bt, a.fit.sigma_hat, nx.quad_values, sample_x.n, sample_x.p)
            gb = threshold_coefficients(gt, b.fit.sigma_hat, nz.quad_values, sample_z.n, sample_z.p)
            out["thresholded"] = _plug(bb, gb, "thresholded")
    return {m: out[m] for m in methods}


def pairwise_estimates(models: list) -> tuple[np.ndarray, np.ndarray]:
    """No-split estimates for every pair of fitted traits.

    Returns ``(values, ratios)``: ``values[i, i]`` is the quadratic estimate
    of trait ``i`` and ``values[i, j]`` (``i < j``) the corrected inner
    product; ``ratios`` holds the normalised inner products.  Entries below
    the diagonal are NaN.
    """
    k = len(models)
    values = np.full((k, k), np.nan)
    ratios = np.full((k, k), np.nan)
    quads = [m.quadratic()[0] for m in models]
    for i in range(k):
        for j in range(i, k):
            if i == j:
                inner = float(models[i].beta @ models[i].beta) + 2.0 * models[i].quadratic()[1]["correction"]
                values[i, i] = quads[i]
            else:
                inner = corrected_inner(models[i], models[j])[0]
                values[i, j] = inner
            ratios[i, j] = normalized_ratio(inner, quads[i], quads[j])
    return values, ratios
