"""Replicated synthetic experiments and their mean-squared-error reports.

A preset is a list of settings that share ``(p, n1, n2, rho)``.  Within a
replication every setting sees the same designs and noise draws (stream
``r`` of the master seed), so per-design work such as the de-biasing
directions is done once per replication.  Supports depend only on the
master seed and the support sizes, which keeps the truth fixed across
replications and across strength columns.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import CoheritError, RegressionSample, RngStream, ZeroColumnError, sample_gaussian_ar1
from .functionals import (
    METHODS,
    FDEConfig,
    Projector,
    TraitModel,
    debias_coefficients,
    estimate_methods,
    nodewise_directions,
    normalized_ratio,
    split_quadratic,
    threshold_coefficients,
)

log = logging.getLogger(__name__)

PATTERNS = ("ramp", "constant")
KINDS = ("pair", "quadratic")
TARGETS = ("I", "Qb", "Qg", "R")
FAILURE_LIMIT = 0.05

# path tags below the replication streams
_X, _Z, _EPS, _DELTA, _SPLIT = range(5)
_SUPPORT_TAG = 99


class InfeasibleSupports(CoheritError, ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    p: int = 600
    n1: int = 400
    n2: int = 400
    reps: int = 300
    s: int = 15
    s1: int = 30
    s2: int = 25
    tau1: float = 1.8
    tau2: float = 0.4
    rho: float = 0.8
    pattern_beta: str = "ramp"
    pattern_gamma: str = "constant"
    b: float = 0.5
    split: bool = True
    master_seed: int = 0
    methods: tuple = METHODS
    kind: str = "pair"
    label: str = ""

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be ≥ 1")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        for name in ("pattern_beta", "pattern_gamma"):
            if getattr(self, name) not in PATTERNS:
                raise ValueError(f"{name} must be one of {PATTERNS}")
        if min(self.p, self.n1) < 1 or (self.kind == "pair" and self.n2 < 1):
            raise ValueError("p and sample sizes must be positive")
        if self.s < 0 or self.s > min(self.s1, self.s2):
            raise ValueError("need 0 <= s <= min(s1, s2)")
        if self.s1 + self.s2 - self.s > self.p:
            raise InfeasibleSupports(f"s1 + s2 - s = {self.s1 + self.s2 - self.s} exceeds p = {self.p}")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}")
        # split=False drops the split variant from the method list
        keep = tuple(m for m in METHODS if m in self.methods and (self.split or m != "fde_split"))
        if not keep:
            raise ValueError("no methods left to run")
        object.__setattr__(self, "methods", keep)

    @property
    def targets(self) -> tuple:
        return TARGETS if self.kind == "pair" else ("Qb",)

    def fde_config(self) -> FDEConfig:
        return FDEConfig(b=self.b)

    def design_key(self) -> tuple:
        return (self.p, self.n1, self.n2 if self.kind == "pair" else 0, self.rho, self.kind)


def gen_supports(p: int, s: int, s1: int, s2: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Sorted supports with ``|S1| = s1``, ``|S2| = s2`` and ``|S1 & S2| = s``."""
    if not (0 <= s <= min(s1, s2)):
        raise ValueError("need 0 <= s <= min(s1, s2)")
    if s1 + s2 - s > p:
        raise InfeasibleSupports(f"s1 + s2 - s = {s1 + s2 - s} exceeds p = {p}")
    picks = rng.generator().permutation(p)[: s1 + s2 - s]
    overlap = picks[:s]
    only1 = picks[s:s1]
    only2 = picks[s1:]
    return np.sort(np.concatenate([overlap, only1])), np.sort(np.concatenate([overlap, only2]))


def gen_coefficients(support, p: int, pattern: str, tau: float) -> np.ndarray:
    """Ramp puts ``(1 + i/k) tau/2`` on the i-th sorted support index; constant puts ``tau``."""
    support = np.sort(np.asarray(support, dtype=np.intp))
    k = support.size
    out = np.zeros(p)
    if pattern == "ramp":
        out[support] = (1.0 + np.arange(1, k + 1) / k) * tau / 2.0
    elif pattern == "constant":
        out[support] = tau
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return out


def truth_values(beta, gamma) -> dict:
    inner = float(beta @ gamma)
    qb, qg = float(beta @ beta), float(gamma @ gamma)
    return {"I": inner, "Qb": qb, "Qg": qg, "R": normalized_ratio(inner, qb, qg)}


def setting_coefficients(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.kind == "quadratic":
        key = (_SUPPORT_TAG, cfg.p, cfg.s1, cfg.s1, cfg.s1)
        s1, _ = gen_supports(cfg.p, cfg.s1, cfg.s1, cfg.s1, RngStream(cfg.master_seed, 0, key))
        beta = gen_coefficients(s1, cfg.p, cfg.pattern_beta, cfg.tau1)
        return beta, np.zeros(cfg.p)
    key = (_SUPPORT_TAG, cfg.p, cfg.s, cfg.s1, cfg.s2)
    s1, s2 = gen_supports(cfg.p, cfg.s, cfg.s1, cfg.s2, RngStream(cfg.master_seed, 0, key))
    return (
        gen_coefficients(s1, cfg.p, cfg.pattern_beta, cfg.tau1),
        gen_coefficients(s2, cfg.p, cfg.pattern_gamma, cfg.tau2),
    )


@dataclass
class SettingResult:
    config: ExperimentConfig
    truth: dict
    # method -> (reps, 4) array of (I, Qb, Qg, R); NaN rows are failed replications
    raw: dict
    failures: int = 0
    aborted: bool = False

    @property
    def reps_used(self) -> int:
        first = next(iter(self.raw.values()))
        return int(np.sum(~np.isnan(first[:, 0])))

    def mse(self, target: str, method: str) -> float:
        col = self.raw[method][:, TARGETS.index(target)]
        err = col[~np.isnan(col)] - self.truth[target]
        return float(np.mean(err * err)) if err.size else math.nan


@dataclass
class ExperimentReport:
    name: str
    settings: list = field(default_factory=list)
    column: str = ""

    @property
    def aborted(self) -> bool:
        return any(s.aborted for s in self.settings)

    def rows(self):
        for res in self.settings:
            cfg = res.config
            for target in cfg.targets:
                for method in cfg.methods:
                    yield res, target, method, res.truth[target], res.mse(target, method)

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for key, value in (header or {}).items():
            buf.write(f"# {key}={value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting", "p", "n1", "n2", "s", "s1", "s2", "tau1", "tau2", "b",
                    "target", "method", "truth", "mse", "reps_used", "failures"])
        for res, target, method, truth, mse in self.rows():
            c = res.config
            w.writerow([c.label, c.p, c.n1, c.n2, c.s, c.s1, c.s2, _num(c.tau1), _num(c.tau2), _num(c.b),
                        target, method, _num(truth), _num(mse), res.reps_used, res.failures])
        return buf.getvalue()

    def to_table(self) -> str:
        """Aligned text table: one block per target, methods as rows, settings as columns."""
        labels = [s.config.label for s in self.settings]
        width = max([10] + [len(x) + 2 for x in labels])
        lines = [f"{self.name}: {self.column}".rstrip(": ")]
        head = f"{'':<4}{'method':<14}" + "".join(f"{x:>{width}}" for x in labels)
        lines.append(head)
        targets = self.settings[0].config.targets if self.settings else ()
        methods = self.settings[0].config.methods if self.settings else ()
        for target in targets:
            cells = "".join(f"{_fmt(s.truth[target]):>{width}}" for s in self.settings)
            lines.append(f"{target:<4}{'truth':<14}" + cells)
            for m in methods:
                cells = "".join(f"{_fmt(s.mse(target, m)):>{width}}" for s in self.settings)
                lines.append(f"{'':<4}{m:<14}" + cells)
        return "\n".join(lines) + "\n"


def _num(x) -> str:
    return str(x) if isinstance(x, int) else format(float(x), ".17g")


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return f"{x:.4f}" if abs(x) < 10 else f"{x:.3f}"


def _replicate(settings: list, r: int) -> list:
    """One replication across all settings: a list of {method: row or None}."""
    base = settings[0]
    rs = RngStream(base.master_seed, r)
    X = sample_gaussian_ar1(base.n1, base.p, base.rho, rs.child(_X))
    eps = rs.child(_EPS).standard_normal(base.n1)
    pair = base.kind == "pair"
    if pair:
        Z = sample_gaussian_ar1(base.n2, base.p, base.rho, rs.child(_Z))
        delta = rs.child(_DELTA).standard_normal(base.n2)
    cfg0 = base.fde_config()
    px = Projector(X, cfg0)
    pz = Projector(Z, cfg0) if pair else None
    wants_nodewise = any(m in c.methods for c in settings for m in ("debiased", "thresholded"))
    nodewise = None
    out = []
    for cfg in settings:
        beta, gamma = setting_coefficients(cfg)
        fcfg = cfg.fde_config()
        try:
            if nodewise is None and wants_nodewise:
                nodewise = (nodewise_directions(px), nodewise_directions(pz) if pair else None)
            sx = RegressionSample(X, X @ beta + eps)
            if pair:
                sz = RegressionSample(Z, Z @ gamma + delta)
                est = estimate_methods(sx, sz, cfg.methods, fcfg, rs.child(_SPLIT), (px, pz), nodewise)
                out.append({m: e.as_tuple() for m, e in est.items()})
            else:
                out.append(_quadratic_methods(sx, cfg.methods, fcfg, rs.child(_SPLIT), px, nodewise))
        except CoheritError as exc:
            log.warning("replication %d of %s failed: %s", r, cfg.label, exc)
            out.append(None)
    return out


def _quadratic_methods(sample, methods, config, rng, projector, nodewise) -> dict:
    nan = math.nan
    a = TraitModel(sample, config, projector=projector)
    row = {}
    for m in methods:
        if m == "fde_nosplit":
            q = a.quadratic()[0]
        elif m == "fde_split":
            q = split_quadratic(sample, config, rng.child(0))[0]
        elif m == "plugin_lasso":
            q = float(a.beta @ a.beta)
        else:
            nw = nodewise[0] if nodewise else nodewise_directions(projector)
            bt = debias_coefficients(sample, a.fit, config, nw)
            if m == "thresholded":
                bt = threshold_coefficients(bt, a.fit.sigma_hat, nw.quad_values, sample.n, sample.p)
            q = float(bt @ bt)
        row[m] = (nan, q, nan, nan)
    return row


def _run_chunk(args):
    settings, reps = args
    return [_replicate(settings, r) for r in reps]


def default_threads() -> int:
    env = os.environ.get("COHERIT_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ValueError(f"COHERIT_THREADS must be an integer, got {env!r}") from None


def run_settings(settings: list, name: str = "", column: str = "", threads: int | None = None) -> ExperimentReport:
    """Run every replication of a group of settings sharing one design generator.

    Replications are spread over ``threads`` worker processes; results are
    gathered by replication index, so the report does not depend on the
    worker count.
    """
    if not settings:
        raise ValueError("no settings to run")
    keys = {(c.design_key(), c.master_seed, c.reps) for c in settings}
    if len(keys) != 1:
        raise ValueError("settings in one run must share p, n1, n2, rho, kind, seed and reps")
    threads = default_threads() if threads is None else max(1, int(threads))
    reps = settings[0].reps
    if threads == 1:
        per_rep = _run_chunk((settings, range(reps)))
    else:
        chunks = [list(range(i, reps, threads)) for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [(settings, c) for c in chunks if c]))
        per_rep = [None] * reps
        for chunk, part in zip([c for c in chunks if c], parts):
            for r, res in zip(chunk, part):
                per_rep[r] = res
    report = ExperimentReport(name, column=column)
    for k, cfg in enumerate(settings):
        raw = {m: np.full((reps, 4), math.nan) for m in cfg.methods}
        failures = 0
        for r in range(reps):
            row = per_rep[r][k]
            if row is None:
                failures += 1
                continue
            for m in cfg.methods:
                raw[m][r] = row[m]
        aborted = failures > FAILURE_LIMIT * reps
        if aborted:
            log.error("%s: %d of %d replications failed; setting aborted", cfg.label, failures, reps)
        report.settings.append(
            SettingResult(cfg, truth_values(*setting_coefficients(cfg)), raw, failures, aborted)
        )
    return report


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    return run_settings([config], config.label, threads=threads)


def _exp1(**kw):
    cols = [(1.8, 0.4), (2.2, 0.3), (2.6, 0.2), (3.0, 0.1), (0.1, 1.6), (0.2, 1.4), (0.3, 1.2), (0.4, 1.0)]
    return [replace(ExperimentConfig(**kw), tau1=a, tau2=b, label=f"({a:g},{b:g})") for a, b in cols]


def _exp2(**kw):
    base = ExperimentConfig(**{"p": 800, "s": 20, "s1": 40, "s2": 40, "tau1": 0.2, "tau2": 0.1, **kw})
    return [replace(base, s1=k, s2=k, label=str(k)) for k in range(40, 111, 10)]


def _quad(pattern, size, taus, **kw):
    base = ExperimentConfig(**{"kind": "quadratic", "n2": 0, "s": size, "s1": size, "s2": size,
                               "pattern_beta": pattern, **kw})
    return [replace(base, tau1=t, label=f"{t:g}") for t in taus]


def _quad_sparsity(pattern, tau, **kw):
    base = ExperimentConfig(**{"kind": "quadratic", "n2": 0, "p": 800, "pattern_beta": pattern,
                               "tau1": tau, "s": 40, "s1": 40, "s2": 40, **kw})
    return [replace(base, s=k, s1=k, s2=k, label=str(k)) for k in range(40, 111, 10)]


def _tuning(**kw):
    out = []
    for a, b in [(3.0, 0.1), (1.8, 0.4)]:
        for mult in (0.25, 0.5, 0.75, 1.0):
            out.append(replace(ExperimentConfig(**kw), tau1=a, tau2=b, b=mult, label=f"({a:g},{b:g}) b={mult:g}"))
    return out


PRESETS = {
    "exp1": ("strength (tau1, tau2)", _exp1),
    "exp2": ("sparsity s1 = s2", _exp2),
    "q1a": ("strength tau", lambda **kw: _quad("ramp", 30, (0.1, 0.2, 0.3, 0.4, 1.8, 2.2, 2.6, 3.0), **kw)),
    "q1b": ("strength tau", lambda **kw: _quad("constant", 25, (0.1, 0.2, 0.3, 0.4, 1.0, 1.2, 1.4, 1.6), **kw)),
    "q2-I": ("sparsity s", lambda **kw: _quad_sparsity("ramp", 0.2, **kw)),
    "q2-II": ("sparsity s", lambda **kw: _quad_sparsity("constant", 0.1, **kw)),
    "tuning": ("strength and multiplier b", _tuning),
}


def preset_settings(name: str, **overrides) -> list:
    """Settings of a named preset; keyword overrides apply to every setting."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name][1](**overrides)


def run_preset(name: str, threads: int | None = None, **overrides) -> ExperimentReport:
    return run_settings(preset_settings(name, **overrides), name, PRESETS[name][0], threads)


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def marginal_t_stats(sample: RegressionSample) -> tuple[np.ndarray, np.ndarray]:
    """Per-column t statistics of the no-intercept simple regression of y on X_j.

    Returns ``(t, perfect)``; a column that fits ``y`` exactly gets
    ``t = +-inf`` (sign of the slope) and ``perfect = True``.
    """
    if sample.n < 3:
        raise ValueError("need n >= 3")
    X, y = sample.design, sample.response
    sq = sample.col_norms**2
    zero = np.flatnonzero(sq == 0.0)
    if zero.size:
        raise ZeroColumnError(int(zero[0]))
    slope = X.T @ y / sq
    resid = y[:, None] - X * slope
    s2 = np.einsum("ij,ij->j", resid, resid) / (sample.n - 1)
    # residual sums at rounding level of ||y||^2 count as exact fits
    perfect = s2 <= (np.finfo(float).eps * 16) * float(y @ y) / (sample.n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = slope * sample.col_norms / np.sqrt(s2)
    t = np.where(perfect, np.copysign(np.inf, slope), t)
    return t, perfect
