"""Monte Carlo designs (heavy-tailed, dependent, skewed and single-factor
Gaussian errors) and a seeded, order-independent study driver."""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from . import amem
from .amem import EstimationConfig
from .baselines import pca_fit, pcp1_select, trace_ratio
from .core import (
    FactorModel,
    Panel,
    align_sign,
    common_component,
    inference_bandwidth,
    normalization_error,
    normalize,
    normalize_svd,
)
from .errors import ConfigError, DegenerateFactorsError, ModalFactorError
from .inference import factor_ci, factor_variance
from .selection import select_factors

KINDS = ("S1", "S2", "S3", "SFG")
METHODS = ("MFA", "PCA")
METRICS = ("trace", "selection", "coverage")
S2_BURN_IN = 100
MIX_MEANS = (0.8, -0.8)
MIX_SD1 = 0.6


@dataclass(frozen=True)
class DgpSpec:
    """One simulation design.

    kind: ``S1`` (i.i.d. t_nu errors), ``S2`` (AR(1) in time plus cross-sectional
    moving average of t_nu innovations), ``S3`` (two-component normal mixture,
    recentred at its mode) or ``SFG`` (single factor, all Gaussian).
    """

    kind: str
    N: int
    T: int
    seed: int = 0
    nu: float = 3.0
    rho: float = 0.0
    beta: float = 0.0
    J: int = 0
    sigma: float = 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown DGP kind {self.kind!r}; expected one of {KINDS}")
        if self.N < 1 or self.T < 1:
            raise ConfigError("N and T must be positive")
        if self.nu < 1:
            raise ConfigError("nu must be at least 1")
        if not abs(self.rho) < 1:
            raise ConfigError("|rho| must be below 1")
        if self.J < 0:
            raise ConfigError("J must be non-negative")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")

    @property
    def r0(self) -> int:
        return 1 if self.kind == "SFG" else 3

    def label(self) -> str:
        if self.kind == "S1":
            return f"S1(nu={self.nu:g})"
        if self.kind == "S2":
            return f"S2(rho={self.rho:g},beta={self.beta:g},J={self.J})"
        if self.kind == "S3":
            return f"S3(sigma={self.sigma:g})"
        return "SFG"


@dataclass
class SimulatedPanel:
    panel: Panel
    true_loadings: np.ndarray
    true_factors: np.ndarray
    errors: np.ndarray

    @property
    def truth(self) -> FactorModel:
        return FactorModel(self.true_loadings, self.true_factors)


# ---------------------------------------------------------------- error laws

def mixture_pdf(x, sigma):
    x = np.asarray(x, dtype=float)
    return 0.5 * stats.norm.pdf(x, MIX_MEANS[0], MIX_SD1) + 0.5 * stats.norm.pdf(x, MIX_MEANS[1], sigma)


def mixture_cdf(x, sigma):
    return 0.5 * stats.norm.cdf(x, MIX_MEANS[0], MIX_SD1) + 0.5 * stats.norm.cdf(x, MIX_MEANS[1], sigma)


def mixture_median(sigma: float) -> float:
    return float(optimize.brentq(lambda x: mixture_cdf(x, sigma) - 0.5, -10, 10, xtol=1e-12))


def mixture_mode(sigma: float) -> float:
    """Global maximizer of 0.5 N(0.8, 0.6^2) + 0.5 N(-0.8, sigma^2).

    Grid over [-5, 5] at step 1e-4, then golden-section refinement. Among
    (near-)tied grid maxima the rightmost is kept.
    """
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    step = 1e-4
    grid = np.round(np.arange(-50000, 50001) * step, 10)
    dens = mixture_pdf(grid, sigma)
    top = dens.max()
    k = int(np.flatnonzero(dens >= top * (1 - 1e-12))[-1])
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(
        lambda x: -mixture_pdf(x, sigma), bracket=(lo, grid[k], hi), method="golden",
        tol=1e-10,
    )
    x = float(res.x)
    return x if lo <= x <= hi and -res.fun >= top else float(grid[k])


def _t_draws(rng, nu, shape):
    e = rng.standard_t(nu, size=shape)
    bad = ~np.isfinite(e)
    while np.any(bad):
        e[bad] = rng.standard_t(nu, size=int(bad.sum()))
        bad = ~np.isfinite(e)
    return e


def generate(spec: DgpSpec) -> SimulatedPanel:
    """Draw loadings, factors and errors (in that order) from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    N, T, r0 = spec.N, spec.T, spec.r0
    lam = rng.standard_normal((N, r0))
    fac = rng.standard_normal((T, r0))
    if spec.kind == "S1":
        e = _t_draws(rng, spec.nu, (N, T))
    elif spec.kind == "S2":
        J = spec.J
        # sample-period innovations are drawn before the burn-in ones, so that
        # rho = beta = J = 0 reproduces S1's draws exactly
        v_sample = _t_draws(rng, spec.nu, (N + 2 * J, T))
        v = np.hstack([_t_draws(rng, spec.nu, (N + 2 * J, S2_BURN_IN)), v_sample])
        u = v[J:J + N].copy()
        for j in range(1, J + 1):
            u += spec.beta * (v[J - j:J - j + N] + v[J + j:J + j + N])
        e_full = np.empty_like(u)
        e_full[:, 0] = u[:, 0]
        for t in range(1, u.shape[1]):
            e_full[:, t] = spec.rho * e_full[:, t - 1] + u[:, t]
        e = e_full[:, S2_BURN_IN:]
    elif spec.kind == "S3":
        comp = rng.random((N, T)) < 0.5
        z = rng.standard_normal((N, T))
        e = np.where(comp, MIX_MEANS[0] + MIX_SD1 * z, MIX_MEANS[1] + spec.sigma * z)
        e = e - mixture_mode(spec.sigma)
    else:
        e = rng.standard_normal((N, T))
    X = lam @ fac.T + e
    return SimulatedPanel(Panel(X), lam, fac, e)


# ---------------------------------------------------------------- study driver

@dataclass
class StudyResult:
    """Aggregates over ``S`` replications for one design.

    Per-method dictionaries are keyed by ``MFA``/``PCA``.
    """

    label: str
    N: int
    T: int
    c: float
    S: int
    trace_ratio: dict = field(default_factory=dict)
    mean_r_rank: float = math.nan
    mean_r_ic: float = math.nan
    freq_rank: float = math.nan
    freq_ic: float = math.nan
    mean_r_pcp1: float = math.nan
    freq_pcp1: float = math.nan
    coverage: float = math.nan
    n_failures: int = 0
    normalization: dict = field(default_factory=dict)
    replications: list = field(default_factory=list)


def replication_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


AUDIT_KEYS = ("ff_minus_identity", "ll_offdiag", "ll_diag_increase", "normalize_cc")


def audit_normalization(fit, audit: dict | None = None) -> dict:
    """Running maxima of the normalization deviations of a fit result."""
    audit = dict.fromkeys(AUDIT_KEYS, 0.0) if audit is None else audit
    model = fit.model
    err = normalization_error(model)
    try:
        renorm, _ = normalize(model)
    except DegenerateFactorsError:
        renorm = normalize_svd(model)
    err["normalize_cc"] = max(
        fit.normalization_drift,
        float(np.max(np.abs(common_component(renorm) - common_component(model)))),
    )
    for k in AUDIT_KEYS:
        audit[k] = max(audit[k], err[k])
    return audit


def run_replication(spec: DgpSpec, index: int, methods, metrics, cfg: EstimationConfig,
                    r_max: int = 8, level: float = 0.95) -> dict:
    """Generate one panel and score every requested method and metric."""
    seed = replication_seed(spec.seed, index)
    sim = generate(DgpSpec(**{**asdict(spec), "seed": seed}))
    rec = {"index": index, "seed": seed, "failed": False}
    cfg = amem.EstimationConfig(**{**asdict(cfg), "seed": seed, "n_factors": spec.r0})
    audit = dict.fromkeys(AUDIT_KEYS, 0.0)
    try:
        if "trace" in metrics:
            if "MFA" in methods:
                res = amem.fit(sim.panel, cfg)
                audit_normalization(res, audit)
                rec["tr_MFA"] = trace_ratio(res.model.factors, sim.true_factors)
            if "PCA" in methods:
                rec["tr_PCA"] = trace_ratio(pca_fit(sim.panel, spec.r0).factors, sim.true_factors)
        if "selection" in metrics:
            if "MFA" in methods:
                rep = select_factors(sim.panel, r_max, cfg, method="both")
                for f in rep.fits.values():
                    audit_normalization(f, audit)
                rec["r_rank"] = rep.r_rank
                rec["r_ic"] = rep.r_ic
            if "PCA" in methods:
                rec["r_pcp1"] = pcp1_select(sim.panel, r_max)
        if "coverage" in metrics:
            h = inference_bandwidth(spec.T, cfg.bandwidth_constant)
            res = amem.fit(sim.panel, cfg, h=h)
            audit_normalization(res, audit)
            t = spec.T // 2
            # the identified target is the true factor path under the same normalization
            target, _ = normalize(sim.truth)
            S = align_sign(res.model.factors, target.factors)
            model = FactorModel(res.model.loadings @ S, res.model.factors @ S, True)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                var = factor_variance(sim.panel, model, h, t)
                lo, hi = factor_ci(model, var, spec.N, h, level, t)
            f0 = target.factors[t]
            rec["covered"] = float(np.mean((lo <= f0) & (f0 <= hi)))
            sd = np.sqrt(np.diag(var.sandwich) / (spec.N * h**3))
            rec["z"] = float(((model.factors[t] - f0) / sd)[0])
    except ModalFactorError as exc:
        rec["failed"] = True
        rec["error"] = type(exc).__name__
    rec.update(audit)
    return rec


def _task(args):
    return run_replication(*args)


def run_study(specs, methods=METHODS, metrics=("trace",), cfg: EstimationConfig | None = None,
              S: int = 100, r_max: int = 8, workers: int = 1, level: float = 0.95) -> list[StudyResult]:
    """Run ``S`` replications of each design and aggregate in replication order."""
    if S < 1:
        raise ConfigError("S must be at least 1")
    unknown = (set(methods) - set(METHODS)) | (set(metrics) - set(METRICS))
    if unknown:
        raise ConfigError(f"unknown methods/metrics {sorted(unknown)}")
    cfg = cfg or EstimationConfig()
    methods = tuple(m for m in METHODS if m in set(methods))
    metrics = tuple(m for m in METRICS if m in set(metrics))
    out = []
    for spec in specs:
        tasks = [(spec, k, methods, metrics, cfg, r_max, level) for k in range(S)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                recs = list(ex.map(_task, tasks))
        else:
            recs = [_task(a) for a in tasks]
        out.append(_aggregate(spec, recs, cfg))
    return out


def _mean(recs, key):
    vals = [r[key] for r in recs if not r["failed"] and key in r and r[key] is not None]
    return float(np.mean(vals)) if vals else math.nan


def _freq(recs, key, target):
    vals = [r[key] == target for r in recs if not r["failed"] and r.get(key) is not None]
    return float(np.mean(vals)) if vals else math.nan


def _aggregate(spec, recs, cfg) -> StudyResult:
    res = StudyResult(label=spec.label(), N=spec.N, T=spec.T, c=cfg.bandwidth_constant,
                      S=len(recs), replications=recs)
    for m in METHODS:
        v = _mean(recs, f"tr_{m}")
        if not math.isnan(v):
            res.trace_ratio[m] = v
    res.mean_r_rank = _mean(recs, "r_rank")
    res.mean_r_ic = _mean(recs, "r_ic")
    res.freq_rank = _freq(recs, "r_rank", spec.r0)
    res.freq_ic = _freq(recs, "r_ic", spec.r0)
    res.mean_r_pcp1 = _mean(recs, "r_pcp1")
    res.freq_pcp1 = _freq(recs, "r_pcp1", spec.r0)
    res.coverage = _mean(recs, "covered")
    res.n_failures = sum(r["failed"] for r in recs)
    res.normalization = {k: max((r[k] for r in recs), default=0.0) for k in AUDIT_KEYS}
    return res


SUMMARY_COLUMNS = [
    "dgp", "N", "T", "c", "S",
    "tr_MFA", "tr_PCA",
    "mean_r_rank_MFA", "freq_rank_MFA", "mean_r_ic_MFA", "freq_ic_MFA",
    "mean_r_pcp1_PCA", "freq_pcp1_PCA",
    "coverage_MFA", "failures", *AUDIT_KEYS,
]


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.17g}"
    return str(v)


def summary_rows(results: list[StudyResult]) -> list[list[str]]:
    rows = []
    for r in results:
        vals = [r.label, r.N, r.T, r.c, r.S,
                r.trace_ratio.get("MFA", math.nan), r.trace_ratio.get("PCA", math.nan),
                r.mean_r_rank, r.freq_rank, r.mean_r_ic, r.freq_ic,
                r.mean_r_pcp1, r.freq_pcp1, r.coverage, r.n_failures,
                *(r.normalization.get(k, 0.0) for k in AUDIT_KEYS)]
        rows.append([_fmt(v) for v in vals])
    return rows


def write_summary_csv(results: list[StudyResult], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(summary_rows(results))


REPLICATION_COLUMNS = ["dgp", "index", "seed", "failed", "tr_MFA", "tr_PCA", "r_rank",
                       "r_ic", "r_pcp1", "covered", "z", *AUDIT_KEYS]


def write_replications_csv(results: list[StudyResult], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATION_COLUMNS)
        for res in results:
            for rec in res.replications:
                row = [res.label] + [_fmt(rec.get(k, "")) if rec.get(k) is not None else ""
                                     for k in REPLICATION_COLUMNS[1:]]
                w.writerow(row)


@dataclass
class StudyConfig:
    """Parsed study configuration file."""
    specs: list
    methods: tuple = METHODS
    metrics: tuple = ("trace",)
    S: int = 100
    r_max: int = 8
    level: float = 0.95
    cfg: EstimationConfig = field(default_factory=EstimationConfig)


def load_study_config(path, overrides: dict | None = None) -> StudyConfig:
    """Read a JSON study file.

    Layout: ``{"specs": [{"kind": "S1", "N": 100, "T": 100, "nu": 3}, ...],
    "methods": [...], "metrics": [...], "S": 100, "seed": 0, "r_max": 8,
    "level": 0.95, "estimation": {...EstimationConfig fields...}}``.
    A top-level ``seed`` (or a ``seed`` override) applies to specs without their own seed.
    Malformed content raises ConfigError.
    """
    import json

    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"study config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("specs"), list) or not raw["specs"]:
        raise ConfigError("study config needs a non-empty 'specs' list")
    overrides = overrides or {}
    known = {"specs", "methods", "metrics", "S", "seed", "r_max", "level", "estimation"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown study config keys: {sorted(extra)}")
    est = dict(raw.get("estimation", {}))
    est.update({k: v for k, v in overrides.items() if v is not None and k != "r_max"})
    seed = est.get("seed", raw.get("seed", 0))
    est["seed"] = seed
    try:
        cfg = EstimationConfig(**est)
        specs = [DgpSpec(**{"seed": seed, **d}) for d in raw["specs"]]
    except TypeError as exc:
        raise ConfigError(f"bad study config entry: {exc}") from exc
    r_max = overrides.get("r_max") or raw.get("r_max", 8)
    return StudyConfig(
        specs=specs,
        methods=tuple(raw.get("methods", METHODS)),
        metrics=tuple(raw.get("metrics", ("trace",))),
        S=int(raw.get("S", 100)),
        r_max=int(r_max),
        level=float(raw.get("level", 0.95)),
        cfg=cfg,
    )
