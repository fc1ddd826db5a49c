"""Rolling-window factor-augmented autoregressive forecasts.

The forecasting equation is a direct projection

    y_{t+s} = a + sum_{j=0..p} b_j y_{t-j} + g' F_t + error,

with p chosen by BIC on the autoregressive part alone and F_t extracted
from the standardized panel of the current window only.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import amem
from .amem import EstimationConfig
from .baselines import pca_fit, pcp1_select
from .core import Panel
from .errors import ConfigError, DataError, DegeneracyWarning, ModalFactorError, TransformError
from .selection import select_factors

__all__ = [
    "TCODE_ORDER",
    "apply_tcode",
    "transform_panel",
    "standardize",
    "ARFit",
    "fit_ar_bic",
    "ForecastSpec",
    "ForecastReport",
    "rolling_eval",
    "write_forecast_csv",
    "save_report_json",
    "signal_dgp",
]

# differencing order lost by each transform code
TCODE_ORDER = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}
FACTOR_METHODS = ("MFA", "PCA", "none")
R_RULES = ("IC", "rank", "PCp1")


# ---------------------------------------------------------------- transforms

def apply_tcode(series, code: int, name: str = "series") -> np.ndarray:
    """Apply a stationarity transform code (1..7) to a single series.

    1 level, 2 first difference, 3 second difference, 4 log, 5 log difference,
    6 second log difference, 7 first difference of the growth rate.
    """
    x = np.asarray(series, dtype=float).ravel()
    if code not in TCODE_ORDER:
        raise ConfigError(f"{name}: unknown transform code {code!r} (expected 1..7)")
    if code >= 4 and np.any(~(x > 0)):
        raise TransformError(f"{name}: transform code {code} needs a strictly positive series")
    if x.size <= TCODE_ORDER[code]:
        raise TransformError(f"{name}: series too short for transform code {code}")
    if code == 1:
        return x.copy()
    if code == 2:
        return np.diff(x)
    if code == 3:
        return np.diff(x, n=2)
    if code == 4:
        return np.log(x)
    if code == 5:
        return np.diff(np.log(x))
    if code == 6:
        return np.diff(np.log(x), n=2)
    return np.diff(x[1:] / x[:-1] - 1.0)


def transform_panel(panel: Panel, codes: dict) -> tuple[Panel, int]:
    """Transform every named series and trim all series to a common start.

    ``codes`` maps series name to transform code; series not listed keep
    code 1. Returns the transformed panel and the number of leading
    periods dropped.
    """
    names = panel.names or tuple(f"x{i}" for i in range(panel.n_series))
    unknown = set(codes) - set(names)
    if unknown:
        raise DataError(f"transform codes given for unknown series: {sorted(unknown)}")
    lost = max([TCODE_ORDER.get(int(c), 0) for c in codes.values()] + [0])
    rows = []
    for name, x in zip(names, panel.values):
        code = int(codes.get(name, 1))
        y = apply_tcode(x, code, name)
        rows.append(y[y.size - (x.size - lost):])
    return Panel(np.vstack(rows), names), lost


def standardize(panel: Panel) -> Panel:
    """Demean each series and scale it to unit sample variance (divisor T-1)."""
    X = panel.values
    if X.shape[1] < 2:
        raise DataError("standardize needs at least two periods")
    mu = X.mean(axis=1, keepdims=True)
    sd = X.std(axis=1, ddof=1, keepdims=True)
    bad = np.flatnonzero(~(sd[:, 0] > 0))
    if bad.size:
        names = panel.names or tuple(f"x{i}" for i in range(panel.n_series))
        raise DataError(f"series {names[bad[0]]!r} has zero variance in this sample")
    return Panel((X - mu) / sd, panel.names)


# ---------------------------------------------------------------- regressions

def _lag_design(y, p, s, start, stop):
    """Rows tau in [start, stop) of [1, y_tau, ..., y_{tau-p}] with target y_{tau+s}."""
    tau = np.arange(start, stop)
    Z = np.column_stack([np.ones(tau.size)] + [y[tau - j] for j in range(p + 1)])
    return Z, y[tau + s], tau


def _ols(Z, target):
    """Least squares via lstsq; flags a rank-deficient design."""
    coef, _, rank, _ = np.linalg.lstsq(Z, target, rcond=None)
    return coef, rank < Z.shape[1]


@dataclass
class ARFit:
    """BIC lag choice for a direct s-step autoregression.

    ``p`` indexes the last included lag, so p = 0 means one lag (y_t).
    """
    p: int
    coefficients: np.ndarray
    bic: np.ndarray
    n_obs: int
    flags: tuple = ()

    def __iter__(self):
        # lets callers unpack ``p, coef = fit_ar_bic(...)``
        return iter((self.p, self.coefficients))


def fit_ar_bic(y, p_max: int, s: int) -> ARFit:
    """Choose the lag order by BIC over p = 0..p_max on a common sample.

    Every candidate is estimated on the same observations (those admissible
    for p_max), so the criteria are comparable.
    """
    y = np.asarray(y, dtype=float).ravel()
    if p_max < 0 or s < 1:
        raise ConfigError("need p_max >= 0 and s >= 1")
    n = y.size - s - p_max
    if n < p_max + 3:
        raise DataError(f"series of length {y.size} too short for p_max={p_max}, s={s}")
    if not np.all(np.isfinite(y)):
        raise DataError("target series contains non-finite values")
    flags = set()
    bic = np.empty(p_max + 1)
    coefs = []
    for p in range(p_max + 1):
        Z, target, _ = _lag_design(y, p, s, p_max, y.size - s)
        coef, deficient = _ols(Z, target)
        if deficient:
            flags.add("collinear_design")
        ssr = float(np.sum((target - Z @ coef) ** 2))
        coefs.append(coef)
        # a perfect fit shows up as rounding-level residuals, not an exact zero
        if ssr <= 1e-24 * max(float(np.sum(target ** 2)), 1e-300):
            flags.add("zero_ssr")
            bic[p] = -math.inf
        else:
            bic[p] = math.log(ssr / n) + (p + 2) * math.log(n) / n
    if "zero_ssr" in flags:
        p_hat = 0
    else:
        p_hat = int(np.argmin(bic))  # first minimum: smallest p on ties
    return ARFit(p_hat, coefs[p_hat], bic, n, tuple(sorted(flags)))


# ---------------------------------------------------------------- rolling evaluation

@dataclass(frozen=True)
class ForecastSpec:
    horizon: int = 1
    window: int = 120
    p_max: int = 3
    factor_method: str = "MFA"
    r_selection: object = "IC"   # "IC", "rank", "PCp1" or a fixed positive integer
    bandwidth_constant: float = 5.0
    r_max: int = 8
    splits: tuple = ()           # forecast-origin indices that start new sub-periods

    def __post_init__(self):
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        if not isinstance(self.p_max, int) or self.p_max < 0:
            raise ConfigError("p_max must be a nonnegative integer")
        if not isinstance(self.window, int) or self.window <= self.p_max + self.horizon:
            raise ConfigError("window must exceed p_max + horizon")
        if self.factor_method not in FACTOR_METHODS:
            raise ConfigError(f"factor_method must be one of {FACTOR_METHODS}")
        r = self.r_selection
        if isinstance(r, bool) or not (r in R_RULES or (isinstance(r, int) and r >= 1)):
            raise ConfigError(f"r_selection must be one of {R_RULES} or a positive integer")
        if not self.bandwidth_constant > 0:
            raise ConfigError("bandwidth_constant must be positive")
        if self.r_max < 1:
            raise ConfigError("r_max must be positive")
        object.__setattr__(self, "splits", tuple(int(b) for b in self.splits))

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastSpec":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        extra = set(d) - set(known)
        if extra:
            raise ConfigError(f"unknown forecast spec fields: {sorted(extra)}")
        return cls(**known)


@dataclass
class ForecastReport:
    spec: ForecastSpec
    origins: list = field(default_factory=list)      # t: last period of each window
    forecasts: list = field(default_factory=list)    # factor-augmented forecast of y_{t+s}
    benchmark: list = field(default_factory=list)    # AR forecast with the same lag order
    realized: list = field(default_factory=list)
    n_factors: list = field(default_factory=list)
    lags: list = field(default_factory=list)
    skipped: list = field(default_factory=list)      # (t, reason) for windows dropped from both
    mse: float = math.nan
    mse_benchmark: float = math.nan
    relative_mse: float = math.nan
    subperiods: list = field(default_factory=list)
    flags: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spec"] = asdict(self.spec)
        d["skipped"] = [list(s) for s in self.skipped]
        return d


def _mse(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.mean((a - b) ** 2)) if a.size else math.nan


def _choose_r(wpanel, spec, cfg):
    r = spec.r_selection
    if isinstance(r, int):
        return r
    if r == "PCp1":
        return pcp1_select(wpanel, min(spec.r_max, wpanel.n_series, wpanel.n_periods))
    rep = select_factors(wpanel, spec.r_max, cfg, method="rank" if r == "rank" else "ic")
    return rep.r_rank if r == "rank" else rep.r_ic


def _window_factors(wpanel, spec, cfg):
    r = _choose_r(wpanel, spec, cfg)
    if r is None or r < 1:
        raise ModalFactorError(f"factor number selection failed (r={r})")
    if spec.factor_method == "PCA":
        return pca_fit(wpanel, r).factors
    res = amem.fit(wpanel, cfg.with_factors(r))
    return res.model.factors


def _forecast_window(y, X, t, spec, cfg, flags):
    """Forecasts of y_{t+s} from the window ending at t; uses y[:t+1] and X[:, :t+1] only."""
    s, w = spec.horizon, spec.window
    lo = t - w + 1
    yw = y[lo:t + 1]
    ar = fit_ar_bic(yw, spec.p_max, s)
    flags.update(ar.flags)
    p = ar.p
    Z, target, tau = _lag_design(yw, p, s, spec.p_max, yw.size - s)
    zt = np.concatenate([[1.0], yw[w - 1 - np.arange(p + 1)]])
    bench = float(zt @ ar.coefficients)
    if spec.factor_method == "none":
        return bench, bench, 0, p
    wpanel = standardize(Panel(X[:, lo:t + 1]))
    F = _window_factors(wpanel, spec, cfg)
    coef, deficient = _ols(np.column_stack([Z, F[tau]]), target)
    if deficient:
        flags.add("collinear_design")
    pred = float(np.concatenate([zt, F[w - 1]]) @ coef)
    return pred, bench, F.shape[1], p


def rolling_eval(target, panel: Panel, spec: ForecastSpec, cfg: EstimationConfig | None = None) -> ForecastReport:
    """Score factor-augmented and AR forecasts over every rolling window.

    A window ends at t = window-1, ..., T-1-s; its forecast of y_{t+s} is
    compared with the realization. Windows whose factor step fails are
    dropped from both the model and the benchmark.
    """
    y = np.asarray(target, dtype=float).ravel()
    T = panel.n_periods
    if y.size != T:
        raise DataError(f"target has {y.size} periods but the panel has {T}")
    if not np.all(np.isfinite(y)):
        raise DataError("target contains non-finite values")
    if T < spec.window + spec.horizon:
        raise DataError(f"need at least window + horizon = {spec.window + spec.horizon} periods, got {T}")
    cfg = cfg or EstimationConfig(bandwidth_constant=spec.bandwidth_constant)
    if cfg.bandwidth_constant != spec.bandwidth_constant:
        cfg = EstimationConfig(**{**asdict(cfg), "bandwidth_constant": spec.bandwidth_constant})
    X = panel.values
    rep = ForecastReport(spec=spec)
    flags = set()
    for t in range(spec.window - 1, T - spec.horizon):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                pred, bench, r, p = _forecast_window(y, X, t, spec, cfg, flags)
        except ModalFactorError as exc:
            rep.skipped.append((t, f"{type(exc).__name__}: {exc}"))
            flags.add("skipped_windows")
            continue
        rep.origins.append(t)
        rep.forecasts.append(pred)
        rep.benchmark.append(bench)
        rep.realized.append(float(y[t + spec.horizon]))
        rep.n_factors.append(r)
        rep.lags.append(p)
    rep.mse = _mse(rep.forecasts, rep.realized)
    rep.mse_benchmark = _mse(rep.benchmark, rep.realized)
    rep.relative_mse = rep.mse / rep.mse_benchmark if rep.mse_benchmark > 0 else math.nan
    edges = [-math.inf] + sorted(set(spec.splits)) + [math.inf]
    origins = np.asarray(rep.origins)
    for a, b in zip(edges[:-1], edges[1:]):
        m = (origins >= a) & (origins < b)
        if not np.any(m):
            continue
        f = np.asarray(rep.forecasts)[m]
        g = np.asarray(rep.benchmark)[m]
        z = np.asarray(rep.realized)[m]
        mb = _mse(g, z)
        rep.subperiods.append({
            "start": int(origins[m][0]), "end": int(origins[m][-1]), "n": int(m.sum()),
            "mse": _mse(f, z), "mse_benchmark": mb,
            "relative_mse": _mse(f, z) / mb if mb > 0 else math.nan,
        })
    rep.flags = tuple(sorted(flags))
    return rep


def write_forecast_csv(report: ForecastReport, path) -> None:
    """One row per forecast origin: t, target date, r, p, forecast, benchmark, realized."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "target_t", "n_factors", "p", "forecast", "benchmark", "realized"])
        for t, f, b, z, r, p in zip(report.origins, report.forecasts, report.benchmark,
                                    report.realized, report.n_factors, report.lags):
            w.writerow([t, t + report.spec.horizon, r, p, f"{f:.17g}", f"{b:.17g}", f"{z:.17g}"])


def save_report_json(report: ForecastReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, allow_nan=True) + "\n")


def signal_dgp(T: int = 180, N: int = 50, r: int = 2, horizon: int = 1, seed: int = 0,
               noise: float = 0.1, idio: float = 1.0):
    """Synthetic target driven by the panel's factors.

    y_{t+s} = gamma' f_t + noise * u_{t+s}; X_it = lambda_i' f_t + idio * e_it with
    i.i.d. standard normal f, lambda, e, u and gamma = (1, ..., 1).
    Returns (y, Panel, F).
    """
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((T, r))
    lam = rng.standard_normal((N, r))
    X = lam @ F.T + idio * rng.standard_normal((N, T))
    y = noise * rng.standard_normal(T)
    y[horizon:] += F[:-horizon] @ np.ones(r)
    return y, Panel(X), F
