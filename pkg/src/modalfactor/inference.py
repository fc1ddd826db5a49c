"""Sandwich variance estimates for fitted loadings and factors, and
pointwise confidence intervals for the factor path."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .amem import FitResult
from .core import FactorModel, Panel, check_bandwidth, gaussian_kernel, inference_bandwidth
from .errors import ConfigError, DegeneracyWarning, NumericalError, ShapeError

__all__ = [
    "SandwichVariance",
    "loading_variance",
    "factor_variance",
    "factor_ci",
    "inference_bandwidth",
    "write_ci_csv",
]


@dataclass
class SandwichVariance:
    """bread^-1 meat bread^-1; the estimator's covariance is sandwich / scale."""

    bread: np.ndarray
    meat: np.ndarray
    sandwich: np.ndarray
    scale: float
    flags: tuple[str, ...] = ()

    @property
    def covariance(self) -> np.ndarray:
        return self.sandwich / self.scale


def _model(fit) -> FactorModel:
    return fit.model if isinstance(fit, FitResult) else fit


def _sandwich(resid, design, h, count, flags):
    """Bread/meat over one row (or column) of residuals with its design rows."""
    u = resid / h
    k2 = gaussian_kernel(u, 2) / h**3
    k1sq = gaussian_kernel(u, 1) ** 2
    bread = (design.T * k2) @ design / count
    meat = (design.T * k1sq) @ design / (count * h)
    meat = 0.5 * (meat + meat.T)
    bread = 0.5 * (bread + bread.T)
    if not np.any(meat):
        flags.append("zero_meat")
    s = np.linalg.svd(bread, compute_uv=False)
    if s[0] == 0 or s[-1] <= 1e-12 * s[0]:
        flags.append("singular_bread")
        warnings.warn("bread matrix is singular; using pseudoinverse", DegeneracyWarning)
        binv = np.linalg.pinv(bread, rcond=1e-12)
    else:
        binv = np.linalg.inv(bread)
    sw = binv @ meat @ binv
    return bread, meat, 0.5 * (sw + sw.T)


def _balance_warning(N, T):
    if max(N, T) / min(N, T) > 3:
        warnings.warn(
            f"panel is unbalanced (N={N}, T={T}); the asymptotic variance assumes N and T "
            "grow proportionally",
            RuntimeWarning,
        )


def loading_variance(panel: Panel, fit, h, i: int) -> SandwichVariance:
    """Bread T^-1 sum K_h''(e_it) f f', meat (Th)^-1 sum K'(e_it/h)^2 f f'; scale T h^3."""
    h = check_bandwidth(h)
    m = _model(fit)
    if m.n_series != panel.n_series or m.n_periods != panel.n_periods:
        raise ShapeError("fit does not match panel dimensions")
    N, T = panel.n_series, panel.n_periods
    _balance_warning(N, T)
    resid = panel.values[i] - m.factors @ m.loadings[i]
    flags = []
    bread, meat, sw = _sandwich(resid, m.factors, h, T, flags)
    return SandwichVariance(bread, meat, sw, T * h**3, tuple(flags))


def factor_variance(panel: Panel, fit, h, t: int) -> SandwichVariance:
    """Mirror of :func:`loading_variance` over series at period t; scale N h^3."""
    h = check_bandwidth(h)
    m = _model(fit)
    if m.n_series != panel.n_series or m.n_periods != panel.n_periods:
        raise ShapeError("fit does not match panel dimensions")
    N, T = panel.n_series, panel.n_periods
    _balance_warning(N, T)
    resid = panel.values[:, t] - m.loadings @ m.factors[t]
    flags = []
    bread, meat, sw = _sandwich(resid, m.loadings, h, N, flags)
    return SandwichVariance(bread, meat, sw, N * h**3, tuple(flags))


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def factor_ci(fit, var: SandwichVariance, N: int, h, level: float, t: int):
    """Per-coordinate interval f_hat_tj -/+ z * sqrt(sandwich_jj / (N h^3)).

    Returns (lower, upper) arrays of length r.
    """
    if not 0 < level < 1:
        raise ConfigError(f"confidence level must lie in (0, 1), got {level}")
    h = check_bandwidth(h)
    m = _model(fit)
    est = m.factors[t] if m is not None else np.zeros(var.sandwich.shape[0])
    diag = np.diag(var.sandwich).copy()
    tol = 1e-12 * max(1.0, float(np.max(np.abs(diag))))
    if np.any(diag < -tol):
        raise NumericalError("sandwich has negative diagonal entries")
    diag[diag < 0] = 0.0  # rounding below zero
    if not np.any(diag):
        warnings.warn("zero sandwich variance; interval has zero width", DegeneracyWarning)
    z = normal_quantile(0.5 + level / 2)
    half = z * np.sqrt(diag / (N * h**3))
    return est - half, est + half


def factor_intervals(panel: Panel, fit, h, level: float = 0.95, periods=None) -> list[dict]:
    """Rows (t, coordinate, estimate, lower, upper) for the requested periods."""
    m = _model(fit)
    periods = range(panel.n_periods) if periods is None else periods
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for t in periods:
            v = factor_variance(panel, m, h, t)
            lo, hi = factor_ci(m, v, panel.n_series, h, level, t)
            for j in range(m.n_factors):
                rows.append({"t": t, "coordinate": j, "estimate": float(m.factors[t, j]),
                             "lower": float(lo[j]), "upper": float(hi[j])})
    return rows


def write_ci_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "coordinate", "estimate", "lower", "upper"])
        for row in rows:
            w.writerow([row["t"], row["coordinate"], f"{row['estimate']:.17g}",
                        f"{row['lower']:.17g}", f"{row['upper']:.17g}"])
