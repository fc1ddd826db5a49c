"""Choosing the number of modal factors: rank-threshold and information criterion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import amem
from .amem import EstimationConfig
from .core import Panel, bandwidth, check_bandwidth, scaled_kernel
from .errors import ConfigError, DiagnosticError, ModalFactorError

__all__ = [
    "SelectionReport",
    "bandwidth",
    "rank_threshold",
    "null_objective",
    "ic_penalty",
    "select_rank",
    "select_ic",
    "select_factors",
]

RANK_EXPONENT = 0.3
IC_EXPONENT = 0.4
IC_CONSTANT = 3.0 / 7.0
R_MAX_DEFAULT = 8


@dataclass
class SelectionReport:
    r_max: int
    eigenvalues: list[float] | None = None
    threshold: float | None = None
    r_rank: int | None = None
    ic_values: list[float] | None = None
    objectives: list[float] | None = None
    penalty: float | None = None
    r_ic: int | None = None
    failures: list[int] = field(default_factory=list)
    fits: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("fits")
        return d

    def table(self) -> list[tuple]:
        """Rows (r, sigma_hat, threshold, IC, penalty) for display."""
        rows = []
        for r in range(1, self.r_max + 1):
            sig = self.eigenvalues[r - 1] if self.eigenvalues else None
            ic = self.ic_values[r - 1] if self.ic_values else None
            rows.append((r, sig, self.threshold, ic, self.penalty))
        return rows


def rank_threshold(sigma1: float, N: int, T: int, exponent: float = RANK_EXPONENT) -> float:
    """sigma1 * (L^(4/7))^(-exponent), L = min(N, T)."""
    if sigma1 < 0:
        raise ValueError("sigma1 must be non-negative")
    return sigma1 * min(N, T) ** (-4.0 / 7.0 * exponent)


def null_objective(panel: Panel, h) -> float:
    """Objective of the zero-factor model, (NT)^-1 sum K_h(X_it)."""
    return float(np.mean(scaled_kernel(panel.values, check_bandwidth(h))))


def ic_penalty(obj_rbar: float, obj_null: float, N: int, T: int,
               exponent: float = IC_EXPONENT, constant: float = IC_CONSTANT) -> float:
    """constant * (obj_rbar - obj_null) * (L^(4/7))^(-exponent)."""
    if obj_rbar < obj_null - 1e-12:
        raise DiagnosticError(
            f"r_max fit objective {obj_rbar} is below the zero-factor objective {obj_null}; "
            "the r_max fit likely failed"
        )
    return constant * (obj_rbar - obj_null) * min(N, T) ** (-4.0 / 7.0 * exponent)


def _check_rmax(panel, r_max):
    if int(r_max) != r_max or not 1 <= r_max <= min(panel.n_series, panel.n_periods):
        raise ConfigError(
            f"r_max={r_max} must lie in [1, min(N, T)={min(panel.n_series, panel.n_periods)}]"
        )


def _rank_from_fit(report, res, N, T, exponent):
    sig = np.diag(res.model.loadings.T @ res.model.loadings) / N
    report.eigenvalues = [float(v) for v in sig]
    report.threshold = rank_threshold(float(sig[0]), N, T, exponent)
    report.r_rank = int(np.sum(sig > report.threshold))


def select_rank(panel: Panel, r_max: int = R_MAX_DEFAULT, cfg: EstimationConfig | None = None,
                exponent: float = RANK_EXPONENT) -> SelectionReport:
    """Count diagonal entries of Lambda'Lambda/N (fit at r_max) above the threshold."""
    cfg = cfg or EstimationConfig()
    _check_rmax(panel, r_max)
    res = amem.fit(panel, cfg.with_factors(r_max))
    report = SelectionReport(r_max=r_max, fits={r_max: res})
    _rank_from_fit(report, res, panel.n_series, panel.n_periods, exponent)
    return report


def _ic_fits(panel, r_max, cfg):
    fits, failures = {}, []
    for r in range(1, r_max + 1):
        try:
            fits[r] = amem.fit(panel, cfg.with_factors(r))
        except ModalFactorError:
            failures.append(r)
    return fits, failures


def _ic_from_fits(report, panel, fits, failures, r_max, cfg, exponent, constant):
    N, T = panel.n_series, panel.n_periods
    h = bandwidth(N, T, cfg.bandwidth_constant)
    report.failures = failures
    report.fits = fits
    objs = [fits[r].objective_value if r in fits else math.nan for r in range(1, r_max + 1)]
    report.objectives = objs
    if r_max not in fits:
        return report
    report.penalty = ic_penalty(objs[-1], null_objective(panel, h), N, T, exponent, constant)
    ic = [-m + r * report.penalty for r, m in enumerate(objs, start=1)]
    report.ic_values = ic
    finite = [v if math.isfinite(v) else math.inf for v in ic]
    # argmin keeps the first (smallest r) minimizer
    report.r_ic = int(np.argmin(finite)) + 1
    return report


def select_ic(panel: Panel, r_max: int = R_MAX_DEFAULT, cfg: EstimationConfig | None = None,
              exponent: float = IC_EXPONENT, constant: float = IC_CONSTANT) -> SelectionReport:
    """Minimize IC(r) = -M(theta_hat^r) + r * P2 over r = 1..r_max."""
    cfg = cfg or EstimationConfig()
    _check_rmax(panel, r_max)
    fits, failures = _ic_fits(panel, r_max, cfg)
    report = SelectionReport(r_max=r_max)
    return _ic_from_fits(report, panel, fits, failures, r_max, cfg, exponent, constant)


def select_factors(panel: Panel, r_max: int = R_MAX_DEFAULT, cfg: EstimationConfig | None = None,
                   method: str = "both", rank_exponent: float = RANK_EXPONENT,
                   ic_exponent: float = IC_EXPONENT) -> SelectionReport:
    """Run one or both selectors; ``both`` reuses the r_max IC fit for the rank rule."""
    if method not in ("rank", "ic", "both"):
        raise ConfigError(f"unknown selection method {method!r}")
    cfg = cfg or EstimationConfig()
    if method == "rank":
        return select_rank(panel, r_max, cfg, rank_exponent)
    if method == "ic":
        return select_ic(panel, r_max, cfg, ic_exponent)
    _check_rmax(panel, r_max)
    fits, failures = _ic_fits(panel, r_max, cfg)
    report = SelectionReport(r_max=r_max)
    if r_max in fits:
        _rank_from_fit(report, fits[r_max], panel.n_series, panel.n_periods, rank_exponent)
    return _ic_from_fits(report, panel, fits, failures, r_max, cfg, ic_exponent, IC_CONSTANT)
