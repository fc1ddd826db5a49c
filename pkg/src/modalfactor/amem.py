"""Alternating modal EM (AMEM) estimation of factors and loadings.

Each block update is a batch of linear modal regressions solved by the
modal EM iteration: Gaussian-kernel E-step weights followed by a closed-form
weighted least squares M-step. Loadings are updated for all series against
the current factors, then factors for all periods against the new loadings.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    INV_SQRT_2PI,
    FactorModel,
    Panel,
    bandwidth,
    check_bandwidth,
    common_component,
    normalize,
    normalize_svd,
    objective,
)
from .errors import ConfigError, DegeneracyWarning, DegenerateFactorsError, NumericalError

logger = logging.getLogger(__name__)

PINV_RCOND = 1e-12


@dataclass(frozen=True)
class EstimationConfig:
    n_factors: int = 1
    bandwidth_constant: float = 5.0
    outer_epsilon: float = 1e-6
    outer_max_sweeps: int = 200
    inner_tol: float = 1e-8
    inner_max_iters: int = 50
    n_starts: int = 2
    seed: int = 0

    def __post_init__(self):
        if int(self.n_factors) != self.n_factors or self.n_factors < 1:
            raise ConfigError(f"n_factors must be a positive integer, got {self.n_factors}")
        if not self.bandwidth_constant > 0:
            raise ConfigError("bandwidth_constant must be positive")
        if not (self.outer_epsilon > 0 and self.inner_tol > 0):
            raise ConfigError("tolerances must be positive")
        if self.outer_max_sweeps < 1 or self.inner_max_iters < 1:
            raise ConfigError("iteration limits must be positive")
        if self.n_starts < 1:
            raise ConfigError("n_starts must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def with_factors(self, r: int) -> "EstimationConfig":
        return replace(self, n_factors=r)


@dataclass
class FitResult:
    model: FactorModel
    objective_value: float
    n_sweeps: int
    converged: bool
    start_index: int
    bandwidth: float
    history: list[float] = field(default_factory=list)
    start_objectives: list[float] = field(default_factory=list)
    flags: tuple[str, ...] = ()
    normalization_drift: float = 0.0

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "objective_value": self.objective_value,
            "n_sweeps": self.n_sweeps,
            "converged": self.converged,
            "start_index": self.start_index,
            "bandwidth": self.bandwidth,
            "history": list(self.history),
            "start_objectives": list(self.start_objectives),
            "flags": list(self.flags),
            "normalization_drift": self.normalization_drift,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            model=FactorModel.from_dict(d["model"]),
            objective_value=d["objective_value"],
            n_sweeps=d["n_sweeps"],
            converged=d["converged"],
            start_index=d["start_index"],
            bandwidth=d["bandwidth"],
            history=list(d.get("history", [])),
            start_objectives=list(d.get("start_objectives", [])),
            flags=tuple(d.get("flags", ())),
            normalization_drift=d.get("normalization_drift", 0.0),
        )


# ---------------------------------------------------------------- batched kernels

def _row_objective(resid: np.ndarray, h: float) -> np.ndarray:
    z = resid / h
    return np.mean(np.exp(-0.5 * z * z), axis=-1) * (INV_SQRT_2PI / h)


def _weights(resid: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized kernel weights; returns (weights, fallback_mask)."""
    e = -0.5 * (resid / h) ** 2
    # shift by the row maximum so the largest weight is exp(0); ratios are exact
    e -= np.max(e, axis=-1, keepdims=True)
    w = np.exp(e)
    s = np.sum(w, axis=-1, keepdims=True)
    bad = ~(np.isfinite(s[..., 0]) & (s[..., 0] > 0))
    w = w / np.where(bad[..., None], 1.0, s)
    if np.any(bad):
        w[bad] = 1.0 / resid.shape[-1]
    return w, bad


def _wls(X: np.ndarray, D: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise weighted least squares: for each row k solve
    (D' W_k D) b_k = D' W_k x_k. Returns (B, degenerate_mask)."""
    r = D.shape[1]
    outer = (D[:, :, None] * D[:, None, :]).reshape(D.shape[0], r * r)
    A = (W @ outer).reshape(W.shape[0], r, r)
    A = 0.5 * (A + A.transpose(0, 2, 1))
    b = (W * X) @ D
    ev, V = np.linalg.eigh(A)
    top = ev[:, -1:]
    keep = ev > PINV_RCOND * np.where(top > 0, top, 1.0)
    degenerate = ~np.all(keep, axis=1) | (top[:, 0] <= 0)
    inv = np.where(keep, 1.0 / np.where(keep, ev, 1.0), 0.0)
    coef = np.einsum("nij,nj,nkj,nk->ni", V, inv, V, b)
    return coef, degenerate


def _mem_block(X, D, P0, h, tol, max_iters):
    """Modal EM for every row of X (rows independent) against design D.

    X: n x m responses, D: m x r design, P0: n x r starting coefficients.
    Returns (coefficients, iterations used, flags).
    """
    P = P0.copy()
    R = X - P @ D.T
    m_cur = _row_objective(R, h)
    active = np.arange(X.shape[0])
    flags = set()
    it = 0
    while active.size and it < max_iters:
        it += 1
        W, fb = _weights(R[active], h)
        if np.any(fb):
            flags.add("uniform_weights")
        Pn, deg = _wls(X[active], D, W)
        if np.any(deg):
            flags.add("degenerate_design")
        Rn = X[active] - Pn @ D.T
        m_new = _row_objective(Rn, h)
        finite = np.all(np.isfinite(Pn), axis=1) & np.isfinite(m_new)
        up = finite & (m_new >= m_cur[active])
        if np.any(~finite):
            flags.add("nonfinite_update")
        idx = active[up]
        delta = m_new[up] - m_cur[idx]
        P[idx] = Pn[up]
        R[idx] = Rn[up]
        m_cur[idx] = m_new[up]
        # rows that failed to ascend are already at a (numerical) fixed point
        active = idx[delta >= tol]
    return P, it, flags


# ---------------------------------------------------------------- public steps

def estep_weights(residuals, h) -> np.ndarray:
    """E-step weights proportional to K_h(residual), summing to one."""
    h = check_bandwidth(h)
    resid = np.asarray(residuals, dtype=float)
    if not np.all(np.isfinite(resid)):
        raise NumericalError("residuals must be finite")
    w, bad = _weights(resid[None, :], h)
    if bad[0]:
        warnings.warn("kernel weights degenerate; using uniform weights", DegeneracyWarning)
    return w[0]


def mstep_wls(x, F, weights) -> np.ndarray:
    """M-step: (F'WF)^-1 F'W x, pseudoinverse if F'WF is numerically singular."""
    x = np.asarray(x, dtype=float)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    w = np.asarray(weights, dtype=float)
    if F.shape[0] != x.shape[0] or w.shape != x.shape:
        raise ValueError("x, F and weights must share the first dimension")
    coef, deg = _wls(x[None, :], F, w[None, :])
    if deg[0]:
        warnings.warn("singular weighted design; used pseudoinverse", DegeneracyWarning)
    return coef[0]


def series_objective(x, F, lam, h) -> float:
    """Per-series objective T^-1 sum_t K_h(x_t - f_t' lam)."""
    x = np.asarray(x, dtype=float)
    return float(_row_objective(x - np.atleast_2d(F) @ np.asarray(lam, dtype=float), h))


def mem_solve(x, F, lam_init, h, cfg: EstimationConfig) -> np.ndarray:
    """Maximize the per-series objective over lambda by modal EM from lam_init."""
    h = check_bandwidth(h)
    x = np.asarray(x, dtype=float)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    lam0 = np.asarray(lam_init, dtype=float).reshape(1, -1)
    P, _, flags = _mem_block(x[None, :], F, lam0, h, cfg.inner_tol, cfg.inner_max_iters)
    if "degenerate_design" in flags:
        warnings.warn("singular weighted design; used pseudoinverse", DegeneracyWarning)
    return P[0]


def _sweep(X, lam, fac, h, cfg):
    lam, _, f1 = _mem_block(X, fac, lam, h, cfg.inner_tol, cfg.inner_max_iters)
    fac, _, f2 = _mem_block(X.T, lam, fac, h, cfg.inner_tol, cfg.inner_max_iters)
    return lam, fac, f1 | f2


def sweep(panel: Panel, model: FactorModel, h, cfg: EstimationConfig) -> FactorModel:
    """One outer AMEM iteration: all loadings, then all factors."""
    h = check_bandwidth(h)
    lam, fac, flags = _sweep(panel.values, model.loadings, model.factors, h, cfg)
    if "degenerate_design" in flags:
        warnings.warn("singular weighted design; used pseudoinverse", DegeneracyWarning)
    return FactorModel(lam, fac)


def _initial_model(N, T, r, seed, start):
    rng = np.random.default_rng([int(seed), int(start)])
    lam = rng.standard_normal((N, r))
    fac = rng.standard_normal((T, r))
    q, _ = np.linalg.qr(fac)
    return lam, q * np.sqrt(T)


def _run_start(X, lam, fac, h, cfg, start):
    hist = [float(_row_objective((X - lam @ fac.T).ravel(), h))]
    logger.debug("start=%d sweep=%d obj=%.17g", start, 0, hist[0])
    flags = set()
    converged = False
    for k in range(1, cfg.outer_max_sweeps + 1):
        lam_n, fac_n, f = _sweep(X, lam, fac, h, cfg)
        flags |= f
        if not (np.all(np.isfinite(lam_n)) and np.all(np.isfinite(fac_n))):
            flags.add("diverged")
            break
        lam, fac = lam_n, fac_n
        val = float(_row_objective((X - lam @ fac.T).ravel(), h))
        hist.append(val)
        logger.debug("start=%d sweep=%d obj=%.17g", start, k, val)
        if abs(hist[-1] - hist[-2]) < cfg.outer_epsilon:
            converged = True
            break
    return lam, fac, hist, converged, flags


def fit(panel: Panel, cfg: EstimationConfig, h: float | None = None) -> FitResult:
    """Multistart AMEM fit. The bandwidth defaults to c * min(N, T)^(-1/7)."""
    N, T = panel.n_series, panel.n_periods
    r = cfg.n_factors
    if not 1 <= r <= min(N, T):
        raise ConfigError(f"n_factors={r} must lie in [1, min(N, T)={min(N, T)}]")
    h = bandwidth(N, T, cfg.bandwidth_constant) if h is None else check_bandwidth(h)
    X = panel.values
    best = None
    start_objs = []
    all_flags = set()
    for s in range(cfg.n_starts):
        lam, fac = _initial_model(N, T, r, cfg.seed, s)
        lam, fac, hist, conv, flags = _run_start(X, lam, fac, h, cfg, s)
        all_flags |= flags
        start_objs.append(hist[-1])
        if best is None or hist[-1] > best[2][-1]:
            best = (lam, fac, hist, conv, s)
    lam, fac, hist, conv, s = best
    raw = FactorModel(lam, fac)
    try:
        model, _ = normalize(raw)
    except DegenerateFactorsError:
        # more factors than the data support (e.g. an exact low-rank panel)
        model = normalize_svd(raw)
        all_flags.add("rank_deficient_factors")
    drift = float(np.max(np.abs(common_component(model) - common_component(raw))))
    obj = objective(panel, model, h)
    return FitResult(
        model=model,
        objective_value=obj,
        n_sweeps=len(hist) - 1,
        converged=conv,
        start_index=s,
        bandwidth=h,
        history=hist,
        start_objectives=start_objs,
        flags=tuple(sorted(all_flags)),
        normalization_drift=drift,
    )
