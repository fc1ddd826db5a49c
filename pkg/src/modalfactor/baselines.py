"""Principal-components baseline, the PC_p1 factor-number criterion and the
trace-ratio accuracy metric."""
from __future__ import annotations

import math
import warnings

import numpy as np

from .core import FactorModel, Panel, sign_convention
from .errors import ConfigError, DataError, DegeneracyWarning, ShapeError


def _check_r(panel, r, name="r"):
    if int(r) != r or not 1 <= r <= min(panel.n_series, panel.n_periods):
        raise ConfigError(f"{name}={r} must lie in [1, min(N, T)]")


def _time_eigen(X):
    # eigen-decomposition of X'X (T x T), eigenvalues descending
    w, V = np.linalg.eigh(X.T @ X)
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def pca_fit(panel: Panel, r: int) -> FactorModel:
    """F_hat = sqrt(T) * top-r eigenvectors of X'X, Lambda_hat = X F_hat / T.

    No demeaning is applied.
    """
    _check_r(panel, r)
    X = panel.values
    T = panel.n_periods
    _, V = _time_eigen(X)
    F = math.sqrt(T) * V[:, :r]
    F = F * sign_convention(F)
    return FactorModel(X @ F / T, F, normalized=True)


def pcp1_criterion(panel: Panel, r_max: int) -> np.ndarray:
    """PC_p1(r) for r = 1..r_max (index 0 holds r = 1)."""
    _check_r(panel, r_max, "r_max")
    X = panel.values
    N, T = X.shape
    w, _ = _time_eigen(X)
    total = float(np.sum(X * X))
    V = np.array([(total - np.sum(w[:r])) / (N * T) for r in range(1, r_max + 1)])
    # residuals at rounding level are exact fits; zero them so ties resolve to the smallest r
    V[V <= 1e-12 * total / (N * T)] = 0.0
    sigma2 = V[-1]
    pen = (N + T) / (N * T) * math.log(N * T / (N + T))
    return V + np.arange(1, r_max + 1) * sigma2 * pen


def pcp1_select(panel: Panel, r_max: int = 8) -> int:
    """PC_p1 information-criterion choice of the number of principal-component factors."""
    return int(np.argmin(pcp1_criterion(panel, r_max))) + 1


def trace_ratio(F_hat, F_0) -> float:
    """tr[F0' P F0] / tr[F0' F0] with P the projector on span(F_hat)."""
    F_hat = np.asarray(F_hat, dtype=float)
    F_0 = np.asarray(F_0, dtype=float)
    if F_hat.ndim == 1:
        F_hat = F_hat[:, None]
    if F_0.ndim == 1:
        F_0 = F_0[:, None]
    if F_hat.shape[0] != F_0.shape[0]:
        raise ShapeError("F_hat and F_0 must have the same number of periods")
    denom = float(np.sum(F_0 * F_0))
    if denom == 0:
        raise DataError("trace ratio undefined for a zero true factor matrix")
    G = F_hat.T @ F_hat
    B = F_hat.T @ F_0
    try:
        if np.linalg.cond(G) > 1e12:
            raise np.linalg.LinAlgError
        C = np.linalg.solve(G, B)
    except np.linalg.LinAlgError:
        warnings.warn("F_hat'F_hat is singular; using pseudoinverse", DegeneracyWarning)
        C = np.linalg.pinv(G, rcond=1e-12) @ B
    return float(np.sum(B * C) / denom)
