"""Panel and factor-model containers, the Gaussian kernel family, the modal
objective, normalization and common-component metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DegenerateFactorsError,
    InvalidBandwidthError,
    ShapeError,
)

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Panel:
    """Observed data, stored series-major: ``values[i, t] = X_it``."""

    values: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"panel must be a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("panel contains non-finite values")
        if self.names is not None and len(self.names) != values.shape[0]:
            raise ShapeError("number of series names does not match panel rows")
        object.__setattr__(self, "values", values)

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_time_major(cls, data, names=None) -> "Panel":
        """Build from a T x N array (one row per period)."""
        return cls(np.asarray(data, dtype=float).T, None if names is None else tuple(names))

    def subset_periods(self, start: int, stop: int) -> "Panel":
        return Panel(self.values[:, start:stop], self.names)


@dataclass(frozen=True)
class FactorModel:
    """Loadings (N x r, one row per series) and factors (T x r, one row per period)."""

    loadings: np.ndarray
    factors: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        fac = np.atleast_2d(np.asarray(self.factors, dtype=float))
        if lam.ndim != 2 or fac.ndim != 2 or lam.shape[1] != fac.shape[1]:
            raise ShapeError(
                f"loadings {lam.shape} and factors {fac.shape} must share the factor dimension"
            )
        if lam.shape[1] < 1:
            raise ShapeError("at least one factor is required")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(fac))):
            raise DataError("factor model contains non-finite entries")
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "factors", fac)

    @property
    def n_series(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_periods(self) -> int:
        return self.factors.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    def to_dict(self) -> dict:
        return {
            "n_series": self.n_series,
            "n_periods": self.n_periods,
            "n_factors": self.n_factors,
            "loadings": self.loadings.tolist(),
            "factors": self.factors.tolist(),
            "normalized": bool(self.normalized),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorModel":
        lam = np.asarray(d["loadings"], dtype=float).reshape(d["n_series"], d["n_factors"])
        fac = np.asarray(d["factors"], dtype=float).reshape(d["n_periods"], d["n_factors"])
        return cls(lam, fac, bool(d.get("normalized", False)))


# ---------------------------------------------------------------- kernels

def check_bandwidth(h) -> float:
    h = float(h)
    if not (h > 0 and math.isfinite(h)):
        raise InvalidBandwidthError(f"bandwidth must be positive and finite, got {h}")
    return h


def gaussian_kernel(u, order: int = 0):
    """Standard normal density and its first two derivatives.

    order 0: phi(u); order 1: -u phi(u); order 2: (u^2 - 1) phi(u).
    Works elementwise on arrays.
    """
    u = np.asarray(u, dtype=float)
    phi = INV_SQRT_2PI * np.exp(-0.5 * u * u)
    if order == 0:
        out = phi
    elif order == 1:
        out = -u * phi
    elif order == 2:
        out = (u * u - 1.0) * phi
    else:
        raise ValueError(f"kernel derivative order must be 0, 1 or 2, got {order}")
    return out[()] if out.ndim == 0 else out


def scaled_kernel(u, h, order: int = 0):
    """``d^order/du^order [K(u/h)/h] = h^-(1+order) K^(order)(u/h)``."""
    h = check_bandwidth(h)
    return gaussian_kernel(np.asarray(u, dtype=float) / h, order) / h ** (1 + order)


# ---------------------------------------------------------------- objective

def _check_dims(panel: Panel, model: FactorModel):
    if model.n_series != panel.n_series or model.n_periods != panel.n_periods:
        raise ShapeError(
            f"model is {model.n_series}x{model.n_periods} but panel is "
            f"{panel.n_series}x{panel.n_periods}"
        )


def common_component(model: FactorModel) -> np.ndarray:
    """N x T matrix with entries lambda_i' f_t."""
    return model.loadings @ model.factors.T


def objective(panel: Panel, model: FactorModel, h) -> float:
    """Kernel objective (NT)^-1 sum_it K_h(X_it - lambda_i' f_t)."""
    h = check_bandwidth(h)
    _check_dims(panel, model)
    resid = panel.values - common_component(model)
    return float(np.mean(scaled_kernel(resid, h)))


def component_distance(a: FactorModel, b: FactorModel) -> float:
    """Mean squared difference between two common components."""
    if a.n_series != b.n_series or a.n_periods != b.n_periods:
        raise ShapeError("models must share N and T")
    diff = common_component(a) - common_component(b)
    return float(np.mean(diff * diff))


def align_sign(estimated_F, true_F) -> np.ndarray:
    """Diagonal +/-1 matrix sgn(diag(F_hat' F_0)), with sgn(0) = +1."""
    estimated_F = np.atleast_2d(np.asarray(estimated_F, dtype=float))
    true_F = np.atleast_2d(np.asarray(true_F, dtype=float))
    if estimated_F.shape != true_F.shape:
        raise ShapeError(f"shape mismatch {estimated_F.shape} vs {true_F.shape}")
    d = np.einsum("tj,tj->j", estimated_F, true_F)
    return np.diag(np.where(d >= 0, 1.0, -1.0))


# ---------------------------------------------------------------- normalization

def sign_convention(F: np.ndarray) -> np.ndarray:
    """Signs making the largest-magnitude entry of each column positive
    (earliest index wins ties)."""
    idx = np.argmax(np.abs(F), axis=0)
    vals = F[idx, np.arange(F.shape[1])]
    return np.where(vals >= 0, 1.0, -1.0)


def normalize(model: FactorModel) -> tuple[FactorModel, np.ndarray]:
    """Rotate so that F'F/T = I and Lambda'Lambda/N is diagonal, descending.

    Returns the normalized model and the r x r matrix ``R`` with
    ``F_new = F @ R`` and ``Lambda_new = Lambda @ inv(R).T``.
    """
    lam, fac = model.loadings, model.factors
    N, T = model.n_series, model.n_periods
    gram = fac.T @ fac / T
    w, V = np.linalg.eigh(gram)
    if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
        raise DegenerateFactorsError("factor matrix is rank deficient; cannot normalize")
    inv_sqrt = (V / np.sqrt(w)) @ V.T
    sqrt_ = (V * np.sqrt(w)) @ V.T
    f_t = fac @ inv_sqrt
    l_t = lam @ sqrt_
    d, Q = np.linalg.eigh(l_t.T @ l_t / N)
    order = np.argsort(-d, kind="stable")
    Q = Q[:, order]
    f_new = f_t @ Q
    s = sign_convention(f_new)
    R = inv_sqrt @ Q * s
    return FactorModel(l_t @ Q * s, f_new * s, normalized=True), R


def normalize_svd(model: FactorModel) -> FactorModel:
    """Normalize through the SVD of the common component.

    Works when F is rank deficient (some factor directions are then
    unidentified and are completed by the SVD's orthonormal basis).
    Satisfies the same constraints and sign convention as ``normalize``.
    """
    N, T, r = model.n_series, model.n_periods, model.n_factors
    U, s, Vt = np.linalg.svd(common_component(model), full_matrices=False)
    F = math.sqrt(T) * Vt[:r].T
    lam = U[:, :r] * (s[:r] / math.sqrt(T))
    sg = sign_convention(F)
    return FactorModel(lam * sg, F * sg, normalized=True)


def normalization_error(model: FactorModel) -> dict:
    """Deviations from the normalization constraints (for audits and tests)."""
    T, N = model.n_periods, model.n_series
    ff = model.factors.T @ model.factors / T
    ll = model.loadings.T @ model.loadings / N
    diag = np.diag(ll)
    return {
        "ff_minus_identity": float(np.max(np.abs(ff - np.eye(model.n_factors)))),
        "ll_offdiag": float(np.max(np.abs(ll - np.diag(diag)))),
        "ll_diag_increase": float(max(0.0, np.max(np.diff(diag), initial=0.0))),
    }


# ---------------------------------------------------------------- file IO

def read_panel_csv(path) -> Panel:
    """Read a time-major CSV (header of series names, one row per period)."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read panel file {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    names = [n.strip() for n in rows[0]]
    data = []
    for k, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(names):
            raise DataError(f"{path}:{k}: expected {len(names)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}:{k}: missing or non-numeric value") from exc
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{k}: missing or non-finite value")
        data.append(vals)
    if not data:
        raise DataError(f"{path}: no data rows")
    return Panel.from_time_major(np.array(data), names)


def write_panel_csv(panel: Panel, path) -> None:
    names = panel.names or tuple(f"x{i + 1}" for i in range(panel.n_series))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in panel.values.T:
            w.writerow([f"{v:.17g}" for v in row])


def save_model_json(model: FactorModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model_json(path) -> FactorModel:
    return FactorModel.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- bandwidth rules

def bandwidth(N: int, T: int, c: float) -> float:
    """Estimation bandwidth c * min(N, T)^(-1/7)."""
    return check_bandwidth(c * min(N, T) ** (-1.0 / 7.0))


def inference_bandwidth(T: int, c: float) -> float:
    """Undersmoothed bandwidth c * T^(-1/12) used for variance estimation and CIs."""
    return check_bandwidth(c * T ** (-1.0 / 12.0))
