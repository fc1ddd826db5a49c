import numpy as np
import pytest

from modalfactor import FactorModel, Panel


def random_model(rng, N, T, r):
    return FactorModel(rng.standard_normal((N, r)), rng.standard_normal((T, r)))


def factor_panel(rng, N, T, r, noise=0.0, df=None):
    """X = Lambda F' + noise, returning (panel, Lambda, F)."""
    L = rng.standard_normal((N, r))
    F = rng.standard_normal((T, r))
    X = L @ F.T
    if noise:
        e = rng.standard_t(df, (N, T)) if df else rng.standard_normal((N, T))
        X = X + noise * e
    return Panel(X), L, F


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
