import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import random_model
from oracles import objective_loop
from modalfactor import (
    DataError,
    DegenerateFactorsError,
    FactorModel,
    InvalidBandwidthError,
    Panel,
    ShapeError,
    align_sign,
    bandwidth,
    common_component,
    component_distance,
    gaussian_kernel,
    inference_bandwidth,
    normalization_error,
    normalize,
    objective,
    read_panel_csv,
    scaled_kernel,
    write_panel_csv,
)
from modalfactor.core import load_model_json, save_model_json

PHI0 = 1 / math.sqrt(2 * math.pi)


# ---------------------------------------------------------------- kernel

@pytest.mark.parametrize("u,order,expected", [(0, 0, 0.3989422804), (0, 1, 0.0), (0, 2, -0.3989422804)])
def test_gaussian_kernel_values(u, order, expected):
    assert gaussian_kernel(u, order) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("u,h,order,expected", [
    (0, 1, 0, 0.3989422804),
    (0, 2, 0, 0.1994711402),
    (2, 2, 1, -0.0604926811),
])
def test_scaled_kernel_values(u, h, order, expected):
    assert scaled_kernel(u, h, order) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("h", [0.0, -1.0, math.nan, math.inf])
def test_scaled_kernel_rejects_bad_bandwidth(h):
    with pytest.raises(InvalidBandwidthError):
        scaled_kernel(0.0, h)


def test_kernel_rejects_unknown_order():
    with pytest.raises(ValueError):
        gaussian_kernel(0.0, 3)


@pytest.mark.parametrize("u", np.linspace(-4, 4, 17))
def test_kernel_derivatives_match_finite_differences(u):
    d = 1e-6
    fd1 = (gaussian_kernel(u + d, 0) - gaussian_kernel(u - d, 0)) / (2 * d)
    fd2 = (gaussian_kernel(u + d, 1) - gaussian_kernel(u - d, 1)) / (2 * d)
    assert abs(gaussian_kernel(u, 1) - fd1) < 1e-8
    assert abs(gaussian_kernel(u, 2) - fd2) < 1e-8


def test_kernel_quadratures():
    mass, _ = integrate.quad(lambda u: gaussian_kernel(u, 0), -10, 10, epsabs=1e-13)
    rough, _ = integrate.quad(lambda u: gaussian_kernel(u, 1) ** 2, -10, 10, epsabs=1e-13)
    assert abs(mass - 1) < 1e-8
    assert abs(rough - 1 / (4 * math.sqrt(math.pi))) < 1e-8
    assert rough == pytest.approx(0.1410474, abs=1e-7)


def test_kernel_is_vectorized():
    u = np.array([[0.0, 1.0], [-1.0, 2.0]])
    out = gaussian_kernel(u, 0)
    assert out.shape == u.shape
    assert out[0, 1] == pytest.approx(out[1, 0])


# ---------------------------------------------------------------- objective

def test_objective_single_cell():
    p = Panel([[0.0]])
    m = FactorModel([[0.0]], [[0.0]])
    assert objective(p, m, 1.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert objective(p, m, 2.0) == pytest.approx(0.1994711402, abs=1e-10)


def test_objective_matches_double_loop(rng):
    X = rng.standard_normal((2, 2))
    m = random_model(rng, 2, 2, 1)
    assert abs(objective(Panel(X), m, 0.7) - objective_loop(X, m.loadings, m.factors, 0.7)) < 1e-12
    X = rng.standard_normal((5, 7))
    m = random_model(rng, 5, 7, 3)
    assert abs(objective(Panel(X), m, 1.3) - objective_loop(X, m.loadings, m.factors, 1.3)) < 1e-12


def test_objective_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        objective(Panel(np.zeros((3, 4))), random_model(rng, 4, 3, 1), 1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 3), h=st.floats(0.05, 10))
def test_objective_sign_invariance_and_bound(seed, r, h):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((6, 5))
    m = random_model(rng, 6, 5, r)
    S = np.diag(rng.choice([-1.0, 1.0], r))
    base = objective(Panel(X), m, h)
    flipped = objective(Panel(X), FactorModel(m.loadings @ S, m.factors @ S), h)
    assert abs(base - flipped) <= 1e-12
    assert 0 < base <= 1 / (h * math.sqrt(2 * math.pi)) + 1e-15


# ---------------------------------------------------------------- common component, distance, signs

def test_common_component_examples(rng):
    m = FactorModel([[1.0], [2.0]], [[3.0]])
    np.testing.assert_array_equal(common_component(m), [[3.0], [6.0]])
    m = random_model(rng, 4, 6, 2)
    rank1 = sum(np.outer(m.loadings[:, k], m.factors[:, k]) for k in range(2))
    np.testing.assert_allclose(common_component(m), rank1, atol=1e-14)
    flip = FactorModel(m.loadings * [-1, 1], m.factors * [-1, 1])
    np.testing.assert_array_equal(common_component(flip), common_component(m))


def test_component_distance(rng):
    a = random_model(rng, 3, 4, 2)
    assert component_distance(a, a) == 0
    assert component_distance(a, FactorModel(-a.loadings, -a.factors)) == 0
    a = FactorModel([[1.0], [2.0]], [[1.0], [0.0]])
    b = FactorModel([[0.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 0.0]])
    ca = [[1, 0], [2, 0]]
    cb = [[1, 0], [2, 1]]
    want = sum((ca[i][t] - cb[i][t]) ** 2 for i in range(2) for t in range(2)) / 4
    assert component_distance(a, b) == pytest.approx(want, abs=1e-15)
    with pytest.raises(ShapeError):
        component_distance(a, random_model(rng, 3, 2, 1))


def test_align_sign_examples(rng):
    F = rng.standard_normal((20, 2))
    np.testing.assert_array_equal(align_sign(F, F), np.eye(2))
    np.testing.assert_array_equal(align_sign(-F, F), -np.eye(2))
    np.testing.assert_array_equal(align_sign(F * [-1, 1], F), np.diag([-1.0, 1.0]))
    # orthogonal columns: sgn(0) = +1
    np.testing.assert_array_equal(align_sign([[1.0], [0.0]], [[0.0], [1.0]]), [[1.0]])


# ---------------------------------------------------------------- normalization

def test_normalize_rescale_example():
    m, R = normalize(FactorModel([[1.0]], [[2.0], [2.0]]))
    np.testing.assert_allclose(m.loadings, [[2.0]], atol=1e-14)
    np.testing.assert_allclose(m.factors, [[1.0], [1.0]], atol=1e-14)
    assert m.normalized
    np.testing.assert_allclose(np.array([[2.0], [2.0]]) @ R, m.factors)


def test_normalize_eigen_oracle(rng):
    raw = random_model(rng, 5, 3, 2)
    m, R = normalize(raw)
    np.testing.assert_allclose(common_component(m), common_component(raw), atol=1e-10)
    np.testing.assert_allclose(m.factors.T @ m.factors / 3, np.eye(2), atol=1e-12)
    D = m.loadings.T @ m.loadings / 5
    ev = np.sort(np.linalg.eigvalsh(D))[::-1]
    np.testing.assert_allclose(np.diag(D), ev, atol=1e-12)
    # the loadings' second moment has the same spectrum as (F'F/T)^1/2 L'L/N (F'F/T)^1/2
    G = raw.factors.T @ raw.factors / 3
    M = raw.loadings.T @ raw.loadings / 5
    np.testing.assert_allclose(ev, np.sort(np.linalg.eigvals(G @ M).real)[::-1], atol=1e-10)
    np.testing.assert_allclose(raw.factors @ R, m.factors, atol=1e-12)


def test_normalize_rank_deficient():
    with pytest.raises(DegenerateFactorsError):
        normalize(FactorModel(np.ones((3, 2)), np.ones((4, 2))))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(2, 12), T=st.integers(4, 15), r=st.integers(1, 3))
def test_normalize_invariants(seed, N, T, r):
    rng = np.random.default_rng(seed)
    raw = random_model(rng, N, T, r)
    m, _ = normalize(raw)
    err = normalization_error(m)
    assert err["ff_minus_identity"] <= 1e-10
    assert err["ll_offdiag"] <= 1e-8
    assert err["ll_diag_increase"] == 0.0
    np.testing.assert_allclose(common_component(m), common_component(raw), atol=1e-10)
    # sign convention: the largest |entry| of each factor column is positive
    idx = np.argmax(np.abs(m.factors), axis=0)
    assert np.all(m.factors[idx, np.arange(r)] > 0)
    again, _ = normalize(m)
    np.testing.assert_allclose(again.factors, m.factors, atol=1e-10)
    np.testing.assert_allclose(again.loadings, m.loadings, atol=1e-10)


def test_factor_model_validation():
    with pytest.raises(ShapeError):
        FactorModel(np.ones((3, 2)), np.ones((4, 1)))
    with pytest.raises(DataError):
        FactorModel([[np.nan]], [[1.0]])


# ---------------------------------------------------------------- panel and IO

def test_panel_validation():
    with pytest.raises(DataError):
        Panel([[1.0, np.inf]])
    with pytest.raises(ShapeError):
        Panel(np.zeros((0, 3)))
    p = Panel.from_time_major([[1, 2, 3], [4, 5, 6]], names=["a", "b", "c"])
    assert (p.n_series, p.n_periods) == (3, 2)
    np.testing.assert_array_equal(p.values[0], [1, 4])


def test_csv_round_trip(tmp_path, rng):
    p = Panel(rng.standard_normal((3, 5)) * 1e3, ("a", "b", "c"))
    path = tmp_path / "p.csv"
    write_panel_csv(p, path)
    q = read_panel_csv(path)
    np.testing.assert_array_equal(p.values, q.values)
    assert q.names == ("a", "b", "c")


@pytest.mark.parametrize("body", ["a,b\n1,\n", "a,b\n1,x\n", "a,b\n1,2,3\n", "a,b\n", "a,b\n1,nan\n"])
def test_csv_rejects_bad_files(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataError):
        read_panel_csv(path)


def test_csv_missing_file(tmp_path):
    with pytest.raises(DataError):
        read_panel_csv(tmp_path / "nope.csv")


def test_model_json_round_trip(tmp_path, rng):
    m, _ = normalize(random_model(rng, 4, 6, 2))
    save_model_json(m, tmp_path / "m.json")
    back = load_model_json(tmp_path / "m.json")
    np.testing.assert_array_equal(back.loadings, m.loadings)
    np.testing.assert_array_equal(back.factors, m.factors)
    assert back.normalized
    d = json.loads((tmp_path / "m.json").read_text())
    assert {"n_series", "n_periods", "n_factors", "loadings", "factors", "normalized"} <= set(d)
    assert d["n_factors"] == 2


# ---------------------------------------------------------------- bandwidth rules

def test_bandwidth_examples():
    assert bandwidth(100, 100, 5) == pytest.approx(2.58974, abs=1e-5)
    assert bandwidth(200, 100, 5) == pytest.approx(2.58974, abs=1e-5)
    assert bandwidth(100, 100, 1) == pytest.approx(0.51795, abs=1e-5)
    assert inference_bandwidth(100, 5) == pytest.approx(5 * 100 ** (-1 / 12))
    with pytest.raises(InvalidBandwidthError):
        bandwidth(10, 10, 0)
