
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import factor_panel
from oracles import kh, mem_reference, rank1_grid_max, series_grid_max, sweep_reference
from modalfactor import (
    ConfigError,
    DegeneracyWarning,
    EstimationConfig,
    FactorModel,
    FitResult,
    Panel,
    bandwidth,
    fit,
    mem_solve,
    normalization_error,
    objective,
    pca_fit,
    sweep,
    trace_ratio,
)
from modalfactor.amem import estep_weights, mstep_wls, series_objective


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kw", [
    {"n_factors": 0}, {"bandwidth_constant": 0}, {"outer_epsilon": 0}, {"inner_tol": -1},
    {"outer_max_sweeps": 0}, {"inner_max_iters": 0}, {"n_starts": 0}, {"seed": -1},
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        EstimationConfig(**kw)


def test_config_defaults():
    c = EstimationConfig()
    assert (c.bandwidth_constant, c.outer_epsilon, c.outer_max_sweeps) == (5.0, 1e-6, 200)
    assert (c.inner_tol, c.inner_max_iters, c.n_starts) == (1e-8, 50, 2)
    assert c.with_factors(4).n_factors == 4


# ---------------------------------------------------------------- E and M steps

def test_estep_examples():
    np.testing.assert_allclose(estep_weights([0, 0], 0.3), [0.5, 0.5])
    np.testing.assert_allclose(estep_weights([0, 0, 0], 2.0), [1 / 3] * 3)
    w = estep_weights([0, 10], 1.0)
    ratio = kh(10, 1) / kh(0, 1)
    assert w[1] == pytest.approx(ratio / (1 + ratio), rel=1e-10)
    assert w[1] == pytest.approx(1.93e-22, rel=1e-2)
    assert w[0] == pytest.approx(1.0)


def test_estep_survives_extreme_residuals():
    # raw kernel values all underflow here; shifted weights still resolve the nearest point
    w = estep_weights([100.0, 101.0, 150.0], 0.1)
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)
    assert w[0] == pytest.approx(1.0)


def test_estep_rejects_nonfinite():
    with pytest.raises(Exception):
        estep_weights([0.0, np.nan], 1.0)


def test_mstep_examples():
    assert mstep_wls([1, 3], [[1], [1]], [0.5, 0.5])[0] == pytest.approx(2.0)
    assert mstep_wls([1, 3], [[1], [1]], [1.0, 0.0])[0] == pytest.approx(1.0)
    np.testing.assert_allclose(mstep_wls([2.5, -7.0], np.eye(2), [0.5, 0.5]), [2.5, -7.0])


def test_mstep_orthogonality_and_scale(rng):
    F = rng.standard_normal((30, 3))
    x = rng.standard_normal(30)
    w = rng.random(30)
    w /= w.sum()
    lam = mstep_wls(x, F, w)
    assert np.max(np.abs(F.T @ (w * (x - F @ lam)))) < 1e-8
    np.testing.assert_allclose(mstep_wls(3.5 * x, F, w), 3.5 * lam, rtol=1e-12)


def test_mstep_singular_design_warns():
    F = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    with pytest.warns(DegeneracyWarning):
        lam = mstep_wls([1.0, 1.0, 1.0], F, [1 / 3] * 3)
    assert np.all(np.isfinite(lam))
    np.testing.assert_allclose(F @ lam, [1.0, 1.0, 1.0], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3))
def test_mstep_scale_equivariance(seed, k):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((12, 2))
    x = rng.standard_normal(12)
    w = estep_weights(rng.standard_normal(12), 1.0)
    np.testing.assert_allclose(mstep_wls(k * x, F, w), k * mstep_wls(x, F, w), rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------- modal EM

def test_mem_noiseless_recovers_exactly(rng):
    F = rng.standard_normal((20, 2))
    lam = np.array([1.5, -0.5])
    out = mem_solve(F @ lam, F, np.zeros(2), 1.0, EstimationConfig())
    np.testing.assert_allclose(out, lam, atol=1e-12)


def test_mem_contaminated_series_matches_grid():
    F = np.array([[1.0], [2.0], [3.0]])
    x = np.array([1.0, 2.0, 30.0])  # two points on slope 1, one gross outlier
    h = 0.5
    cfg = EstimationConfig()
    ols = float(np.linalg.lstsq(F, x, rcond=None)[0][0])
    out = mem_solve(x, F, [1.2], h, cfg)[0]
    oracle = series_grid_max(x, F, h, -5, 15)
    assert abs(out - oracle) < 1e-3
    assert abs(out - 1.0) < 0.05 and abs(ols - 1.0) > 5


def test_mem_fixed_point(rng):
    F = rng.standard_normal((15, 1))
    x = F[:, 0] * 0.7 + 0.3 * rng.standard_normal(15)
    cfg = EstimationConfig()
    opt = mem_solve(x, F, [0.0], 0.8, cfg)
    again = mem_solve(x, F, opt, 0.8, cfg)
    assert abs(series_objective(x, F, again, 0.8) - series_objective(x, F, opt, 0.8)) < cfg.inner_tol
    np.testing.assert_allclose(again, opt, atol=1e-4)


def test_mem_matches_scalar_reference(rng):
    F = rng.standard_normal((25, 2))
    x = F @ [1.0, -2.0] + rng.standard_t(2, 25)
    ref = mem_reference(x, F, np.zeros(2), 1.1, 1e-8, 50)
    out = mem_solve(x, F, np.zeros(2), 1.1, EstimationConfig())
    np.testing.assert_allclose(out, ref, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.floats(0.2, 5))
def test_mem_never_decreases_series_objective(seed, h):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((10, 2))
    x = rng.standard_cauchy(10)
    lam0 = rng.standard_normal(2)
    out = mem_solve(x, F, lam0, h, EstimationConfig())
    assert series_objective(x, F, out, h) >= series_objective(x, F, lam0, h) - 1e-12


# ---------------------------------------------------------------- sweeps

def test_sweep_matches_hand_stepped_trace():
    X = np.array([[1.0, -0.5, 2.0], [0.3, 1.2, -1.0]])
    L = np.array([[0.5], [-1.0]])
    F = np.array([[1.0], [0.5], [-0.7]])
    cfg = EstimationConfig()
    out = sweep(Panel(X), FactorModel(L, F), 0.9, cfg)
    Lr, Fr = sweep_reference(X, L, F, 0.9, cfg.inner_tol, cfg.inner_max_iters)
    np.testing.assert_allclose(out.loadings, Lr, atol=1e-10)
    np.testing.assert_allclose(out.factors, Fr, atol=1e-10)


def test_sweep_at_truth_is_stationary(rng):
    panel, L, F = factor_panel(rng, 8, 10, 2)
    out = sweep(panel, FactorModel(L, F), 1.0, EstimationConfig())
    np.testing.assert_allclose(out.loadings, L, atol=1e-8)
    np.testing.assert_allclose(out.factors, F, atol=1e-8)


def test_sweep_ascends_on_random_panels():
    cfg = EstimationConfig()
    for k in range(50):
        rng = np.random.default_rng([11, k])
        X = rng.standard_t(3, (7, 9))
        m = FactorModel(rng.standard_normal((7, 2)), rng.standard_normal((9, 2)))
        h = 0.3 + 2 * rng.random()
        before = objective(Panel(X), m, h)
        after = objective(Panel(X), sweep(Panel(X), m, h, cfg), h)
        assert after >= before - 1e-12


# ---------------------------------------------------------------- fit

def test_fit_noiseless_exact_recovery(rng):
    panel, L, F = factor_panel(rng, 40, 30, 2)
    res = fit(panel, EstimationConfig(n_factors=2))
    assert trace_ratio(res.model.factors, F) >= 0.999
    assert trace_ratio(pca_fit(panel, 2).factors, F) >= 0.999


def test_fit_result_contract(rng):
    panel, _, _ = factor_panel(rng, 30, 25, 2, noise=1.0, df=3)
    cfg = EstimationConfig(n_factors=2, seed=3)
    res = fit(panel, cfg)
    h = bandwidth(30, 25, 5.0)
    assert res.bandwidth == pytest.approx(h)
    assert abs(res.objective_value - objective(panel, res.model, h)) <= 1e-12
    assert np.all(np.diff(res.history) >= -1e-12)
    assert res.converged == (abs(res.history[-1] - res.history[-2]) < cfg.outer_epsilon)
    assert res.n_sweeps == len(res.history) - 1
    assert res.start_objectives[res.start_index] == max(res.start_objectives)
    assert res.start_index == res.start_objectives.index(max(res.start_objectives))
    err = normalization_error(res.model)
    assert err["ff_minus_identity"] <= 1e-10 and err["ll_offdiag"] <= 1e-8
    assert err["ll_diag_increase"] == 0 and res.normalization_drift <= 1e-10


def test_fit_is_deterministic(rng):
    panel, _, _ = factor_panel(rng, 20, 20, 2, noise=1.0, df=2)
    a = fit(panel, EstimationConfig(n_factors=2, seed=9))
    b = fit(panel, EstimationConfig(n_factors=2, seed=9))
    assert a.to_dict() == b.to_dict()
    c = fit(panel, EstimationConfig(n_factors=2, seed=10))
    assert c.start_objectives != a.start_objectives


def test_fit_result_round_trip(rng):
    panel, _, _ = factor_panel(rng, 10, 12, 1, noise=0.5)
    res = fit(panel, EstimationConfig())
    back = FitResult.from_dict(res.to_dict())
    np.testing.assert_array_equal(back.model.factors, res.model.factors)
    assert back.objective_value == res.objective_value and back.history == res.history


def test_fit_rejects_bad_rank():
    panel = Panel(np.arange(35.0).reshape(5, 7) ** 1.5)
    with pytest.raises(ConfigError):
        fit(panel, EstimationConfig(n_factors=6))
    with pytest.raises(ConfigError):
        EstimationConfig(n_factors=0)


def test_fit_nonconvergence_returns_best_so_far(rng):
    panel, _, _ = factor_panel(rng, 20, 20, 2, noise=1.0, df=3)
    res = fit(panel, EstimationConfig(n_factors=2, outer_max_sweeps=1, outer_epsilon=1e-15))
    assert not res.converged and res.n_sweeps == 1
    assert res.history[1] >= res.history[0]


def test_fit_tiny_panel_matches_grid_oracle():
    rng = np.random.default_rng(3)
    X = 2 * rng.standard_normal((3, 4))
    res = fit(Panel(X), EstimationConfig(n_factors=1))
    assert res.objective_value >= rank1_grid_max(X, bandwidth(3, 4, 5.0)) - 1e-3


def test_gaussian_errors_agree_with_pca():
    rng = np.random.default_rng(5)
    panel, _, _ = factor_panel(rng, 100, 100, 3, noise=1.0)
    res = fit(panel, EstimationConfig(n_factors=3))
    assert trace_ratio(res.model.factors, pca_fit(panel, 3).factors) >= 0.95


def test_fit_logs_sweeps(rng, caplog):
    panel, _, _ = factor_panel(rng, 10, 10, 1, noise=1.0)
    with caplog.at_level("DEBUG", logger="modalfactor.amem"):
        fit(panel, EstimationConfig(n_starts=1))
    lines = [r.getMessage() for r in caplog.records]
    assert lines and all("sweep=" in s and "obj=" in s for s in lines)
    assert float(lines[-1].split("obj=")[1]) > 0


def test_fit_beyond_data_rank_still_normalizes():
    rng = np.random.default_rng(1)
    panel, _, F = factor_panel(rng, 30, 30, 2)
    res = fit(panel, EstimationConfig(n_factors=4))
    assert "rank_deficient_factors" in res.flags
    err = normalization_error(res.model)
    assert err["ff_minus_identity"] <= 1e-10 and err["ll_offdiag"] <= 1e-8
    assert err["ll_diag_increase"] <= 1e-12
    assert res.normalization_drift <= 1e-10
    assert trace_ratio(res.model.factors[:, :2], F) >= 0.999
