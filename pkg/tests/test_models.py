"""Estimator-object wrapper: sklearn conventions over the functional fits."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from blin import (
    BLINRegressor,
    EstimatorConfig,
    InfluencePair,
    LagSpec,
    SimulationSpec,
    calibrate_snr,
    fit_blin_sparse,
    generate,
    make_influence_pair,
)
from blin.evaluate import aic_value


@pytest.fixture(scope="module")
def series():
    spec = SimulationSpec(s=6, l=5, horizon=70, generator="blin", q_sparsity=0.5, seed=14)
    base = make_influence_pair(spec.s, spec.l, spec.q_sparsity, spec.seed)
    scale, _ = calibrate_snr(spec, base)
    return generate(spec, InfluencePair(scale * base.a, scale * base.b))


def test_fit_predict_score_roundtrip(series):
    est = BLINRegressor().fit(series)
    preds = est.predict(series)
    assert preds.shape == (69, 6, 5)
    assert est.score(series) == pytest.approx(est.r2_in_, abs=1e-10)
    assert est.converged_
    assert est.a_.shape == (6, 6) and est.b_.shape == (5, 5)
    assert est.diag_effect_.shape == (6, 5)


def test_params_clone_and_repr(series):
    est = BLINRegressor(method="bcd", lags=(2, 1), max_iter=120, seed=5)
    params = est.get_params()
    assert params["method"] == "bcd"
    assert params["lags"] == (2, 1)
    copy = clone(est)
    assert copy.get_params() == params
    est.fit(series)
    # cloning discards the fitted state but keeps the recipe
    assert not hasattr(clone(est), "fit_")
    est.set_params(max_iter=300)
    assert est.get_params()["max_iter"] == 300
    assert "BLINRegressor" in repr(est)


def test_unfitted_raises(series):
    est = BLINRegressor()
    with pytest.raises(NotFittedError):
        est.predict(series)
    with pytest.raises(NotFittedError):
        est.score(series)


def test_lag_spellings_agree(series):
    by_int = BLINRegressor(lags=2).fit(series)
    by_pair = BLINRegressor(lags=(2, 2)).fit(series)
    by_spec = BLINRegressor(lags=LagSpec(2, 2)).fit(series)
    np.testing.assert_array_equal(by_int.a_, by_pair.a_)
    np.testing.assert_array_equal(by_int.a_, by_spec.a_)


def test_sparse_criterion_pick_matches_manual(series):
    est = BLINRegressor(method="sparse").fit(series)
    path = fit_blin_sparse(series, LagSpec(1, 1), EstimatorConfig(method="sparse"))
    n_obs = 69 * 6 * 5
    manual = min(path.fits, key=lambda f: aic_value(f.nnz, f.criterion_trace[0], n_obs))
    assert est.lam_ == manual.lam
    assert est.nnz_ == manual.nnz
    np.testing.assert_array_equal(est.a_, manual.pair.a)


def test_sparse_scalar_lam_pins_penalty(series):
    est = BLINRegressor(method="sparse", lam=3.5).fit(series)
    assert est.lam_ == pytest.approx(3.5)
    assert est.nnz_ >= 0


def test_reduced_rank_int_shorthand(series):
    est = BLINRegressor(method="reduced_rank", rank=2).fit(series)
    assert np.linalg.matrix_rank(est.a_) <= 2
    assert np.linalg.matrix_rank(est.b_) <= 2
    with pytest.raises(ValueError, match="rank"):
        BLINRegressor(method="reduced_rank").fit(series)


def test_bilinear_route(series):
    est = BLINRegressor(method="bilinear", restarts=2, max_iter=100).fit(series)
    assert est.predict(series).shape == (69, 6, 5)
    assert np.isfinite(est.score(series))


def test_predict_next_is_lagged_mean(series):
    est = BLINRegressor().fit(series)
    nxt = est.predict_next(series)
    vals = series.values
    want = est.a_.T @ vals[-1] + vals[-1] @ est.b_
    np.testing.assert_allclose(nxt, want, atol=1e-12)


def test_input_validation(series):
    with pytest.raises(ValueError, match="method must be one of"):
        BLINRegressor(method="ols").fit(series)
    with pytest.raises(ValueError, match="shape"):
        BLINRegressor().fit(np.zeros((10, 4)))
    with pytest.raises(ValueError, match="non-finite"):
        bad = np.array(series.values)
        bad[3, 0, 0] = np.nan
        BLINRegressor().fit(bad)
    with pytest.raises(ValueError, match="time slices"):
        BLINRegressor(lags=3).fit(series.values[:3])
    with pytest.raises(ValueError, match="lags"):
        BLINRegressor(lags="two").fit(series)
