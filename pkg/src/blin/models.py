"""Estimator-object wrapper around the functional fitting routines.

BLINRegressor follows the scikit-learn conventions: constructor arguments
are stored verbatim, fitting state lands in trailing-underscore
attributes, and get_params/set_params/clone work unchanged.  The series
itself plays the role of X; the response is its own future, so y is
accepted and ignored throughout.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_lags, check_rank, check_series_array
from .estimators import (
    _METHODS,
    EstimatorConfig,
    fit_bilinear,
    fit_blin_bcd,
    fit_blin_exact,
    fit_blin_reduced_rank,
    fit_blin_sparse,
    fitted_values,
    predict_one_step,
)
from .evaluate import aic_value, r_squared


class BLINRegressor(BaseEstimator):
    """One-step-ahead network autoregression with additive sender and
    receiver influence.

    Parameters mirror EstimatorConfig: method picks the solver ("exact",
    "bcd", "sparse", "reduced_rank", "bilinear"), lags the per-side lag
    depths (an int applies to both sides), lam the l1 penalty for the
    sparse route (None lets the information criterion choose from the
    default path), rank the factor sizes for the reduced-rank route.
    """

    def __init__(self, method="exact", lags=1, eta=None, max_iter=500,
                 lam=None, rank=None, restarts=10, seed=0):
        self.method = method
        self.lags = lags
        self.eta = eta
        self.max_iter = max_iter
        self.lam = lam
        self.rank = rank
        self.restarts = restarts
        self.seed = seed

    def _config(self):
        rank_a, rank_b = check_rank(self.rank)
        return EstimatorConfig(
            method=self.method, eta=self.eta, max_iter=self.max_iter,
            lam=self.lam, rank_a=rank_a, rank_b=rank_b,
            restarts=self.restarts, seed=self.seed,
        )

    def fit(self, X, y=None):
        """Estimate the influence pair from the series X of shape (T, S, L)."""
        lags = check_lags(self.lags)
        vals = check_series_array(X, min_horizon=lags.p + 1)
        cfg = self._config()
        if cfg.method == "exact":
            fit = fit_blin_exact(vals, lags)
        elif cfg.method == "bcd":
            fit = fit_blin_bcd(vals, lags, cfg)
        elif cfg.method == "sparse":
            path = fit_blin_sparse(vals, lags, cfg)
            n_obs = (vals.shape[0] - lags.p) * vals.shape[1] * vals.shape[2]
            fit = min(
                path.fits,
                key=lambda f: aic_value(f.nnz, f.criterion_trace[0], n_obs),
            )
        elif cfg.method == "reduced_rank":
            if cfg.rank_a is None:
                raise ValueError("reduced_rank needs rank=(rank_a, rank_b)")
            fit = fit_blin_reduced_rank(vals, lags, cfg)
        elif cfg.method == "bilinear":
            fit = fit_bilinear(vals, lags, cfg)
        else:
            raise ValueError(f"method must be one of {_METHODS}")
        self.fit_ = fit
        self.lags_ = lags
        self.a_ = fit.pair.a
        self.b_ = fit.pair.b
        self.diag_effect_ = fit.pair.diag_effect
        self.r2_in_ = fit.r2_in
        self.converged_ = fit.converged
        self.n_iter_ = fit.iterations
        self.lam_ = fit.lam
        self.nnz_ = fit.nnz
        return self

    def predict(self, X):
        """One-step-ahead means for every usable slice of X: (T - p, S, L)."""
        check_is_fitted(self)
        vals = check_series_array(X, min_horizon=self.lags_.p + 1)
        return fitted_values(self.fit_, vals, self.lags_)

    def predict_next(self, X):
        """Mean of the first unobserved slice, from the last lags of X."""
        check_is_fitted(self)
        vals = check_series_array(X, min_horizon=self.lags_.p)
        return predict_one_step(self.fit_, vals, self.lags_)

    def score(self, X, y=None):
        """R^2 of one-step predictions against the usable slices of X."""
        check_is_fitted(self)
        vals = check_series_array(X, min_horizon=self.lags_.p + 1)
        return r_squared(vals[self.lags_.p:], self.predict(vals))
