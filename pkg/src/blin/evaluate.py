"""Metrics and experiment drivers for the influence-model family.

Four protocols live here: pooled and per-fold R^2 under row-deletion
K-fold cross-validation, penalized lag selection by an information
criterion over sparse paths, the convergence-rate study that regresses
log10 coefficient MSE on log10 T, and a line scan that sweeps the
segment between a true and a fitted coefficient pair.

Stream constants (external contract, keep stable): cross-validation
partitions draw from Philox seeded with SeedSequence([31, seed, horizon,
folds]); the study's fixed coefficient pair from SeedSequence([seed, 37]);
per-replication data seeds derive from SeedSequence([seed, 41, generator
index, T index, rep]).
"""

import dataclasses
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import scipy.stats

from .core import InfluencePair, LagSpec
from .estimators import (
    EstimatorConfig,
    InfluenceFit,
    _bcd_core,
    _bilinear_core,
    _exact_from_stats,
    _grams,
    _maybe_canonical,
    _r2_in,
    _reduced_rank_core,
    _series_values,
    _suffstats,
    model_mean,
    sparse_path_from_grams,
)
from .multiway import mode_lag_depths, multiway_sparse_path
from .simulate import SimulationSpec, generate_iid_regressor

_CV_STREAM = 31
_STUDY_PAIR_STREAM = 37
_STUDY_DATA_STREAM = 41
_STUDY_FAMILIES = ("blin", "bilinear")


# =========================================================================
# goodness of fit
# =========================================================================

def r_squared(y_true, y_hat):
    """1 - sum((y_hat - y_true)^2) / sum(y_true^2), the zero-model baseline.

    No intercept adjustment: predicting all zeros scores exactly 0.
    Inputs of any shape are flattened.  Errors when y_true is all zero,
    which leaves the ratio undefined.
    """
    yt = np.asarray(y_true, dtype=float).ravel()
    yh = np.asarray(y_hat, dtype=float).ravel()
    if yt.size == 0 or yt.size != yh.size:
        raise ValueError("r_squared needs two equally sized nonempty inputs")
    denom = float(yt @ yt)
    if denom <= 0.0:
        raise ValueError("r_squared is undefined when the reference values are all zero")
    diff = yh - yt
    return 1.0 - float(diff @ diff) / denom


# =========================================================================
# cross-validation
# =========================================================================

@dataclasses.dataclass(frozen=True)
class MethodCv:
    """Cross-validation outcome for one estimator configuration.

    r2_out pools squared errors over every held-out response, so it is a
    single number per method, not an average of fold scores.  lam_chosen
    records the per-fold penalty for the sparse route, None otherwise.
    """

    config: EstimatorConfig
    r2_out: float
    r2_in: float
    fold_predictions: tuple
    fold_r2: tuple
    converged: bool
    lam_chosen: tuple | None = None


@dataclasses.dataclass(frozen=True)
class CvReport:
    """Fold partition plus one MethodCv per requested configuration."""

    folds: tuple
    results: dict

    @property
    def r2_out(self):
        return {cfg: m.r2_out for cfg, m in self.results.items()}

    @property
    def r2_in(self):
        return {cfg: m.r2_in for cfg, m in self.results.items()}

    @property
    def predictions(self):
        return {cfg: m.fold_predictions for cfg, m in self.results.items()}


def cv_partition(horizon, lags, folds, seed):
    """Random partition of the usable response times {p, ..., horizon-1}.

    Deterministic in (horizon, folds, seed) for a fixed lag choice, so
    every method and every dataset of the same length sees the same fold
    assignment.  Errors when some fold would be empty.
    """
    p = lags.p
    usable = np.arange(p, horizon)
    if folds < 2:
        raise ValueError("need at least two folds")
    if usable.size < folds:
        raise ValueError(
            f"{folds} folds over {usable.size} usable slices leaves a fold with zero rows"
        )
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence([_CV_STREAM, seed, horizon, folds]))
    )
    perm = rng.permutation(usable)
    return tuple(
        tuple(int(v) for v in sorted(chunk)) for chunk in np.array_split(perm, folds)
    )


def aic_value(nnz, ssr, n_obs):
    """2 * nnz + n_obs * log(ssr); the parameter count is exact, not a norm.

    Zero residual has no log; returns -inf so interpolating fits sort
    first, and callers mark them degenerate.
    """
    if ssr <= 0.0:
        return float("-inf")
    return 2.0 * float(nnz) + float(n_obs) * float(np.log(ssr))


def _fit_rows(xs, zs, ys, cfg, lags):
    """Fit one configuration on explicit regressor stacks.

    Returns (pair, converged, lam).  The sparse route solves its full
    path and keeps the penalty minimizing the information criterion on
    the rows it was fit to.
    """
    method = cfg.method
    if method == "exact":
        pair, _, _ = _exact_from_stats(xs, zs, ys)
        return _maybe_canonical(pair, lags), True, None
    if method == "bcd":
        a, b, _, _, conv = _bcd_core(xs, zs, ys, cfg)
        return _maybe_canonical(InfluencePair(a, b), lags), conv, None
    if method == "reduced_rank":
        (u, v, rf, sf), _, _, conv = _reduced_rank_core(xs, zs, ys, cfg)
        return InfluencePair(v @ u.T, rf @ sf.T), conv, None
    if method == "bilinear":
        if lags.p_a != lags.p_b:
            raise ValueError("bilinear model requires p_a == p_b")
        a, b, _, conv, _ = _bilinear_core(xs, ys, cfg)
        return InfluencePair(a, b), conv, None
    if method == "sparse":
        g, c = _grams(xs, zs, ys)
        total = float((ys * ys).sum())
        lams = None
        if cfg.lam is not None:
            lams = np.atleast_1d(np.asarray(cfg.lam, dtype=float))
        path = sparse_path_from_grams(
            g, c, total, ys.shape[1], ys.shape[2], lams=lams, max_sweeps=cfg.max_iter * 10
        )
        n_obs = ys.size
        best = min(
            path.fits, key=lambda f: aic_value(f.nnz, f.criterion_trace[0], n_obs)
        )
        return best.pair, best.converged, best.lam
    raise ValueError(f"unsupported method {method!r}")


def kfold_cv(series, lags, configs, folds=10, seed=0):
    """Row-deletion K-fold cross-validation over response times.

    Held-out time indices are removed from estimation; their regressors
    still come from the observed series (lagged actual values), so the
    protocol deletes rows of the stacked linear model rather than
    forecasting recursively.  Every configuration sees the same partition.
    """
    configs = tuple(configs)
    if not configs:
        raise ValueError("configs must be nonempty")
    vals = _series_values(series)
    xs, zs, ys = _suffstats(vals, lags)
    fold_sets = cv_partition(vals.shape[0], lags, folds, seed)
    p = lags.p
    total_ss = float((ys * ys).sum())
    n_usable = ys.shape[0]

    results = {}
    for cfg in configs:
        if cfg in results:
            continue
        kind = "bilinear" if cfg.method == "bilinear" else "blin"
        preds = []
        fold_r2 = []
        lam_list = [] if cfg.method == "sparse" else None
        all_conv = True
        sse = 0.0
        for fold in fold_sets:
            hold = np.asarray(fold, dtype=int) - p
            keep = np.setdiff1d(np.arange(n_usable), hold)
            pair, conv, lam = _fit_rows(xs[keep], zs[keep], ys[keep], cfg, lags)
            all_conv = all_conv and conv
            pred = model_mean(pair, xs[hold], zs[hold], kind)
            preds.append(pred)
            diff = pred - ys[hold]
            sse_fold = float((diff * diff).sum())
            sse += sse_fold
            denom = float((ys[hold] ** 2).sum())
            fold_r2.append(1.0 - sse_fold / denom if denom > 0.0 else float("nan"))
            if lam_list is not None:
                lam_list.append(lam)
        pair_in, conv_in, _ = _fit_rows(xs, zs, ys, cfg, lags)
        resid_in = model_mean(pair_in, xs, zs, kind) - ys
        results[cfg] = MethodCv(
            config=cfg,
            r2_out=_r2_in(sse, total_ss),
            r2_in=_r2_in(float((resid_in * resid_in).sum()), total_ss),
            fold_predictions=tuple(preds),
            fold_r2=tuple(fold_r2),
            converged=all_conv and conv_in,
            lam_chosen=tuple(lam_list) if lam_list is not None else None,
        )
    return CvReport(folds=fold_sets, results=results)


# =========================================================================
# lag selection
# =========================================================================

@dataclasses.dataclass(frozen=True)
class LagCell:
    """One lag choice with its best-penalty fit summary.

    converged reports the whole penalty path for the cell, not only the
    winning point.
    """

    lags: tuple
    aic: float
    r2_in: float
    nnz: int
    lam: float
    degenerate: bool = False
    converged: bool = True


def aic_select(series, lag_grid, cfg=None):
    """Rank lag choices by the information criterion over sparse paths.

    Every cell drops the first max-grid-lag slices, so all criteria use
    the same response rows and stay comparable.  Within a cell the
    penalty grid is scanned and the best criterion kept; cells with an
    exactly zero residual are flagged degenerate.  Returns cells sorted
    ascending by criterion.
    """
    vals = series.values if hasattr(series, "values") else np.asarray(series, dtype=float)
    if vals.ndim < 3:
        raise ValueError("lag selection expects a (T, m_1, ..., m_K) stack with K >= 2")
    k_modes = vals.ndim - 1
    cells = []
    for entry in lag_grid:
        depths = mode_lag_depths(entry, k_modes)
        if depths not in cells:
            cells.append(depths)
    if not cells:
        raise ValueError("lag grid must be nonempty")
    start = max(max(cell) for cell in cells)
    if vals.shape[0] <= start:
        raise ValueError(f"horizon {vals.shape[0]} must exceed the largest grid lag {start}")
    n_cell = int(np.prod(vals.shape[1:]))
    n_obs = (vals.shape[0] - start) * n_cell
    cfg = cfg or EstimatorConfig(method="sparse")

    table = []
    for cell in cells:
        fits = multiway_sparse_path(vals, cell, cfg, start=start)
        best_aic, best_fit = float("inf"), None
        for f in fits:
            aic = aic_value(f.nnz, f.criterion_trace[0], n_obs)
            if best_fit is None or aic < best_aic:
                best_aic, best_fit = aic, f
        table.append(
            LagCell(
                lags=cell,
                aic=best_aic,
                r2_in=best_fit.r2_in,
                nnz=best_fit.nnz,
                lam=best_fit.lam,
                degenerate=not np.isfinite(best_aic),
                converged=all(f.converged for f in fits),
            )
        )
    table.sort(key=lambda c: (c.aic, c.lags))
    return tuple(table)


# =========================================================================
# regression-mode fitting
# =========================================================================

def regression_fit(xs, ys, method="blin", cfg=None):
    """Fit on explicit iid regressor/response stacks with X_t = Z_t.

    Serves protocols whose regressors are drawn directly rather than
    accumulated from lagged responses.  The additive fit is the exact
    minimum-norm solution; the multiplicative fit runs restarted
    alternating least squares.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 3 or xs.shape != ys.shape:
        raise ValueError("regression_fit expects matching (T, S, L) stacks")
    if method == "blin":
        pair, ssr, total = _exact_from_stats(xs, xs, ys)
        return InfluenceFit(
            pair=pair,
            criterion_trace=(ssr,),
            converged=True,
            r2_in=_r2_in(ssr, total),
            method="exact",
        )
    if method == "bilinear":
        cfg = cfg or EstimatorConfig(method="bilinear")
        a, b, trace, conv, restart_criteria = _bilinear_core(xs, ys, cfg)
        return InfluenceFit(
            pair=InfluencePair(a, b),
            iterations=len(trace) - 1,
            criterion_trace=trace,
            converged=conv,
            r2_in=_r2_in(trace[-1], trace[0]),
            method="bilinear",
            restart_criteria=restart_criteria,
        )
    raise ValueError(f"method must be one of {_STUDY_FAMILIES}")


# =========================================================================
# convergence-rate study
# =========================================================================

@dataclasses.dataclass(frozen=True)
class StudyCell:
    """Per-replication MSEs for one (T, generator, estimator) cell."""

    t: int
    generator: str
    method: str
    mse_a: tuple
    mse_b: tuple
    mse_diag: tuple
    converged: tuple

    @property
    def dropped(self):
        return sum(1 for c in self.converged if not c)


@dataclasses.dataclass(frozen=True)
class StudySlope:
    """Fitted slope of log10 MSE against log10 T with its standard error."""

    generator: str
    method: str
    target: str
    slope: float
    stderr: float
    n_points: int


@dataclasses.dataclass(frozen=True)
class StudyResult:
    """All cells of the convergence study plus the fitted slopes."""

    dims: tuple
    t_grid: tuple
    reps: int
    generators: tuple
    methods: tuple
    seed: int
    cells: tuple
    slopes: tuple

    def cell(self, t, generator, method):
        for c in self.cells:
            if (c.t, c.generator, c.method) == (t, generator, method):
                return c
        raise KeyError((t, generator, method))

    def slope(self, generator, method, target):
        for s in self.slopes:
            if (s.generator, s.method, s.target) == (generator, method, target):
                return s
        raise KeyError((generator, method, target))

    @property
    def dropped(self):
        return sum(c.dropped for c in self.cells)

    def iter_rows(self):
        """One dict per cell-replication, ready for CSV emission."""
        for c in self.cells:
            for rep in range(len(c.mse_a)):
                yield {
                    "t": c.t,
                    "generator": c.generator,
                    "method": c.method,
                    "rep": rep,
                    "mse_a": c.mse_a[rep],
                    "mse_b": c.mse_b[rep],
                    "mse_diag": c.mse_diag[rep],
                    "converged": c.converged[rep],
                }


def study_pair(dims, seed):
    """The fixed full-rank coefficient pair shared by every study cell.

    A^T = U V^T and B = R W^T with iid standard-normal factors; the
    products are full rank with probability one, yet share the factored
    texture of the reduced-rank model.
    """
    s, l = int(dims[0]), int(dims[1])
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, _STUDY_PAIR_STREAM]))
    )
    u = rng.normal(size=(s, s))
    v = rng.normal(size=(s, s))
    r = rng.normal(size=(l, l))
    w = rng.normal(size=(l, l))
    return InfluencePair(v @ u.T, r @ w.T)


def _offdiag_norm_mse(est, true):
    """Mean squared gap between sum-normalized off-diagonals.

    Scale-free on purpose: any estimate c * truth (c != 0) scores zero.
    An estimate whose off-diagonals sum to zero has no normalization and
    scores infinity.
    """
    mask = ~np.eye(est.shape[0], dtype=bool)
    e = est[mask]
    t = true[mask]
    es, ts = e.sum(), t.sum()
    if es == 0.0 or ts == 0.0:
        return float("inf")
    d = e / es - t / ts
    return float(np.mean(d * d))


def _diag_mse(est_pair, true_pair, method, generator):
    """Mean squared diagonal-effect gap under the cross-model contract.

    Each family owns a cell-effect form, additive a_ii + b_jj or
    multiplicative a_ii * b_jj; the estimate uses its own form and the
    truth uses the generator's.
    """
    ae, be = np.diag(est_pair.a), np.diag(est_pair.b)
    at, bt = np.diag(true_pair.a), np.diag(true_pair.b)
    est_eff = np.add.outer(ae, be) if method == "blin" else np.multiply.outer(ae, be)
    true_eff = np.add.outer(at, bt) if generator == "blin" else np.multiply.outer(at, bt)
    d = est_eff - true_eff
    return float(np.mean(d * d))


def _study_rep(args):
    """One replication: draw, fit every estimator, return MSE rows."""
    dims, t, generator, methods, pair_a, pair_b, rep_seed, restarts, max_iter = args
    pair = InfluencePair(pair_a, pair_b)
    spec = SimulationSpec(
        s=dims[0], l=dims[1], horizon=t, generator=generator, seed=rep_seed
    )
    xs, ys = generate_iid_regressor(spec, pair)
    rows = []
    for method in methods:
        cfg = None
        if method == "bilinear":
            cfg = EstimatorConfig(
                method="bilinear", restarts=restarts, max_iter=max_iter, seed=rep_seed
            )
        fit = regression_fit(xs, ys, method, cfg)
        rows.append(
            (
                t,
                generator,
                method,
                _offdiag_norm_mse(fit.pair.a, pair.a),
                _offdiag_norm_mse(fit.pair.b, pair.b),
                _diag_mse(fit.pair, pair, method, generator),
                bool(fit.converged),
            )
        )
    return rows


def _fit_slopes(cells, generators, methods):
    slopes = []
    by_key = {}
    for c in cells:
        by_key.setdefault((c.generator, c.method), []).append(c)
    for generator in generators:
        for method in methods:
            group = by_key.get((generator, method), [])
            for target, field in (("a", "mse_a"), ("b", "mse_b"), ("diag", "mse_diag")):
                pts_x, pts_y = [], []
                for c in group:
                    for rep, ok in enumerate(c.converged):
                        mse = getattr(c, field)[rep]
                        if ok and np.isfinite(mse) and mse > 0.0:
                            pts_x.append(np.log10(c.t))
                            pts_y.append(np.log10(mse))
                if len(pts_x) >= 3 and len(set(pts_x)) >= 2:
                    res = scipy.stats.linregress(pts_x, pts_y)
                    slopes.append(
                        StudySlope(
                            generator, method, target,
                            float(res.slope), float(res.stderr), len(pts_x),
                        )
                    )
                else:
                    slopes.append(
                        StudySlope(generator, method, target,
                                   float("nan"), float("nan"), len(pts_x))
                    )
    return tuple(slopes)


def convergence_study(
    t_grid=(100, 316, 1000, 3162),
    dims=(10, 9),
    reps=50,
    generators=_STUDY_FAMILIES,
    methods=_STUDY_FAMILIES,
    seed=0,
    jobs=None,
    restarts=3,
    max_iter=300,
):
    """Coefficient-recovery MSE against sample size, per generator and fit.

    Regressors are iid draws (the regression protocol, not the recursion),
    the coefficient pair is fixed across all cells, and each replication
    is pure given its derived seed, so cells fan out to a process pool
    when jobs > 1.  Non-convergent fits are excluded from the slope
    regressions but kept in the cells, flagged.
    """
    t_grid = tuple(int(t) for t in t_grid)
    if not t_grid or any(t < 1 for t in t_grid):
        raise ValueError("t_grid must be nonempty positive integers")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 2:
        raise ValueError("dims must be (S, L)")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    generators = tuple(generators)
    methods = tuple(methods)
    for name in generators + methods:
        if name not in _STUDY_FAMILIES:
            raise ValueError(f"unknown family {name!r}")
    pair = study_pair(dims, seed)

    tasks = []
    for gi, generator in enumerate(generators):
        for ti, t in enumerate(t_grid):
            for rep in range(reps):
                rep_seed = int(
                    np.random.SeedSequence(
                        [seed, _STUDY_DATA_STREAM, gi, ti, rep]
                    ).generate_state(1)[0]
                )
                tasks.append(
                    (dims, t, generator, methods, pair.a, pair.b,
                     rep_seed, restarts, max_iter)
                )

    if jobs is not None and jobs > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            all_rows = list(pool.map(_study_rep, tasks, chunksize=4))
    else:
        all_rows = [_study_rep(task) for task in tasks]

    acc = {}
    for rows in all_rows:
        for t, generator, method, ma, mb, md, conv in rows:
            acc.setdefault((t, generator, method), []).append((ma, mb, md, conv))
    cells = []
    for generator in generators:
        for t in t_grid:
            for method in methods:
                entries = acc[(t, generator, method)]
                cells.append(
                    StudyCell(
                        t=t,
                        generator=generator,
                        method=method,
                        mse_a=tuple(e[0] for e in entries),
                        mse_b=tuple(e[1] for e in entries),
                        mse_diag=tuple(e[2] for e in entries),
                        converged=tuple(e[3] for e in entries),
                    )
                )
    cells = tuple(cells)
    return StudyResult(
        dims=dims,
        t_grid=t_grid,
        reps=int(reps),
        generators=generators,
        methods=methods,
        seed=int(seed),
        cells=cells,
        slopes=_fit_slopes(cells, generators, methods),
    )


# =========================================================================
# coefficient line scan
# =========================================================================

@dataclasses.dataclass(frozen=True)
class ScanPoint:
    """R^2 of the mixed coefficients at one point on the segment."""

    xi: float
    r2_in: float
    r2_out: float


def likelihood_line_scan(
    series_train, series_test, true_pair, fitted_pair,
    xi_grid=None, model="blin", lags=None,
):
    """Sweep the segment (1 - xi) * truth + xi * fit in coefficient space.

    Reports in-sample R^2 on the training series and out-of-sample R^2 on
    the test series at each xi.  For the additive model the in-sample
    curve is an exact quadratic in xi; any interior dip under the
    multiplicative model is evidence of multiple criterion modes.
    """
    if model not in _STUDY_FAMILIES:
        raise ValueError(f"model must be one of {_STUDY_FAMILIES}")
    lags = lags if lags is not None else LagSpec(1, 1)
    if (
        true_pair.a.shape != fitted_pair.a.shape
        or true_pair.b.shape != fitted_pair.b.shape
    ):
        raise ValueError("true and fitted pairs must share shapes")
    grid = np.linspace(0.0, 1.0, 21) if xi_grid is None else np.asarray(xi_grid, dtype=float)
    xs, zs, ys = _suffstats(_series_values(series_train), lags)
    xt, zt, yt = _suffstats(_series_values(series_test), lags)
    points = []
    for xi in grid:
        mix = InfluencePair(
            (1.0 - xi) * true_pair.a + xi * fitted_pair.a,
            (1.0 - xi) * true_pair.b + xi * fitted_pair.b,
        )
        points.append(
            ScanPoint(
                xi=float(xi),
                r2_in=r_squared(ys, model_mean(mix, xs, zs, model)),
                r2_out=r_squared(yt, model_mean(mix, xt, zt, model)),
            )
        )
    return tuple(points)
