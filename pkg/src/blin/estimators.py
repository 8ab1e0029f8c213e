"""Estimators for the bipartite influence model and the bilinear baseline.

Five fitting routes share one data contract (series + lag spec):

  fit_blin_exact        minimum-norm least squares on the stacked design
  fit_blin_bcd          block coordinate descent, never forms the design
  fit_blin_sparse       l1-penalized path by coordinate descent
  fit_blin_reduced_rank factored A = (U V^T)^T, B = Rf Sf^T block descent
  fit_bilinear          alternating least squares for Y = A^T X B + E

plus design_rank_check for the uniqueness diagnostic.  All functions are
pure; fits on the same inputs and config are bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import scipy.linalg

from ._cd import solve_path
from .core import (
    DESIGN_BUDGET,
    InfluencePair,
    blin_mean,
    build_design,
    canonicalize,
    lag_sum,
    lag_sums,
    unpack_pair,
)

_METHODS = ("exact", "bcd", "sparse", "reduced_rank", "bilinear")


# =========================================================================
# configuration and results
# =========================================================================

@dataclasses.dataclass(frozen=True)
class EstimatorConfig:
    """Knobs shared across the fitting routes.

    eta is the absolute stopping threshold on successive criterion values;
    None means relative, 1e-8 times the initial criterion.  lam is the l1
    penalty for the sparse route: a scalar, an explicit grid, or None for
    the default 50-point descending path.  rank_a/rank_b bound the factor
    ranks; restarts counts bilinear initializations (one identity plus
    restarts-1 random).
    """

    method: str = "exact"
    eta: float | None = None
    max_iter: int = 500
    lam: float | tuple | None = None
    rank_a: int | None = None
    rank_b: int | None = None
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.lam is not None:
            lam = self.lam
            if np.isscalar(lam):
                if lam < 0:
                    raise ValueError("lam must be nonnegative")
            else:
                lam = tuple(float(v) for v in lam)
                if len(lam) == 0 or any(v < 0 for v in lam):
                    raise ValueError("lam grid must be nonempty and nonnegative")
                object.__setattr__(self, "lam", lam)


@dataclasses.dataclass(frozen=True)
class InfluenceFit:
    """One fitted model with its convergence diagnostics.

    criterion_trace[0] is the zero-model reference sum ||Y_t||_F^2 that
    seeds the stopping rule; entries from index 1 on are the criteria of
    successive iterates, and that portion is non-increasing for the
    iterative methods (each block update solves its subproblem exactly).
    """

    pair: InfluencePair
    c_mat: np.ndarray | None = None
    iterations: int = 0
    criterion_trace: tuple = ()
    converged: bool = True
    r2_in: float = float("nan")
    method: str = "exact"
    factors: tuple | None = None
    design_rank: int | None = None
    lam: float | None = None
    nnz: int | None = None
    restart_criteria: tuple | None = None


@dataclasses.dataclass(frozen=True)
class SparsePath:
    """Descending-penalty solution path; fits[i] solved at lambdas[i]."""

    lambdas: tuple
    fits: tuple

    def __post_init__(self):
        if len(self.lambdas) != len(self.fits):
            raise ValueError("one fit per lambda required")

    def best_in_sample(self):
        r2s = [f.r2_in for f in self.fits]
        return self.fits[int(np.nanargmax(r2s))]


@dataclasses.dataclass(frozen=True)
class RankReport:
    """Numerical rank of the stacked design and the uniqueness verdict.

    gap is sigma_rank / sigma_{rank+1} (inf when there is no next singular
    value); checked is False when the design exceeded the element budget,
    in which case rank and is_unique are None.
    """

    rank: int | None
    is_unique: bool | None
    gap: float
    n_rows: int
    n_cols: int
    checked: bool = True

    def __iter__(self):
        yield self.rank
        yield self.is_unique


# =========================================================================
# shared pieces
# =========================================================================

def _series_values(series):
    vals = series.values if hasattr(series, "values") else np.asarray(series, dtype=float)
    if vals.ndim != 3:
        raise ValueError("estimators expect a two-mode (T, S, L) series")
    return vals


def _suffstats(vals, lags):
    p = lags.p
    if vals.shape[0] <= p:
        raise ValueError(f"horizon {vals.shape[0]} must exceed the largest lag {p}")
    xs = lag_sums(vals, lags.p_a, start=p)
    zs = lag_sums(vals, lags.p_b, start=p)
    return xs, zs, vals[p:]


def _grams(xs, zs, ys):
    """Normal-equation blocks for theta = [vec(A^T); vec(B)]."""
    s, l = xs.shape[1], xs.shape[2]
    sxx = np.einsum("til,tkl->ik", xs, xs)
    szz = np.einsum("tsl,tsm->lm", zs, zs)
    cross = np.einsum("til,tkm->iklm", xs, zs).reshape(s * s, l * l)
    n = s * s + l * l
    g = np.empty((n, n))
    g[: s * s, : s * s] = np.kron(sxx, np.eye(s))
    g[s * s:, s * s:] = np.kron(np.eye(l), szz)
    g[: s * s, s * s:] = cross
    g[s * s:, : s * s] = cross.T
    cyx = np.einsum("tsl,til->si", ys, xs)  # sum Y_t X_t'
    czy = np.einsum("tsl,tsm->lm", zs, ys)  # sum Z_t' Y_t
    c = np.concatenate([cyx.ravel(order="F"), czy.ravel(order="F")])
    return g, c


def _gram_solver(gram, what):
    """Factor once; fall back to the 1e-10-tolerance pseudo-inverse."""
    try:
        factor = scipy.linalg.cho_factor(gram, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        warnings.warn(f"singular {what}; using pseudo-inverse", RuntimeWarning)
        pg = np.linalg.pinv(gram, rcond=1e-10)
        return lambda rhs: pg @ rhs
    return lambda rhs: scipy.linalg.cho_solve(factor, rhs, check_finite=False)


def _r2_in(resid_ss, total_ss):
    if total_ss <= 0.0:
        return float("nan")
    return 1.0 - resid_ss / total_ss


def _maybe_canonical(pair, lags):
    # the diagonal shift moves fitted values unless both regressors share a lag depth
    if lags.p_a == lags.p_b:
        return canonicalize(pair)
    return pair


def model_mean(pair, xs, zs, method="blin"):
    """Mean map for either model family; xs/zs may be batched."""
    if method == "bilinear":
        return pair.a.T @ xs @ pair.b
    return blin_mean(pair, xs, zs)


def fitted_values(fit, series, lags):
    """In-sample means of a fit on the usable slices of a series."""
    vals = _series_values(series)
    xs, zs, _ = _suffstats(vals, lags)
    kind = "bilinear" if fit.method == "bilinear" else "blin"
    return model_mean(fit.pair, xs, zs, kind)


def predict_one_step(fit, series, lags):
    """Mean of the first unobserved slice, from the last observed lags."""
    vals = _series_values(series)
    horizon = vals.shape[0]
    x = lag_sum(vals, lags.p_a, horizon)
    z = lag_sum(vals, lags.p_b, horizon)
    kind = "bilinear" if fit.method == "bilinear" else "blin"
    return model_mean(fit.pair, x, z, kind)


# =========================================================================
# exact least squares
# =========================================================================

def fit_blin_exact(series, lags, max_elements=DESIGN_BUDGET):
    """Minimum-norm least squares on the dense stacked design.

    The coefficient vector is non-unique (the diagonal-shift direction is
    in the null space whenever it exists); the minimum-norm solution makes
    the result deterministic, and fitted values are unique regardless.
    """
    vals = _series_values(series)
    design, y = build_design(vals, lags, max_elements=max_elements)
    theta, _, rank, _ = np.linalg.lstsq(design, y, rcond=1e-10)
    s, l = vals.shape[1], vals.shape[2]
    pair = _maybe_canonical(unpack_pair(theta, s, l), lags)
    xs, zs, ys = _suffstats(vals, lags)
    resid = ys - blin_mean(pair, xs, zs)
    ssr = float((resid * resid).sum())
    total = float((ys * ys).sum())
    return InfluenceFit(
        pair=pair,
        iterations=0,
        criterion_trace=(ssr,),
        converged=True,
        r2_in=_r2_in(ssr, total),
        method="exact",
        design_rank=int(rank),
    )


def _exact_from_stats(xs, zs, ys):
    """Minimum-norm least squares from regressor stacks, via the grams.

    pinv(G) c equals the design pseudo-inverse solution, so this route
    avoids materializing the stacked design when only the fit matters.
    """
    g, c = _grams(xs, zs, ys)
    theta = np.linalg.pinv(g, rcond=1e-10) @ c
    s, l = ys.shape[1], ys.shape[2]
    pair = unpack_pair(theta, s, l)
    resid = ys - blin_mean(pair, xs, zs)
    ssr = float((resid * resid).sum())
    total = float((ys * ys).sum())
    return pair, ssr, total


def design_rank_check(series, lags, max_elements=DESIGN_BUDGET):
    """Numerical rank of the stacked design via dense SVD.

    Singular values above 1e-10 times the largest count toward the rank;
    is_unique reports whether the rank hits S^2 + L^2 - 1, the ceiling
    the diagonal-shift null direction allows.
    """
    vals = _series_values(series)
    horizon, s, l = vals.shape
    teff = horizon - lags.p
    n_rows, n_cols = s * l * teff, s * s + l * l
    if teff < 1 or n_rows * n_cols > max_elements:
        return RankReport(None, None, float("nan"), n_rows, n_cols, checked=False)
    design, _ = build_design(vals, lags, max_elements=max_elements)
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[0] <= 0.0:
        return RankReport(0, False, float("inf"), n_rows, n_cols)
    rank = int((sv > 1e-10 * sv[0]).sum())
    if rank < sv.size and sv[rank] > 0.0:
        gap = float(sv[rank - 1] / sv[rank]) if rank > 0 else float("nan")
    else:
        gap = float("inf")
    return RankReport(rank, rank == s * s + l * l - 1, gap, n_rows, n_cols)


# =========================================================================
# block coordinate descent
# =========================================================================

def _bcd_core(xs, zs, ys, cfg):
    """Coordinate cycle on explicit regressor stacks; returns raw factors."""
    s, l = ys.shape[1], ys.shape[2]
    sxx = np.einsum("til,tkl->ik", xs, xs)
    szz = np.einsum("tsl,tsm->lm", zs, zs)
    cyx = np.einsum("tsl,til->si", ys, xs)
    czy = np.einsum("tsl,tsm->lm", zs, ys)
    solve_b = _gram_solver(szz, "sum Z'Z gram")
    solve_a = _gram_solver(sxx, "sum XX' gram")

    a = np.eye(s)
    b = np.eye(l)
    q0 = float((ys * ys).sum())
    eta = cfg.eta if cfg.eta is not None else 1e-8 * q0
    trace = [q0]
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iter + 1):
        # B given A: regress Y - A'X on Z
        ax = a.T @ xs
        b = solve_b(czy - np.einsum("tsl,tsm->lm", zs, ax))
        # A given the fresh B: regress Y - ZB on X
        zb = zs @ b
        a = solve_a((cyx - np.einsum("tsl,til->si", zb, xs)).T)
        resid = ys - a.T @ xs - zs @ b
        q = float((resid * resid).sum())
        trace.append(q)
        iterations = it
        if abs(trace[-1] - trace[-2]) <= eta:
            converged = True
            break
    return a, b, tuple(trace), iterations, converged


def fit_blin_bcd(series, lags, cfg=None):
    """Alternate the closed-form B-step and A-step until the criterion settles.

    Initialization A = I_S, B = I_L; stop when |Q_v - Q_{v-1}| <= eta.
    Never materializes the stacked design, so cost per iteration is
    O(T * S * L * max(S, L)).
    """
    cfg = cfg or EstimatorConfig(method="bcd")
    vals = _series_values(series)
    xs, zs, ys = _suffstats(vals, lags)
    a, b, trace, iterations, converged = _bcd_core(xs, zs, ys, cfg)
    pair = _maybe_canonical(InfluencePair(a, b), lags)
    return InfluenceFit(
        pair=pair,
        iterations=iterations,
        criterion_trace=trace,
        converged=converged,
        r2_in=_r2_in(trace[-1], trace[0]),
        method="bcd",
    )


# =========================================================================
# sparse path
# =========================================================================

def default_lambda_grid(lam_max, n_points=50, floor_frac=1e-4):
    """Descending log-spaced grid from lam_max down to floor_frac*lam_max."""
    if lam_max <= 0.0:
        return np.zeros(1)
    return np.geomspace(lam_max, floor_frac * lam_max, n_points)


def sparse_path_from_grams(g, c, total_ss, s, l, lams=None, max_sweeps=2000):
    """l1 path on precomputed grams; shared by fits and cross-validation.

    Returns a SparsePath of un-canonicalized fits: the penalty already
    pins one representative, and shifting it would change the support.
    """
    lam_max = float(np.max(np.abs(c))) if c.size else 0.0
    if lams is None:
        lams = default_lambda_grid(lam_max)
    else:
        lams = np.sort(np.atleast_1d(np.asarray(lams, dtype=float)))[::-1]
    thetas, sweeps, ok = solve_path(g, c, lams, max_sweeps=max_sweeps)
    fits = []
    for q in range(lams.shape[0]):
        theta = thetas[q]
        # quadratic-form residual; exact given the grams, clipped at zero
        ssr = float(max(total_ss - 2.0 * theta @ c + theta @ g @ theta, 0.0))
        fits.append(
            InfluenceFit(
                pair=unpack_pair(theta, s, l),
                iterations=int(sweeps[q]),
                criterion_trace=(ssr,),
                converged=bool(ok[q]),
                r2_in=_r2_in(ssr, total_ss),
                method="sparse",
                lam=float(lams[q]),
                nnz=int(np.count_nonzero(theta)),
            )
        )
    return SparsePath(tuple(float(v) for v in lams), tuple(fits))


def fit_blin_sparse(series, lags, cfg=None):
    """Soft-thresholding coordinate descent over a descending penalty path.

    cfg.lam picks the grid: None for the default path, a scalar for a
    single point, or an explicit sequence.  Diagonals are penalized like
    every other entry and columns are not standardized.
    """
    cfg = cfg or EstimatorConfig(method="sparse")
    vals = _series_values(series)
    xs, zs, ys = _suffstats(vals, lags)
    g, c = _grams(xs, zs, ys)
    total = float((ys * ys).sum())
    lams = None
    if cfg.lam is not None:
        lams = np.atleast_1d(np.asarray(cfg.lam, dtype=float))
    return sparse_path_from_grams(
        g, c, total, vals.shape[1], vals.shape[2], lams=lams, max_sweeps=cfg.max_iter * 10
    )


# =========================================================================
# reduced rank
# =========================================================================

def _solve_or_pinv(mat, rhs, state):
    try:
        return np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        if not state.get("warned"):
            warnings.warn("singular factor gram; using pseudo-inverse", RuntimeWarning)
            state["warned"] = True
        return np.linalg.pinv(mat, rcond=1e-10) @ rhs


def _reduced_rank_core(xs, zs, ys, cfg):
    """Factor cycle on explicit regressor stacks; returns the four factors."""
    s, l = ys.shape[1], ys.shape[2]
    if cfg.rank_a is None or cfg.rank_b is None:
        raise ValueError("reduced-rank fit needs rank_a and rank_b")
    k, m = int(cfg.rank_a), int(cfg.rank_b)
    if not (1 <= k < s) or not (1 <= m < l):
        raise ValueError(f"ranks must satisfy 1 <= rank_a < {s} and 1 <= rank_b < {l}")
    sxx = np.einsum("til,tkl->ik", xs, xs)
    szz = np.einsum("tsl,tsm->lm", zs, zs)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 11])))
    u = rng.normal(size=(s, k))
    v = rng.normal(size=(s, k))
    rf = rng.normal(size=(l, m))
    sf = rng.normal(size=(l, m))

    q0 = float((ys * ys).sum())
    eta = cfg.eta if cfg.eta is not None else 1e-8 * q0
    trace = [q0]
    state = {}
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iter + 1):
        # A-side factors against the B-part residual
        resid_b = ys - zs @ (rf @ sf.T)
        m1 = np.einsum("til,tsl->is", xs, resid_b)  # sum X_t Ytilde_t'
        ut = _solve_or_pinv(v.T @ sxx @ v, v.T @ m1, state)
        u = ut.T
        w = m1 @ _solve_or_pinv(u.T @ u, u.T, state).T
        v = _solve_or_pinv(sxx, w, state)
        # B-side factors against the A-part residual
        resid_a = ys - (u @ v.T) @ xs
        m2 = np.einsum("tsl,tsm->lm", zs, resid_a)  # sum Z_t' Ybreve_t
        rf = _solve_or_pinv(szz, m2 @ _solve_or_pinv(sf.T @ sf, sf.T, state).T, state)
        sft = _solve_or_pinv(rf.T @ szz @ rf, rf.T @ m2, state)
        sf = sft.T
        resid = ys - (u @ v.T) @ xs - zs @ (rf @ sf.T)
        q = float((resid * resid).sum())
        trace.append(q)
        iterations = it
        if abs(trace[-1] - trace[-2]) <= eta:
            converged = True
            break
    for arr in (u, v, rf, sf):
        arr.setflags(write=False)
    return (u, v, rf, sf), tuple(trace), iterations, converged


def fit_blin_reduced_rank(series, lags, cfg):
    """Factored fit A^T = U V^T (rank k), B = Rf Sf^T (rank m).

    Cycles the four closed-form factor updates from standard-normal
    starts; each update solves its block exactly, so the criterion can
    only fall from the first cycle on (the random start may sit above
    the zero-model reference stored at trace index 0).  The result is
    reported raw (no diagonal-shift canonicalization) to keep the
    factor ranks intact.
    """
    vals = _series_values(series)
    xs, zs, ys = _suffstats(vals, lags)
    factors, trace, iterations, converged = _reduced_rank_core(xs, zs, ys, cfg)
    u, v, rf, sf = factors
    return InfluenceFit(
        pair=InfluencePair(v @ u.T, rf @ sf.T),
        iterations=iterations,
        criterion_trace=trace,
        converged=converged,
        r2_in=_r2_in(trace[-1], trace[0]),
        method="reduced_rank",
        factors=factors,
    )


# =========================================================================
# bilinear baseline
# =========================================================================

def _bilinear_tensors(xs, ys):
    txx = np.einsum("tsl,tum->slum", xs, xs)
    txy = np.einsum("tsl,tum->slum", xs, ys)
    return txx, txy


def _bilinear_core(xs, ys, cfg, max_elements=DESIGN_BUDGET):
    """Restarted alternating least squares on explicit regressor stacks."""
    s, l = ys.shape[1], ys.shape[2]
    yty = float((ys * ys).sum())
    eta = cfg.eta if cfg.eta is not None else 1e-8 * yty
    use_tensors = (s * l) ** 2 <= max_elements
    if use_tensors:
        txx, txy = _bilinear_tensors(xs, ys)

    def half_b(a):
        # grams of W_t = A'X_t against Y_t
        if use_tensors:
            wtw = np.einsum("su,slum->lm", a @ a.T, txx)
            wty = np.einsum("su,slum->lm", a, txy)
        else:
            w = a.T @ xs
            wtw = np.einsum("tsl,tsm->lm", w, w)
            wty = np.einsum("tsl,tsm->lm", w, ys)
        return wtw, wty

    def half_a(b):
        # grams of M_t = X_t B against Y_t
        if use_tensors:
            mmt = np.einsum("lm,slum->su", b @ b.T, txx)
            ymt = np.einsum("ml,umil->iu", b, txy)
        else:
            mm = xs @ b
            mmt = np.einsum("qil,qul->iu", mm, mm)
            ymt = np.einsum("qil,qul->iu", ys, mm)
        return mmt, ymt

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 17])))
    results = []
    for r in range(cfg.restarts):
        a = np.eye(s) if r == 0 else rng.normal(size=(s, s))
        b = np.eye(l)
        trace = [yty]
        converged = False
        state = {}
        for _it in range(1, cfg.max_iter + 1):
            wtw, wty = half_b(a)
            b = _solve_or_pinv(wtw, wty, state)
            mmt, ymt = half_a(b)
            at = _solve_or_pinv(mmt.T, ymt.T, state).T
            a = at.T
            # criterion from the same grams: ||Y - M A...||, M = X B
            q = float(yty - 2.0 * np.sum(ymt * at) + np.sum(mmt * (at.T @ at)))
            trace.append(max(q, 0.0))
            if abs(trace[-1] - trace[-2]) <= eta:
                converged = True
                break
        results.append((trace[-1], r, a, b, tuple(trace), converged))

    results.sort(key=lambda item: (item[0], item[1]))
    best_q, _, a, b, trace, converged = results[0]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na > 0.0 and nb > 0.0:
        scale = np.sqrt(nb / na)
        a = a * scale
        b = b / scale
        if np.trace(a) < 0.0:
            a, b = -a, -b
    restart_criteria = tuple(item[0] for item in sorted(results, key=lambda item: item[1]))
    return a, b, trace, converged, restart_criteria


def fit_bilinear(series, lags, cfg=None, max_elements=DESIGN_BUDGET):
    """Alternating least squares for the multiplicative model Y = A^T X B + E.

    Requires p_a == p_b (the product form admits a single lag depth).
    Runs cfg.restarts initializations - identity first, the rest standard
    normal - keeps the smallest final criterion (ties broken by restart
    index), and fixes the scale gauge ||A||_F = ||B||_F with tr(A) >= 0.
    When (S*L)^2 fits the element budget, fourth-order cross-moment
    tensors make every iteration O((S*L)^2), independent of T.
    """
    cfg = cfg or EstimatorConfig(method="bilinear")
    if lags.p_a != lags.p_b:
        raise ValueError("bilinear model requires p_a == p_b")
    vals = _series_values(series)
    xs, _, ys = _suffstats(vals, lags)
    a, b, trace, converged, restart_criteria = _bilinear_core(xs, ys, cfg, max_elements)
    return InfluenceFit(
        pair=InfluencePair(a, b),
        iterations=len(trace) - 1,
        criterion_trace=trace,
        converged=converged,
        r2_in=_r2_in(trace[-1], trace[0]),
        method="bilinear",
        restart_criteria=restart_criteria,
    )
