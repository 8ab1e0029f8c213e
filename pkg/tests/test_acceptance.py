"""Acceptance gate: one test per release criterion, one PASS/FAIL line each.

Every test collects its violations into a list and reports through
`_report`, so a red criterion still prints its line before failing.
Runtime-budgeted studies honor BLIN_JOBS; the stated budgets assume 8
workers, so on smaller machines the allowance scales by the deficit.

Run with `pytest tests/test_acceptance.py -v -s` to see all 12 lines.
"""

import itertools
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from blin.core import (
    InfluencePair,
    LagSpec,
    blin_mean,
    build_design,
    lag_sums,
    pack_pair,
)
from blin.estimators import (
    EstimatorConfig,
    design_rank_check,
    fit_blin_bcd,
    fit_blin_exact,
    fit_blin_reduced_rank,
    fit_blin_sparse,
    fitted_values,
)
from blin.evaluate import aic_select, convergence_study, kfold_cv, regression_fit
from blin.multiway import (
    fit_multiblin,
    multiway_design,
    multiway_fitted_values,
    multiway_mean,
)
from blin.simulate import (
    SimulationSpec,
    calibrate_snr,
    generate,
    generate_iid_regressor,
    make_influence_pair,
    pseudo_true_offdiag_constant,
)

LAGS = LagSpec(1, 1)


def _workers():
    env = os.environ.get("BLIN_JOBS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def _budget(seconds_at_8_workers):
    return seconds_at_8_workers * max(1.0, 8.0 / _workers())


def _run_seeds(fn, seeds):
    w = _workers()
    if w == 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, seeds))


def _report(num, name, failures):
    status = "PASS" if not failures else "FAIL"
    line = f"ACCEPTANCE {num:02d} {name}: {status}"
    if failures:
        line += " (" + "; ".join(failures) + ")"
    print(line)
    assert not failures, line


def _rng(*entropy):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


def _calibrated_series(s, l, horizon, q, generator, seed):
    pair0 = make_influence_pair(s, l, q, seed)
    spec = SimulationSpec(s=s, l=l, horizon=horizon, generator=generator,
                          q_sparsity=q, target_r2=0.75, seed=seed)
    scale, _ = calibrate_snr(spec, pair0)
    pair = InfluencePair(scale * pair0.a, scale * pair0.b)
    return generate(spec, pair), pair


# -------------------------------------------------------------------------
# 1. alternating solver matches the dense pseudo-inverse solution
# -------------------------------------------------------------------------

def test_criterion_01_oracle_equivalence():
    failures = []
    t0 = time.time()
    worst = 0.0
    for seed in range(100):
        rng = _rng(seed, 3)
        s = int(rng.integers(2, 6))
        l = int(rng.integers(2, 6))
        horizon = int(rng.integers(4, 13))
        vals = rng.normal(size=(horizon, s, l))
        q0 = float((vals[1:] ** 2).sum())
        cfg = EstimatorConfig(method="bcd", eta=1e-14 * q0, max_iter=5000)
        fv_b = fitted_values(fit_blin_bcd(vals, LAGS, cfg), vals, LAGS)
        fv_e = fitted_values(fit_blin_exact(vals, LAGS), vals, LAGS)
        rel = np.linalg.norm(fv_b - fv_e) / max(np.linalg.norm(fv_e), 1e-300)
        worst = max(worst, rel)
        if rel > 1e-6:
            failures.append(f"seed {seed}: relative gap {rel:.2e}")
    elapsed = time.time() - t0
    if elapsed >= 10.0:
        failures.append(f"runtime {elapsed:.1f}s >= 10s")
    _report(1, "oracle-equivalence", failures)


# -------------------------------------------------------------------------
# 2. design rank and uniqueness reporting
# -------------------------------------------------------------------------

def test_criterion_02_design_rank():
    failures = []
    for seed in range(19):
        rng = _rng(seed, 7)
        s = int(rng.integers(2, 7))
        l = int(rng.integers(2, 7))
        horizon = int(rng.integers(3, 14))
        vals = rng.normal(size=(horizon, s, l))
        rep = design_rank_check(vals, LAGS)
        expect = min((horizon - 1) * s * l, s * s + l * l - 1)
        if rep.rank != expect:
            failures.append(f"seed {seed} ({s},{l},T={horizon}): rank {rep.rank} != {expect}")
    # square case with two usable responses: the formula demands full
    # column rank up to the shift direction, and a unique-solution report
    vals = _rng(99, 7).normal(size=(3, 5, 5))
    rep = design_rank_check(vals, LAGS)
    expect = min(2 * 25, 49)
    if rep.rank != expect:
        failures.append(f"square T_eff=2: rank {rep.rank} != {expect}")
    if not rep.is_unique:
        failures.append("square T_eff=2: unique=false")
    _report(2, "design-rank", failures)


# -------------------------------------------------------------------------
# 3. diagonal shifts change nothing observable
# -------------------------------------------------------------------------

def test_criterion_03_shift_identifiability():
    failures = []
    for seed in range(5):
        rng = _rng(seed, 31)
        s = int(rng.integers(3, 6))
        l = int(rng.integers(3, 6))
        vals = rng.normal(size=(int(rng.integers(8, 14)), s, l))
        xs = lag_sums(vals, 1)
        fits = [
            fit_blin_exact(vals, LAGS),
            fit_blin_bcd(vals, LAGS),
            fit_blin_sparse(vals, LAGS, EstimatorConfig(method="sparse", lam=0.5)).fits[0],
        ]
        for fit in fits:
            if not fit.converged:
                continue
            base = blin_mean(fit.pair, xs, xs)
            for c in (-3.0, 0.7, 10.0):
                moved = InfluencePair(fit.pair.a + c * np.eye(s), fit.pair.b - c * np.eye(l))
                dev = np.abs(blin_mean(moved, xs, xs) - base).max()
                if dev > 1e-10:
                    failures.append(f"seed {seed} {fit.method} c={c}: fitted moved {dev:.2e}")
                diag_dev = np.abs(moved.diag_effect - fit.pair.diag_effect).max()
                if diag_dev > 1e-12:
                    failures.append(f"seed {seed} {fit.method} c={c}: diag moved {diag_dev:.2e}")
    _report(3, "shift-identifiability", failures)


# -------------------------------------------------------------------------
# 4. penalized estimator: endpoints and stationarity conditions
# -------------------------------------------------------------------------

def test_criterion_04_penalized_correctness():
    failures = []
    vals = _rng(4, 11).normal(size=(20, 6, 6))
    design, y = build_design(vals, LAGS)
    lam_max = float(np.abs(design.T @ y).max())

    fv0 = fitted_values(
        fit_blin_sparse(vals, LAGS, EstimatorConfig(method="sparse", lam=0.0)).fits[0],
        vals, LAGS)
    fve = fitted_values(fit_blin_exact(vals, LAGS), vals, LAGS)
    rel = np.linalg.norm(fv0 - fve) / np.linalg.norm(fve)
    if rel > 1e-4:
        failures.append(f"lam=0 vs exact: {rel:.2e}")

    top = fit_blin_sparse(vals, LAGS, EstimatorConfig(method="sparse", lam=lam_max * 1.0001)).fits[0]
    if top.nnz != 0 or np.abs(pack_pair(top.pair)).max() != 0.0:
        failures.append(f"lam >= lam_max not all-zero (nnz={top.nnz})")

    for frac in (0.1, 0.3, 0.6):
        lam = frac * lam_max
        fit = fit_blin_sparse(vals, LAGS, EstimatorConfig(method="sparse", lam=lam)).fits[0]
        theta = pack_pair(fit.pair)
        grad = design.T @ (design @ theta - y)
        active = theta != 0.0
        kkt = 0.0
        if active.any():
            kkt = float(np.abs(grad[active] + lam * np.sign(theta[active])).max())
        if (~active).any():
            kkt = max(kkt, float(np.maximum(np.abs(grad[~active]) - lam, 0.0).max()))
        if kkt > 1e-6:
            failures.append(f"lam={frac}*lam_max: KKT residual {kkt:.2e}")
    _report(4, "penalized-correctness", failures)


# -------------------------------------------------------------------------
# 5. noise calibration hits the target signal share
# -------------------------------------------------------------------------

def test_criterion_05_calibration():
    failures = []
    for q in (0.0, 0.5, 0.9):
        t0 = time.time()
        series, pair = _calibrated_series(10, 10, 10**4, q, "blin", 5)
        vals = series.values
        xs = lag_sums(vals, 1)
        resid = vals[1:] - blin_mean(pair, xs, xs)
        r2 = 1.0 - float((resid ** 2).sum()) / float((vals[1:] ** 2).sum())
        elapsed = time.time() - t0
        if abs(r2 - 0.75) > 0.02:
            failures.append(f"q={q}: true-model R2 {r2:.4f} outside 0.75 +/- 0.02")
        if elapsed >= 60.0:
            failures.append(f"q={q}: runtime {elapsed:.1f}s >= 60s")
    _report(5, "calibration", failures)


# -------------------------------------------------------------------------
# 6. cross-validation study at scale
# -------------------------------------------------------------------------

def _cv_study_seed(seed):
    series, _ = _calibrated_series(10, 10, 50, 0.9, "blin", seed)
    cfgs = (EstimatorConfig(method="exact"), EstimatorConfig(method="sparse"))
    rep = kfold_cv(series, LAGS, cfgs, folds=10, seed=seed)
    full = rep.results[cfgs[0]].r2_out
    sparse = rep.results[cfgs[1]].r2_out

    # short multiplicative-generated panels: nine usable responses, so
    # nine folds is the finest row-deletion partition available
    series_b, _ = _calibrated_series(10, 10, 10, 0.9, "bilinear", seed)
    cfg_b = (EstimatorConfig(method="bilinear"),)
    rep_b = kfold_cv(series_b, LAGS, cfg_b, folds=9, seed=seed)
    return full, sparse, rep_b.results[cfg_b[0]].r2_out


def test_criterion_06_cross_validation_study():
    failures = []
    t0 = time.time()
    rows = _run_seeds(_cv_study_seed, range(100))
    elapsed = time.time() - t0
    full = float(np.median([r[0] for r in rows]))
    sparse = float(np.median([r[1] for r in rows]))
    worst_bilinear = float(min(r[2] for r in rows))
    if not 0.6 <= full <= 0.8:
        failures.append(f"full median r2_out {full:.3f} outside [0.6, 0.8]")
    if not 0.6 <= sparse <= 0.8:
        failures.append(f"sparse median r2_out {sparse:.3f} outside [0.6, 0.8]")
    if not worst_bilinear < 0.0:
        failures.append(f"no negative bilinear r2_out on short panels (min {worst_bilinear:.3f})")
    if elapsed >= _budget(1800.0):
        failures.append(f"runtime {elapsed:.0f}s over budget")
    _report(6, "cross-validation-study", failures)


# -------------------------------------------------------------------------
# 7. error-vs-sample-size slopes
# -------------------------------------------------------------------------

def test_criterion_07_convergence_rates():
    failures = []
    t0 = time.time()
    res = convergence_study(reps=50, seed=0, jobs=_workers())
    elapsed = time.time() - t0
    slopes = {(sl.generator, sl.method, sl.target): sl.slope for sl in res.slopes}
    for gen in ("blin", "bilinear"):
        for target in ("a", "b"):
            got = slopes[(gen, gen, target)]
            if abs(got - (-1.0)) > 0.15:
                failures.append(f"{gen}/{gen}/{target} slope {got:.3f} outside -1.0 +/- 0.15")
    for gen, method in (("bilinear", "blin"), ("blin", "bilinear")):
        got = slopes[(gen, method, "diag")]
        if abs(got) > 0.2:
            failures.append(f"{gen}/{method}/diag slope {got:.3f} exceeds 0.2")
    if res.dropped:
        failures.append(f"{res.dropped} degenerate replicates dropped")
    if elapsed >= _budget(1200.0):
        failures.append(f"runtime {elapsed:.0f}s over budget")
    _report(7, "convergence-rates", failures)


# -------------------------------------------------------------------------
# 8. cross-family off-diagonal limit
# -------------------------------------------------------------------------

def _theorem_pair():
    base = make_influence_pair(10, 10, 0.0, 11)
    a = base.a * 0.5 + 0.2 * np.eye(10)
    b = base.b * 0.5 + 0.3 * np.eye(10)
    return InfluencePair(a, b)


def test_criterion_08_offdiagonal_limit():
    failures = []
    pair = _theorem_pair()
    expect = float(np.trace(pair.b) / 10)
    limit = pseudo_true_offdiag_constant(pair, np.eye(10), np.eye(10), "blin")[0]
    if abs(limit - expect) > 1e-12:
        failures.append(f"closed-form limit {limit} != trace/size {expect}")
    off = ~np.eye(10, dtype=bool)
    ratios = []
    for seed in range(10):
        spec = SimulationSpec(s=10, l=10, horizon=10**4, generator="bilinear", seed=seed)
        xs, ys = generate_iid_regressor(spec, pair)
        fit = regression_fit(xs, ys, method="blin")
        ratios.append(fit.pair.a[off] / pair.a[off])
    med = float(np.median(np.concatenate(ratios)))
    if abs(med - expect) > 0.1 * abs(expect):
        failures.append(f"median ratio {med:.4f} not within 10% of {expect:.4f}")
    _report(8, "offdiagonal-limit", failures)


# -------------------------------------------------------------------------
# 9. cross-family diagonal limit with constant diagonals
# -------------------------------------------------------------------------

def test_criterion_09_diagonal_limit():
    failures = []
    alpha, beta = 0.2, 0.1
    base = make_influence_pair(10, 10, 0.0, 21)
    pair = InfluencePair(base.a * 0.5 + alpha * np.eye(10),
                         base.b * 0.5 + beta * np.eye(10))
    spec = SimulationSpec(s=10, l=10, horizon=10**4, generator="bilinear", seed=7)
    xs, ys = generate_iid_regressor(spec, pair)
    fit = regression_fit(xs, ys, method="blin")
    med = float(np.median(np.abs(fit.pair.diag_effect - alpha * beta)))
    if med > 0.02:
        failures.append(f"median |diag effect - alpha*beta| = {med:.4f} > 0.02")
    _report(9, "diagonal-limit", failures)


# -------------------------------------------------------------------------
# 10. multiway solver matches the dense minimum-norm solution
# -------------------------------------------------------------------------

def test_criterion_10_multiway_oracle():
    failures = []
    vals = _rng(10, 19).normal(size=(6, 3, 3, 2))
    lags3 = (1, 1, 1)
    q0 = float((vals[1:] ** 2).sum())
    cfg = EstimatorConfig(method="bcd", eta=1e-14 * q0, max_iter=20000)
    fit = fit_multiblin(vals, lags3, cfg)
    design, y = multiway_design(vals, lags3)
    dense_fitted = design @ (np.linalg.pinv(design, rcond=1e-10) @ y)
    fv = multiway_fitted_values(fit, vals, lags3)
    # design rows stack each usable slice in column-major order
    bcd_fitted = np.concatenate([fv[t].ravel(order="F") for t in range(fv.shape[0])])
    rel = np.linalg.norm(bcd_fitted - dense_fitted) / np.linalg.norm(dense_fitted)
    if rel > 1e-5:
        failures.append(f"three-mode fitted values vs dense solution: {rel:.2e}")

    vals2 = _rng(10, 29).normal(size=(9, 4, 3))
    q0 = float((vals2[1:] ** 2).sum())
    cfg2 = EstimatorConfig(method="bcd", eta=1e-14 * q0, max_iter=20000)
    fv_m = multiway_fitted_values(fit_multiblin(vals2, (1, 1), cfg2), vals2, (1, 1))
    fv_b = fitted_values(fit_blin_bcd(vals2, LAGS, cfg2), vals2, LAGS)
    gap = np.abs(fv_m - fv_b).max()
    if gap > 1e-8:
        failures.append(f"two-mode path vs dedicated estimator: {gap:.2e}")
    _report(10, "multiway-oracle", failures)


# -------------------------------------------------------------------------
# 11. lag selection recovers the generating depths
# -------------------------------------------------------------------------

def _gen_multiway(nets, depths, horizon, seed, burn=60):
    dims = tuple(m.shape[0] for m in nets)
    p = max(depths)
    rng = _rng(seed, 13)
    total = horizon + burn
    vals = np.zeros((total,) + dims)
    vals[:p] = rng.normal(size=(p,) + dims)
    noise = rng.normal(size=(total,) + dims)
    for t in range(p, total):
        xs = [vals[t - d:t].sum(axis=0)[None] for d in depths]
        vals[t] = multiway_mean(nets, xs)[0] + noise[t]
    return vals[burn:]


def _lag_nets(dims, seed, scale=0.25):
    rng = _rng(seed, 17)
    nets = []
    for m in dims:
        raw = rng.normal(size=(m, m))
        nets.append(scale * raw / np.linalg.norm(raw, 2))
    return nets


def test_criterion_11_lag_selection():
    failures = []
    true = (2, 1, 1)
    grid = list(itertools.product((1, 2), repeat=3))
    wins = 0
    for seed in range(20):
        vals = _gen_multiway(_lag_nets((4, 3, 3), seed), true, 150, seed)
        if not np.isfinite(vals).all():
            failures.append(f"seed {seed}: generator diverged")
            continue
        wins += aic_select(vals, grid)[0].lags == true
    if wins < 16:
        failures.append(f"true lags ranked first in {wins}/20 < 80%")
    _report(11, "lag-selection", failures)


# -------------------------------------------------------------------------
# 12. factored low-rank fits: descent, rank bounds, gauge freedom
# -------------------------------------------------------------------------

def test_criterion_12_reduced_rank():
    failures = []
    for seed in range(10):
        rng = _rng(seed, 23)
        s = int(rng.integers(3, 7))
        l = int(rng.integers(3, 7))
        horizon = int(rng.integers(8, 16))
        k = int(rng.integers(1, s))
        m = int(rng.integers(1, l))
        vals = rng.normal(size=(horizon, s, l))
        cfg = EstimatorConfig(method="reduced_rank", rank_a=k, rank_b=m)
        fit = fit_blin_reduced_rank(vals, LAGS, cfg)
        trace = np.asarray(fit.criterion_trace)
        if not np.all(np.diff(trace[1:]) <= 1e-9 * trace[0]):
            failures.append(f"seed {seed}: criterion trace increased")
        if np.linalg.matrix_rank(fit.pair.a) > k:
            failures.append(f"seed {seed}: rank(a) exceeds {k}")
        if np.linalg.matrix_rank(fit.pair.b) > m:
            failures.append(f"seed {seed}: rank(b) exceeds {m}")
        ua, va, ub, vb = fit.factors
        g = rng.normal(size=(k, k)) + 3.0 * np.eye(k)
        regauged = (ua @ g) @ (va @ np.linalg.inv(g).T).T
        dev = np.abs(regauged - fit.pair.a.T).max()
        if dev > 1e-8:
            failures.append(f"seed {seed}: gauge transform moved a by {dev:.2e}")
    _report(12, "reduced-rank", failures)
