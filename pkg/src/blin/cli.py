"""Batch front door: ingestion, simulation, fitting, and the studies.

Data files use the long format ``t,i,j[,k],value`` (header required);
labels map to dense 0-based indices in first-appearance order unless an
explicit label map is supplied.  Absent cells are zero-filled and
counted, on the event-data reading that absence means no interaction.

Every subcommand accepts ``--seed`` and ``--config`` (a key=value file
whose entries flags override).  Numeric CSV output uses 17 significant
digits; every file is written to a temp name and renamed, so readers
never see a partial file.  Exit status: 0 on success with all fits
converged (or --allow-nonconverged), 1 on runtime failure, 2 on usage
errors.
"""

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import tempfile

import numpy as np

from .core import InfluencePair, LagSpec, TensorSeries, companion, is_stationary
from .estimators import EstimatorConfig, design_rank_check
from .evaluate import (
    aic_select,
    aic_value,
    convergence_study,
    kfold_cv,
    likelihood_line_scan,
)
from .models import BLINRegressor
from .multiway import difference as difference_series
from .multiway import fit_multiblin, mode_lag_depths, multiway_sparse_path
from .simulate import (
    SimulationSpec,
    calibrate_snr,
    generate,
    make_influence_pair,
    transition_matrix,
)

JOBS_ENV = "BLIN_JOBS"

_METHOD_NAMES = ("exact", "bcd", "sparse", "reduced_rank", "bilinear")


class UsageError(Exception):
    """Bad invocation not caught by argparse (config-supplied values included)."""


# =========================================================================
# file primitives
# =========================================================================

def format_number(x):
    """Full round-trip decimal form used in every numeric CSV cell."""
    return f"{float(x):.17g}"


def atomic_write(path, text):
    """Write to a temp file in the target directory, then rename over path."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".blin-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path, mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines = [",".join(format_number(v) for v in row) for row in mat]
    atomic_write(path, "\n".join(lines) + "\n")


def read_matrix(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_json(path, payload):
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# =========================================================================
# long format
# =========================================================================

@dataclasses.dataclass(frozen=True)
class LongRecord:
    """One data row; (t, i, j[, k]) is the unique key within a file."""

    t: int
    i: str
    j: str
    value: float
    k: str | None = None


@dataclasses.dataclass(frozen=True)
class IngestReport:
    """What ingestion did: fill count, label maps, applied transforms."""

    rows: int
    filled: int
    mode_labels: tuple
    transforms: tuple


def export_long(path, series):
    """Write a series as long-format CSV, 17 significant digits per value."""
    vals = series.values if hasattr(series, "values") else np.asarray(series, dtype=float)
    k_modes = vals.ndim - 1
    if k_modes not in (2, 3):
        raise ValueError("long format covers two- and three-mode series")
    labels = getattr(series, "mode_labels", None)
    if labels is None:
        labels = tuple(tuple(str(n) for n in range(m)) for m in vals.shape[1:])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "i", "j", "value"] if k_modes == 2 else ["t", "i", "j", "k", "value"])
    for t in range(vals.shape[0]):
        for idx in np.ndindex(vals.shape[1:]):
            row = [str(t)]
            row.extend(labels[m][idx[m]] for m in range(k_modes))
            row.append(format_number(vals[(t,) + idx]))
            writer.writerow(row)
    atomic_write(path, buf.getvalue())


def ingest(path, center=False, standardize=False, difference=False,
           strict=False, label_maps=None):
    """Parse a long-format CSV into a dense series plus an ingestion report.

    The time grid is the contiguous range min(t)..max(t); absent cells
    are zero-filled and counted (an error under strict).  Transform
    order: difference (length drops by one), then centering or
    standardization per cell series; standardize implies centering.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header == ["t", "i", "j", "value"]:
            k_modes = 2
        elif header == ["t", "i", "j", "k", "value"]:
            k_modes = 3
        else:
            raise ValueError(f"{path}: header must be t,i,j,value or t,i,j,k,value, got {header}")
        explicit = label_maps is not None
        if explicit:
            if len(label_maps) != k_modes:
                raise ValueError(
                    f"label map supplies {len(label_maps)} modes, file has {k_modes}"
                )
            index = [
                {str(lab): n for n, lab in enumerate(mode)} for mode in label_maps
            ]
        else:
            index = [{} for _ in range(k_modes)]
        entries = {}
        n_rows = 0
        for ln, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != k_modes + 2:
                raise ValueError(f"{path}:{ln}: expected {k_modes + 2} fields, got {len(row)}")
            try:
                t = int(row[0])
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: non-integer time {row[0]!r}") from exc
            try:
                value = float(row[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: non-numeric value {row[-1]!r}") from exc
            key = [t]
            for mode, lab in enumerate(row[1:-1]):
                table = index[mode]
                if lab not in table:
                    if explicit:
                        raise ValueError(
                            f"{path}:{ln}: label {lab!r} not in the supplied map for mode {mode}"
                        )
                    table[lab] = len(table)
                key.append(table[lab])
            key = tuple(key)
            if key in entries:
                raise ValueError(f"{path}:{ln}: duplicate key ({', '.join(row[:-1])})")
            entries[key] = value
            n_rows += 1
    if not entries:
        raise ValueError(f"{path}: no data rows")
    dims = tuple(len(table) for table in index)
    t_lo = min(key[0] for key in entries)
    t_hi = max(key[0] for key in entries)
    horizon = t_hi - t_lo + 1
    vals = np.zeros((horizon,) + dims)
    for key, value in entries.items():
        vals[(key[0] - t_lo,) + key[1:]] = value
    filled = vals.size - len(entries)
    if strict and filled:
        raise ValueError(f"{path}: {filled} missing cells (strict mode)")
    transforms = []
    if difference:
        vals = difference_series(vals).values
        transforms.append("difference")
    if standardize:
        sd = vals.std(axis=0)
        if np.any(sd == 0.0):
            raise ValueError("standardize: a cell series is constant (zero SD)")
        vals = (vals - vals.mean(axis=0)) / sd
        transforms.append("standardize")
    elif center:
        vals = vals - vals.mean(axis=0)
        transforms.append("center")
    labels = tuple(tuple(table) for table in index)
    series = TensorSeries(values=vals, mode_labels=labels)
    return series, IngestReport(
        rows=n_rows, filled=int(filled), mode_labels=labels, transforms=tuple(transforms)
    )


# =========================================================================
# configuration
# =========================================================================

def read_config(path):
    """key=value lines; blank lines and # comments ignored."""
    config = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key=value")
            key, _, value = line.partition("=")
            config[key.strip()] = value.strip()
    return config


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    try:
        return tuple(int(part) for part in str(text).split(","))
    except ValueError as exc:
        raise ValueError(f"expected comma-separated integers, got {text!r}") from exc


def _rank(text):
    sizes = _int_list(text)
    if len(sizes) == 1:
        return (sizes[0], sizes[0])
    if len(sizes) == 2:
        return sizes
    raise ValueError(f"rank takes one or two sizes, got {len(sizes)}")


def _lag_grid(text):
    cells = [cell for cell in str(text).split(";") if cell.strip()]
    if not cells:
        raise ValueError("empty lag grid")
    return [_int_list(cell) for cell in cells]


def _float_list(text):
    return tuple(float(part) for part in str(text).split(","))


def _str_list(text):
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def _norm_lags(lags, k_modes):
    """One depth broadcasts to every mode; otherwise counts must agree."""
    if len(lags) == 1:
        return tuple(lags) * k_modes
    if len(lags) != k_modes:
        raise UsageError(f"need {k_modes} lag depths, got {len(lags)}")
    return tuple(lags)


def _check_method(method, allowed=_METHOD_NAMES):
    if method not in allowed:
        raise UsageError(f"method must be one of {allowed}, got {method!r}")
    return method


class Resolver:
    """Merges flag values over config-file values and records the outcome.

    finish() rejects config keys nothing asked for, so typos in a config
    file fail loudly instead of being ignored.
    """

    def __init__(self, args, config):
        self.args = args
        self.config = config
        self.resolved = {}

    def get(self, name, cast=str, default=None, required=False):
        attr = "in_" if name == "in" else name.replace("-", "_")
        value = getattr(self.args, attr, None)
        if value is None and name in self.config:
            try:
                value = cast(self.config[name])
            except ValueError as exc:
                raise UsageError(f"config key {name!r}: {exc}") from exc
        if value is None:
            if required:
                raise UsageError(f"missing required option --{name}")
            value = default
        self.resolved[name] = value
        return value

    def jobs(self):
        value = self.get("jobs", int)
        if value is None and os.environ.get(JOBS_ENV):
            try:
                value = int(os.environ[JOBS_ENV])
            except ValueError as exc:
                raise UsageError(f"{JOBS_ENV} must be an integer: {exc}") from exc
            self.resolved["jobs"] = value
        return value

    def finish(self):
        unknown = sorted(set(self.config) - set(self.resolved))
        if unknown:
            raise UsageError(f"unrecognized config keys: {', '.join(unknown)}")
        return {k: v for k, v in self.resolved.items() if v is not None}


def _load_series(res):
    """Shared ingestion path for subcommands reading a data file."""
    data = res.get("in", str, required=True)
    label_maps = None
    labels_path = res.get("labels", str)
    if labels_path:
        with open(labels_path) as fh:
            raw = json.load(fh)
        label_maps = [raw[key] for key in ("i", "j", "k") if key in raw]
    series, report = ingest(
        data,
        center=bool(res.get("center", _bool, default=False)),
        standardize=bool(res.get("standardize", _bool, default=False)),
        difference=bool(res.get("difference", _bool, default=False)),
        strict=bool(res.get("strict", _bool, default=False)),
        label_maps=label_maps,
    )
    return series, report


def _method_config(res, method, seed):
    rank = res.get("rank", _rank)
    try:
        return EstimatorConfig(
            method=method,
            eta=res.get("eta", float),
            max_iter=res.get("max-iter", int, default=500),
            lam=res.get("lam", float),
            rank_a=rank[0] if rank else None,
            rank_b=rank[1] if rank else None,
            restarts=res.get("restarts", int, default=10),
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# =========================================================================
# subcommands
# =========================================================================

def cmd_simulate(args, config):
    res = Resolver(args, config)
    s = res.get("s", int, required=True)
    l = res.get("l", int, required=True)
    horizon = res.get("horizon", int, required=True)
    generator = res.get("generator", str, default="blin")
    q = res.get("q-sparsity", float, default=0.0)
    target = res.get("target-r2", float, default=0.75)
    burn_in = res.get("burn-in", int)
    seed = res.get("seed", int, default=0)
    pair_seed = res.get("pair-seed", int, default=seed)
    out = res.get("out", str, required=True)
    truth_prefix = res.get("truth-prefix", str)
    out_spec = res.get("out-spec", str)
    resolved = res.finish()

    spec = SimulationSpec(s=s, l=l, horizon=horizon, generator=generator,
                          q_sparsity=q, target_r2=target, burn_in=burn_in, seed=seed)
    base = make_influence_pair(s, l, q, pair_seed)
    scale, achieved = calibrate_snr(spec, base)
    pair = InfluencePair(scale * base.a, scale * base.b)
    series = generate(spec, pair)
    export_long(out, series)
    if truth_prefix:
        write_matrix(f"{truth_prefix}_a.csv", pair.a)
        write_matrix(f"{truth_prefix}_b.csv", pair.b)
    if out_spec:
        keys = ["s", "l", "horizon", "generator", "q-sparsity", "target-r2",
                "seed", "pair-seed"]
        lines = [f"{k}={resolved[k]}" for k in keys]
        if burn_in is not None:
            lines.append(f"burn-in={burn_in}")
        atomic_write(out_spec, "\n".join(lines) + "\n")
    print(f"simulate: wrote {out} ({horizon} x {s} x {l}), "
          f"calibrated scale {scale:.6g}, achieved r2 {achieved:.6g}")
    return 0


def _fit_two_mode(res, series, lags, method, seed):
    _check_method(method)
    rank = res.get("rank", _rank)
    if method == "reduced_rank" and rank is None:
        raise UsageError("reduced_rank needs --rank")
    est = BLINRegressor(
        method=method,
        lags=LagSpec(*lags),
        eta=res.get("eta", float),
        max_iter=res.get("max-iter", int, default=500),
        lam=res.get("lam", float),
        rank=rank,
        restarts=res.get("restarts", int, default=10),
        seed=seed,
    )
    est.fit(series.values)
    fit = est.fit_
    spec = LagSpec(*lags)
    rank_report = design_rank_check(series.values, spec)
    if method == "bilinear":
        # multiplicative family: stability is the radius of B^T (x) A^T
        radius = float(np.max(np.abs(np.linalg.eigvals(
            transition_matrix(fit.pair, "bilinear")))))
        stationary = bool(radius < 1.0)
    else:
        stationary = bool(is_stationary(companion(fit.pair, spec)))
    networks = {"a": fit.pair.a, "b": fit.pair.b}
    manifest = {
        "method": method,
        "lags": list(lags),
        "lambda": fit.lam,
        "nnz": fit.nnz,
        "iterations": fit.iterations,
        "criterion_trace": list(fit.criterion_trace),
        "r2_in": fit.r2_in,
        "design_rank": None if rank_report.rank is None else int(rank_report.rank),
        "design_unique": rank_report.is_unique,
        "stationary": stationary,
        "converged": bool(fit.converged),
    }
    return networks, fit.pair.diag_effect, manifest, bool(fit.converged)


def _fit_multiway(res, series, lags, method, seed):
    if method not in ("bcd", "sparse"):
        raise UsageError(f"three-mode data supports methods bcd and sparse, not {method!r}")
    depths = mode_lag_depths(lags, series.values.ndim - 1)
    cfg = _method_config(res, method, seed)
    if method == "bcd":
        fit = fit_multiblin(series.values, depths, cfg)
    else:
        fits = multiway_sparse_path(series.values, depths, cfg)
        p = max(depths)
        n_obs = (series.values.shape[0] - p) * int(np.prod(series.values.shape[1:]))
        fit = min(fits, key=lambda f: aic_value(f.nnz, f.criterion_trace[0], n_obs))
    names = ("a", "b", "c")
    networks = {names[k]: net for k, net in enumerate(fit.networks)}
    manifest = {
        "method": method,
        "lags": list(depths),
        "lambda": fit.lam,
        "nnz": fit.nnz,
        "iterations": fit.iterations,
        "criterion_trace": list(fit.criterion_trace),
        "r2_in": fit.r2_in,
        "design_rank": None,
        "design_unique": None,
        "stationary": None,
        "converged": bool(fit.converged),
    }
    return networks, fit.diag_effect, manifest, bool(fit.converged)


def cmd_fit(args, config):
    res = Resolver(args, config)
    series, report = _load_series(res)
    k_modes = series.values.ndim - 1
    method = res.get("method", str, default="exact")
    lags = _norm_lags(res.get("lags", _int_list, default=(1,)), k_modes)
    seed = res.get("seed", int, default=0)
    prefix = res.get("out-prefix", str, required=True)
    allow = bool(res.get("allow-nonconverged", _bool, default=False))
    if k_modes == 2:
        networks, diag, manifest, converged = _fit_two_mode(res, series, lags, method, seed)
    else:
        networks, diag, manifest, converged = _fit_multiway(res, series, lags, method, seed)
    resolved = res.finish()

    for name, net in networks.items():
        write_matrix(f"{prefix}_{name}.csv", net)
    if diag.ndim == 2:
        write_matrix(f"{prefix}_diag_effect.csv", diag)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "j", "k", "value"])
        for idx in np.ndindex(diag.shape):
            writer.writerow([*idx, format_number(diag[idx])])
        atomic_write(f"{prefix}_diag_effect.csv", buf.getvalue())
    manifest["ingest"] = {
        "rows": report.rows, "filled": report.filled,
        "transforms": list(report.transforms),
    }
    manifest["config"] = resolved
    write_json(f"{prefix}_manifest.json", manifest)
    print(f"fit: method {method}, r2_in {manifest['r2_in']:.6g}, "
          f"converged {converged}, wrote {prefix}_*.csv")
    if not converged and not allow:
        print("error: fit did not converge (pass --allow-nonconverged to accept)",
              file=sys.stderr)
        return 1
    return 0


def cmd_cv(args, config):
    res = Resolver(args, config)
    series, report = _load_series(res)
    if series.values.ndim != 3:
        raise UsageError("cv supports two-mode series")
    lags = _norm_lags(res.get("lags", _int_list, default=(1,)), 2)
    folds = res.get("folds", int, default=10)
    seed = res.get("seed", int, default=0)
    methods = res.get("methods", _str_list, default=("exact",))
    prefix = res.get("out-prefix", str, required=True)
    allow = bool(res.get("allow-nonconverged", _bool, default=False))
    configs = [_method_config(res, _check_method(m), seed) for m in methods]
    resolved = res.finish()

    cv = kfold_cv(series.values, LagSpec(*lags), configs, folds=folds, seed=seed)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "fold"])
    writer.writerows(sorted((t, n) for n, fold in enumerate(cv.folds) for t in fold))
    atomic_write(f"{prefix}_folds.csv", buf.getvalue())

    results = {}
    all_converged = True
    for method, cfg in zip(methods, configs):
        m = cv.results[cfg]
        all_converged = all_converged and m.converged
        results[method] = {
            "r2_in": m.r2_in,
            "r2_out": m.r2_out,
            "fold_r2": list(m.fold_r2),
            "converged": bool(m.converged),
            "lam_chosen": None if m.lam_chosen is None else list(m.lam_chosen),
        }
    payload = {
        "folds": [list(fold) for fold in cv.folds],
        "results": results,
        "ingest": {"rows": report.rows, "filled": report.filled,
                   "transforms": list(report.transforms)},
        "config": resolved,
    }
    write_json(f"{prefix}_cv.json", payload)
    summary = ", ".join(f"{m} {results[m]['r2_out']:+.4f}" for m in results)
    print(f"cv: r2_out {summary}; wrote {prefix}_folds.csv, {prefix}_cv.json")
    if not all_converged and not allow:
        print("error: a fold fit did not converge (pass --allow-nonconverged to accept)",
              file=sys.stderr)
        return 1
    return 0


def cmd_lagselect(args, config):
    res = Resolver(args, config)
    series, _ = _load_series(res)
    k_modes = series.values.ndim - 1
    grid = [_norm_lags(cell, k_modes) for cell in res.get("grid", _lag_grid, required=True)]
    seed = res.get("seed", int, default=0)
    out = res.get("out", str, required=True)
    allow = bool(res.get("allow-nonconverged", _bool, default=False))
    cfg = _method_config(res, "sparse", seed)
    res.finish()

    table = aic_select(series.values, grid, cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    depth_cols = ["p_a", "p_b", "p_c"][:k_modes]
    writer.writerow(depth_cols + ["aic", "r2_in", "nnz", "lam", "degenerate", "converged"])
    for cell in table:
        writer.writerow(
            [*cell.lags, format_number(cell.aic), format_number(cell.r2_in),
             cell.nnz, format_number(cell.lam), int(cell.degenerate),
             int(cell.converged)]
        )
    atomic_write(out, buf.getvalue())
    best = table[0]
    print(f"lagselect: best cell {best.lags} aic {best.aic:.6g} "
          f"nnz {best.nnz}; wrote {out}")
    if not all(cell.converged for cell in table) and not allow:
        print("error: a penalty path did not converge (pass --allow-nonconverged to accept)",
              file=sys.stderr)
        return 1
    return 0


def cmd_study_convergence(args, config):
    res = Resolver(args, config)
    dims = res.get("dims", _int_list, default=(10, 9))
    t_grid = res.get("t-grid", _float_list, default=(100.0, 316.0, 1000.0, 3162.0))
    reps = res.get("reps", int, default=50)
    generators = res.get("generators", _str_list, default=("blin", "bilinear"))
    methods = res.get("methods", _str_list, default=("blin", "bilinear"))
    seed = res.get("seed", int, default=0)
    restarts = res.get("restarts", int, default=3)
    max_iter = res.get("max-iter", int, default=300)
    jobs = res.jobs()
    prefix = res.get("out-prefix", str, required=True)
    allow = bool(res.get("allow-nonconverged", _bool, default=False))
    resolved = res.finish()

    result = convergence_study(
        t_grid=tuple(int(round(t)) for t in t_grid), dims=dims, reps=reps,
        generators=generators, methods=methods, seed=seed, jobs=jobs,
        restarts=restarts, max_iter=max_iter,
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "generator", "method", "rep", "mse_a", "mse_b",
                     "mse_diag", "converged"])
    for row in result.iter_rows():
        writer.writerow([
            row["t"], row["generator"], row["method"], row["rep"],
            format_number(row["mse_a"]), format_number(row["mse_b"]),
            format_number(row["mse_diag"]), int(row["converged"]),
        ])
    atomic_write(f"{prefix}_cells.csv", buf.getvalue())
    payload = {
        "dims": list(result.dims),
        "t_grid": list(result.t_grid),
        "reps": result.reps,
        "dropped": result.dropped,
        "slopes": [dataclasses.asdict(s) for s in result.slopes],
        "config": resolved,
    }
    write_json(f"{prefix}_slopes.json", payload)
    print(f"study-convergence: {len(result.cells)} cells, dropped {result.dropped}; "
          f"wrote {prefix}_cells.csv, {prefix}_slopes.json")
    if result.dropped and not allow:
        print("error: some fits did not converge (pass --allow-nonconverged to accept)",
              file=sys.stderr)
        return 1
    return 0


def cmd_scan(args, config):
    res = Resolver(args, config)
    train_path = res.get("train", str, required=True)
    test_path = res.get("test", str, required=True)
    true_a = res.get("true-a", str, required=True)
    true_b = res.get("true-b", str, required=True)
    fitted_a = res.get("fitted-a", str)
    fitted_b = res.get("fitted-b", str)
    model = res.get("model", str, default="blin")
    method = res.get("method", str, default="exact")
    lags = _norm_lags(res.get("lags", _int_list, default=(1,)), 2)
    points = res.get("xi-points", int, default=21)
    seed = res.get("seed", int, default=0)
    out = res.get("out", str, required=True)
    allow = bool(res.get("allow-nonconverged", _bool, default=False))
    opts = {
        "center": bool(res.get("center", _bool, default=False)),
        "standardize": bool(res.get("standardize", _bool, default=False)),
        "difference": bool(res.get("difference", _bool, default=False)),
        "strict": bool(res.get("strict", _bool, default=False)),
    }
    rank = res.get("rank", _rank)
    eta = res.get("eta", float)
    max_iter = res.get("max-iter", int, default=500)
    lam = res.get("lam", float)
    restarts = res.get("restarts", int, default=10)
    res.finish()

    if points < 2:
        raise UsageError("xi-points must be at least 2")
    train, _ = ingest(train_path, **opts)
    test, _ = ingest(test_path, **opts)
    truth = InfluencePair(read_matrix(true_a), read_matrix(true_b))
    converged = True
    if bool(fitted_a) != bool(fitted_b):
        raise UsageError("supply both --fitted-a and --fitted-b or neither")
    if fitted_a:
        fitted = InfluencePair(read_matrix(fitted_a), read_matrix(fitted_b))
    else:
        est = BLINRegressor(method=_check_method(method), lags=LagSpec(*lags),
                            eta=eta, max_iter=max_iter, lam=lam, rank=rank,
                            restarts=restarts, seed=seed)
        est.fit(train.values)
        fitted = est.fit_.pair
        converged = bool(est.converged_)
    curve = likelihood_line_scan(
        train.values, test.values, truth, fitted,
        xi_grid=np.linspace(0.0, 1.0, points), model=model, lags=LagSpec(*lags),
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["xi", "r2_in", "r2_out"])
    for pt in curve:
        writer.writerow([format_number(pt.xi), format_number(pt.r2_in),
                         format_number(pt.r2_out)])
    atomic_write(out, buf.getvalue())
    print(f"scan: {points} points, endpoints r2_in {curve[0].r2_in:+.4f} -> "
          f"{curve[-1].r2_in:+.4f}; wrote {out}")
    if not converged and not allow:
        print("error: fit did not converge (pass --allow-nonconverged to accept)",
              file=sys.stderr)
        return 1
    return 0


def cmd_rankcheck(args, config):
    res = Resolver(args, config)
    series, _ = _load_series(res)
    if series.values.ndim != 3:
        raise UsageError("rankcheck applies to two-mode series")
    lags = _norm_lags(res.get("lags", _int_list, default=(1,)), 2)
    res.get("seed", int, default=0)  # accepted everywhere; rankcheck is deterministic
    out = res.get("out", str)
    res.finish()

    report = design_rank_check(series.values, LagSpec(*lags))
    payload = {
        "rank": None if report.rank is None else int(report.rank),
        "is_unique": report.is_unique,
        "gap": float(report.gap),
        "n_rows": int(report.n_rows),
        "n_cols": int(report.n_cols),
        "checked": bool(report.checked),
    }
    if out:
        write_json(out, payload)
    print(f"rankcheck: rank {payload['rank']}, unique {payload['is_unique']}, "
          f"checked {payload['checked']}")
    return 0


# =========================================================================
# parser
# =========================================================================

def _add_common(sub):
    sub.add_argument("--seed", type=int, help="random seed (default 0)")
    sub.add_argument("--config", help="key=value file; flags override its entries")
    sub.add_argument("--error-json", help="on failure, write machine-readable error here")


def _add_ingest_opts(sub):
    sub.add_argument("--in", dest="in_", help="long-format data CSV")
    sub.add_argument("--labels", help="JSON file with explicit label order per mode")
    for name in ("center", "standardize", "difference", "strict"):
        sub.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None)


def _add_fit_opts(sub):
    sub.add_argument("--method", help="exact | bcd | sparse | reduced_rank | bilinear")
    sub.add_argument("--lags", type=_int_list, help="comma-separated depths, e.g. 2,1")
    sub.add_argument("--lam", type=float, help="l1 penalty (sparse)")
    sub.add_argument("--rank", type=_rank, help="factor sizes, e.g. 2,2 (reduced_rank)")
    sub.add_argument("--eta", type=float, help="absolute convergence threshold")
    sub.add_argument("--max-iter", type=int)
    sub.add_argument("--restarts", type=int)
    sub.add_argument("--allow-nonconverged", action=argparse.BooleanOptionalAction,
                     default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blin",
        description="Longitudinal influence-network models: simulate, fit, evaluate.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("simulate", help="generate a calibrated synthetic series")
    for name, cast in (("--s", int), ("--l", int), ("--horizon", int),
                       ("--q-sparsity", float), ("--target-r2", float),
                       ("--burn-in", int)):
        sub.add_argument(name, type=cast)
    sub.add_argument("--generator", choices=("blin", "bilinear"))
    sub.add_argument("--pair-seed", type=int,
                     help="seed for the coefficient pair alone (default: --seed), "
                          "so one truth can back several noise draws")
    sub.add_argument("--out", help="output data CSV")
    sub.add_argument("--truth-prefix", help="also write <prefix>_a.csv, <prefix>_b.csv")
    sub.add_argument("--out-spec", help="write the resolved settings as a key=value file")
    _add_common(sub)
    sub.set_defaults(func=cmd_simulate)

    sub = subs.add_parser("fit", help="fit one model, write matrices and a manifest")
    _add_ingest_opts(sub)
    _add_fit_opts(sub)
    sub.add_argument("--out-prefix", help="output path prefix")
    _add_common(sub)
    sub.set_defaults(func=cmd_fit)

    sub = subs.add_parser("cv", help="k-fold cross-validation over methods")
    _add_ingest_opts(sub)
    _add_fit_opts(sub)
    sub.add_argument("--folds", type=int)
    sub.add_argument("--methods", type=_str_list, help="comma list, e.g. exact,sparse")
    sub.add_argument("--out-prefix")
    _add_common(sub)
    sub.set_defaults(func=cmd_cv)

    sub = subs.add_parser("lagselect", help="rank lag choices by the information criterion")
    _add_ingest_opts(sub)
    _add_fit_opts(sub)
    sub.add_argument("--grid", type=_lag_grid,
                     help="semicolon-separated cells, e.g. 1,1;2,1;2,2")
    sub.add_argument("--out")
    _add_common(sub)
    sub.set_defaults(func=cmd_lagselect)

    sub = subs.add_parser("study-convergence", help="estimator error against sample size")
    sub.add_argument("--dims", type=_int_list)
    sub.add_argument("--t-grid", type=_float_list)
    sub.add_argument("--reps", type=int)
    sub.add_argument("--generators", type=_str_list)
    sub.add_argument("--methods", type=_str_list)
    sub.add_argument("--restarts", type=int)
    sub.add_argument("--max-iter", type=int)
    sub.add_argument("--jobs", type=int,
                     help=f"worker processes (default ${JOBS_ENV} or serial)")
    sub.add_argument("--allow-nonconverged", action=argparse.BooleanOptionalAction,
                     default=None)
    sub.add_argument("--out-prefix")
    _add_common(sub)
    sub.set_defaults(func=cmd_study_convergence)

    sub = subs.add_parser("scan", help="R^2 along the true-to-fitted coefficient segment")
    sub.add_argument("--train")
    sub.add_argument("--test")
    sub.add_argument("--true-a")
    sub.add_argument("--true-b")
    sub.add_argument("--fitted-a")
    sub.add_argument("--fitted-b")
    sub.add_argument("--model", choices=("blin", "bilinear"))
    sub.add_argument("--xi-points", type=int)
    _add_fit_opts(sub)
    for name in ("center", "standardize", "difference", "strict"):
        sub.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None)
    sub.add_argument("--out")
    _add_common(sub)
    sub.set_defaults(func=cmd_scan)

    sub = subs.add_parser("rankcheck", help="design rank and uniqueness verdict")
    _add_ingest_opts(sub)
    sub.add_argument("--lags", type=_int_list)
    sub.add_argument("--out")
    _add_common(sub)
    sub.set_defaults(func=cmd_rankcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = read_config(args.config) if args.config else {}
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if getattr(args, "error_json", None):
            write_json(args.error_json, {
                "error": str(exc),
                "type": type(exc).__name__,
                "command": args.command,
            })
        return 1


if __name__ == "__main__":
    sys.exit(main())
