"""K-mode influence models on tensor time series.

The mean of slice Y_t is a sum of single-mode linear actions,

    E[Y_t] = sum_k  X_t^(k) x_k B_k^T,

where X_t^(k) is the sum of the last p_k slices and x_k denotes the mode-k
product.  Mode matricization is column-major: the remaining modes vary in
their original order, fastest first, matching vec conventions elsewhere in
the package.  Coefficients pack as theta = [vec(B_1^T); ...; vec(B_K^T)].

Block coordinate descent cycles the modes in descending order with identity
starts, which makes the two-mode case reproduce the matrix solver iterate
for iterate.
"""

import dataclasses
import functools

import numpy as np

from .core import DESIGN_BUDGET, LagSpec, TensorSeries, lag_sums
from ._cd import solve_path
from .estimators import EstimatorConfig, _gram_solver, _r2_in, default_lambda_grid


@dataclasses.dataclass(frozen=True)
class MultiFit:
    """Fitted K-mode model; diagnostics follow the matrix-fit conventions.

    criterion_trace[0] is the zero-model reference sum ||Y_t||^2; entries
    from index 1 are criteria of successive iterates.
    """

    networks: tuple
    mode_lags: tuple
    iterations: int = 0
    criterion_trace: tuple = ()
    converged: bool = True
    r2_in: float = float("nan")
    method: str = "bcd"
    lam: float | None = None
    nnz: int | None = None

    @property
    def diag_effect(self):
        """K-mode array of summed diagonals, the identified cell effects."""
        diags = [np.diag(b) for b in self.networks]
        return functools.reduce(np.add.outer, diags)


def difference(series):
    """First differences along time; length drops by one."""
    vals = series.values if hasattr(series, "values") else np.asarray(series, dtype=float)
    if vals.shape[0] < 2:
        raise ValueError("differencing needs at least two time slices")
    return TensorSeries(vals[1:] - vals[:-1])


def mode_matricize(array, mode):
    """Unfold a K-mode array into m_mode rows, remaining modes column-major."""
    arr = np.asarray(array)
    if not 0 <= mode < arr.ndim:
        raise ValueError(f"mode {mode} out of range for a {arr.ndim}-mode array")
    return np.moveaxis(arr, mode, 0).reshape(arr.shape[mode], -1, order="F")


def fold(mat, mode, dims):
    """Inverse of mode_matricize for the given full shape."""
    dims = tuple(int(d) for d in dims)
    rest = dims[:mode] + dims[mode + 1:]
    arr = np.asarray(mat).reshape((dims[mode],) + rest, order="F")
    return np.moveaxis(arr, 0, mode)


def _batch_unfold(arr, mode):
    """Per-slice mode matricization of a (T, dims...) stack."""
    t = arr.shape[0]
    m = arr.shape[mode + 1]
    tmp = np.moveaxis(np.moveaxis(arr, mode + 1, 1), 0, -1)  # (m, rest..., T)
    flat = tmp.reshape(m, -1, t, order="F")
    return np.moveaxis(flat, -1, 0)


def _batch_vec(arr):
    """Column-major flattening of every slice of a (T, dims...) stack."""
    t = arr.shape[0]
    return np.moveaxis(arr, 0, -1).reshape(-1, t, order="F").T


def mode_lag_depths(lags, k_modes):
    """Normalize a LagSpec or a per-mode sequence to a K-tuple of depths."""
    if isinstance(lags, LagSpec):
        depths = lags.lags
    else:
        depths = tuple(lags)
    if len(depths) != k_modes:
        raise ValueError(f"need {k_modes} lag depths, got {len(depths)}")
    for d in depths:
        if not isinstance(d, (int, np.integer)) or isinstance(d, bool) or d < 1:
            raise ValueError("every mode lag must be a positive integer")
    return tuple(int(d) for d in depths)


def _series_stack(series, lags, start=None):
    vals = series.values if hasattr(series, "values") else np.asarray(series, dtype=float)
    if vals.ndim < 3:
        raise ValueError("multiway fits expect a (T, m_1, ..., m_K) stack with K >= 2")
    depths = mode_lag_depths(lags, vals.ndim - 1)
    p = max(depths) if start is None else int(start)
    if p < max(depths):
        raise ValueError(f"start {p} must cover the largest lag {max(depths)}")
    if vals.shape[0] <= p:
        raise ValueError(f"horizon {vals.shape[0]} must exceed the first usable slice {p}")
    ys = vals[p:]
    xs = [lag_sums(vals, d, start=p) for d in depths]
    return vals, depths, xs, ys


def _mode_apply(stack, b, mode):
    """Batched mode product with B^T: contracts mode `mode` of each slice."""
    out = np.tensordot(stack, b, axes=([mode + 1], [0]))
    return np.moveaxis(out, -1, mode + 1)


def multiway_mean(networks, xs):
    """Sum of single-mode actions; xs[k] is the (T, dims...) regressor stack."""
    total = None
    for k, b in enumerate(networks):
        term = _mode_apply(xs[k], b, k)
        total = term if total is None else total + term
    return total


def _equalize_groups(networks, depths):
    # diagonal mass moves freely between modes that share a lag depth; pin
    # the representative with equal mean diagonals inside each group
    nets = [b.copy() for b in networks]
    for depth in set(depths):
        group = [k for k, d in enumerate(depths) if d == depth]
        if len(group) < 2:
            continue
        means = [float(np.diag(nets[k]).mean()) for k in group]
        target = sum(means) / len(group)
        for k, mk in zip(group, means):
            nets[k] = nets[k] + (target - mk) * np.eye(nets[k].shape[0])
    return tuple(nets)


def fit_multiblin(series, lags, cfg=None):
    """Mode-cycled block coordinate descent for the K-mode model.

    Each cycle updates every mode once, highest mode first, solving that
    mode's least-squares subproblem in closed form against the residual of
    the others.  Stops when the criterion improvement falls below eta.
    """
    cfg = cfg or EstimatorConfig(method="bcd")
    vals, depths, xs, ys = _series_stack(series, lags)
    k_modes = len(depths)
    sizes = [vals.shape[i + 1] for i in range(k_modes)]
    networks = [np.eye(m) for m in sizes]

    xm = [_batch_unfold(xs[k], k) for k in range(k_modes)]
    solvers = []
    for k in range(k_modes):
        gram = np.einsum("tab,tcb->ac", xm[k], xm[k])
        solvers.append(_gram_solver(gram, f"mode-{k} regressor gram"))

    q0 = float((ys * ys).sum())
    eta = cfg.eta if cfg.eta is not None else 1e-8 * q0
    trace = [q0]
    converged = False
    iterations = 0
    for _ in range(cfg.max_iter):
        iterations += 1
        for k in reversed(range(k_modes)):
            resid = ys - multiway_mean(
                [b if i != k else np.zeros_like(b) for i, b in enumerate(networks)], xs
            )
            rm = _batch_unfold(resid, k)
            cross = np.einsum("tab,tcb->ac", rm, xm[k])
            networks[k] = solvers[k](cross.T)
        resid = ys - multiway_mean(networks, xs)
        trace.append(float((resid * resid).sum()))
        if abs(trace[-1] - trace[-2]) <= eta:
            converged = True
            break
    return MultiFit(
        networks=_equalize_groups(networks, depths),
        mode_lags=depths,
        iterations=iterations,
        criterion_trace=tuple(trace),
        converged=converged,
        r2_in=_r2_in(trace[-1], q0),
        method="bcd",
    )


def multiway_fitted_values(fit, series, lags):
    """In-sample means of a multiway fit on the usable slices."""
    _, _, xs, _ = _series_stack(series, lags)
    return multiway_mean(fit.networks, xs)


def multiway_design(series, lags, max_elements=DESIGN_BUDGET, start=None):
    """Stacked linear design for theta = [vec(B_1^T); ...; vec(B_K^T)].

    Row blocks are ordered by time; within a block, responses are the
    column-major vec of each slice.  Guarded by the element budget.
    start overrides the first usable slice (it must cover the largest
    lag), letting callers align designs across different lag choices.
    """
    vals, depths, xs, ys = _series_stack(series, lags, start=start)
    k_modes = len(depths)
    sizes = [vals.shape[i + 1] for i in range(k_modes)]
    dims = tuple(sizes)
    n_cell = int(np.prod(dims))
    teff = ys.shape[0]
    n_cols = int(sum(m * m for m in sizes))
    if teff * n_cell * n_cols > max_elements:
        raise ValueError(
            f"stacked design with {teff * n_cell} rows x {n_cols} columns "
            f"exceeds the budget of {max_elements} elements"
        )
    design = np.zeros((teff * n_cell, n_cols))
    offset = 0
    for k, m in enumerate(sizes):
        # rows of the mode-k unfolded mean land at these vec positions
        pos = mode_matricize(np.arange(n_cell).reshape(dims, order="F"), k).ravel(order="F")
        xm = _batch_unfold(xs[k], k)
        eye = np.eye(m)
        for t in range(teff):
            design[t * n_cell + pos, offset:offset + m * m] = np.kron(xm[t].T, eye)
        offset += m * m
    return design, _batch_vec(ys).ravel()


def _unpack_networks(theta, sizes):
    nets = []
    offset = 0
    for m in sizes:
        nets.append(theta[offset:offset + m * m].reshape(m, m, order="F").T)
        offset += m * m
    return tuple(nets)


def multiway_sparse_path(series, lags, cfg=None, max_elements=DESIGN_BUDGET, start=None):
    """l1 path over the stacked design; returns one MultiFit per penalty.

    Fits are reported raw (no diagonal equalization): the penalty pins its
    own representative and shifting would change the support.  start aligns
    the usable window across lag choices, as in multiway_design.
    """
    cfg = cfg or EstimatorConfig(method="sparse")
    vals, depths, _, ys = _series_stack(series, lags, start=start)
    sizes = [vals.shape[i + 1] for i in range(len(depths))]
    design, y = multiway_design(series, lags, max_elements=max_elements, start=start)
    g = design.T @ design
    c = design.T @ y
    total = float(y @ y)
    lam_max = float(np.max(np.abs(c))) if c.size else 0.0
    if cfg.lam is not None:
        lams = np.sort(np.atleast_1d(np.asarray(cfg.lam, dtype=float)))[::-1]
    else:
        lams = default_lambda_grid(lam_max)
    thetas, sweeps, ok = solve_path(g, c, lams, max_sweeps=cfg.max_iter * 10)
    fits = []
    for q in range(lams.shape[0]):
        theta = thetas[q]
        ssr = float(max(total - 2.0 * theta @ c + theta @ g @ theta, 0.0))
        fits.append(
            MultiFit(
                networks=_unpack_networks(theta, sizes),
                mode_lags=depths,
                iterations=int(sweeps[q]),
                criterion_trace=(ssr,),
                converged=bool(ok[q]),
                r2_in=_r2_in(ssr, total),
                method="sparse",
                lam=float(lams[q]),
                nnz=int(np.count_nonzero(theta)),
            )
        )
    return tuple(fits)
