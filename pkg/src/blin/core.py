"""Core data model for bipartite longitudinal influence networks.

A matrix time series ``Y_t`` (S senders by L receivers) follows

    Y_t = A^T X_t + Z_t B + E_t,
    X_t = sum_{k=1}^{p_a} Y_{t-k},    Z_t = sum_{k=1}^{p_b} Y_{t-k},

where A (S x S) carries influence between sender rows and B (L x L)
influence between receiver columns.  Only the combination a_ii + b_jj of
the diagonals enters the mean: shifting (A, B) to (A + cI, B - cI) leaves
it unchanged whenever X_t = Z_t.  ``canonicalize`` fixes that freedom by
equalizing the two mean diagonals.

Vectorization convention used throughout: column-major (Fortran) vec, with
coefficient vector theta = [vec(A^T); vec(B)].  Per time step the model in
stacked form reads  vec(Y_t) = [X_t^T kron I_S, I_L kron Z_t] theta.

Everything here is immutable after construction and all operations are
pure functions, so values can be shared freely across worker processes.
"""

from __future__ import annotations

import dataclasses

import numpy as np

# element cap for materializing the dense stacked design
DESIGN_BUDGET = 200_000_000


def _locked(arr):
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


# =========================================================================
# types
# =========================================================================

@dataclasses.dataclass(frozen=True)
class TensorSeries:
    """Dense series of arrays with fixed cross-sectional dims.

    ``values`` has shape (horizon, *dims); two modes for the matrix model,
    three or more for the multiway extension.  ``mode_labels`` optionally
    names the coordinates along each mode.
    """

    values: np.ndarray
    mode_labels: tuple | None = None

    def __post_init__(self):
        vals = _locked(self.values)
        if vals.ndim < 3:
            raise ValueError("values must have shape (T, *dims) with at least two modes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("series values must be finite")
        object.__setattr__(self, "values", vals)
        if self.mode_labels is not None:
            labels = tuple(tuple(str(x) for x in mode) for mode in self.mode_labels)
            if tuple(len(mode) for mode in labels) != vals.shape[1:]:
                raise ValueError("mode_labels must have one label per coordinate of each mode")
            object.__setattr__(self, "mode_labels", labels)

    @property
    def horizon(self):
        return self.values.shape[0]

    @property
    def dims(self):
        return self.values.shape[1:]


@dataclasses.dataclass(frozen=True)
class LagSpec:
    """Lag depths per influence mode; p_c only for three-mode series."""

    p_a: int
    p_b: int
    p_c: int | None = None

    def __post_init__(self):
        for name in ("p_a", "p_b", "p_c"):
            v = getattr(self, name)
            if name == "p_c" and v is None:
                continue
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer")

    @property
    def lags(self):
        out = [int(self.p_a), int(self.p_b)]
        if self.p_c is not None:
            out.append(int(self.p_c))
        return tuple(out)

    @property
    def p(self):
        """Largest lag depth; the first p slices of a series are regressor-only."""
        return max(self.lags)

    @property
    def q_lag(self):
        return min(int(self.p_a), int(self.p_b))


@dataclasses.dataclass(frozen=True)
class InfluencePair:
    """Sender network ``a`` (S x S) and receiver network ``b`` (L x L)."""

    a: np.ndarray
    b: np.ndarray
    canonical_shift: float = 0.0

    def __post_init__(self):
        a = _locked(self.a)
        b = _locked(self.b)
        for name, m in (("a", a), ("b", b)):
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} must have finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "canonical_shift", float(self.canonical_shift))

    @property
    def s(self):
        return self.a.shape[0]

    @property
    def l(self):
        return self.b.shape[0]

    @property
    def diag_effect(self):
        """S x L matrix with entry (i, j) = a_ii + b_jj, the identifiable diagonal combination."""
        return np.add.outer(np.diag(self.a), np.diag(self.b))


@dataclasses.dataclass(frozen=True)
class CompanionSystem:
    """First-order companion form of the model dynamics on vec(Y_t)."""

    theta1: np.ndarray
    theta2: np.ndarray
    f: np.ndarray
    spectral_radius: float

    def __post_init__(self):
        object.__setattr__(self, "theta1", _locked(self.theta1))
        object.__setattr__(self, "theta2", _locked(self.theta2))
        object.__setattr__(self, "f", _locked(self.f))
        object.__setattr__(self, "spectral_radius", float(self.spectral_radius))


# =========================================================================
# operations
# =========================================================================

def _values_of(series):
    if isinstance(series, TensorSeries):
        return series.values
    return np.asarray(series, dtype=float)


def lag_sum(series, p, t):
    """Sum of the p slices preceding index t (elementwise).

    t may equal the horizon, which gives the regressor for one-step-ahead
    prediction past the end of the observed series.
    """
    vals = _values_of(series)
    horizon = vals.shape[0]
    if t - p < 0:
        raise IndexError(f"t={t} has fewer than {p} preceding slices; earliest legal t is {p}")
    if t > horizon:
        raise IndexError(f"t={t} is past the horizon {horizon}")
    return vals[t - p:t].sum(axis=0)


def lag_sums(series, p, start=None):
    """Stacked lag sums for t = start..horizon-1; start defaults to p.

    Passing start = max(p_a, p_b) aligns regressors with different lag
    depths on the common set of usable time points.
    """
    vals = _values_of(series)
    horizon = vals.shape[0]
    if start is None:
        start = p
    if start < p:
        raise IndexError(f"start={start} has fewer than {p} preceding slices")
    if horizon <= start:
        raise ValueError(f"horizon {horizon} leaves no usable slices for start={start}")
    out = np.zeros((horizon - start,) + vals.shape[1:])
    for k in range(1, p + 1):
        out += vals[start - k:horizon - k]
    return out


def blin_mean(pair, x, z):
    """Model mean A^T X + Z B; x and z may carry leading batch axes."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape[-2:] != (pair.s, pair.l) or z.shape != x.shape:
        raise ValueError(
            f"x and z must both end in shape ({pair.s}, {pair.l}); got {x.shape} and {z.shape}"
        )
    return pair.a.T @ x + z @ pair.b


def vec_slices(slices):
    """Column-major vec of each slice of a (T, S, L) stack, concatenated."""
    slices = np.asarray(slices, dtype=float)
    return slices.transpose(0, 2, 1).reshape(-1)


def pack_pair(pair):
    """theta = [vec(A^T); vec(B)], column-major."""
    return np.concatenate([pair.a.T.ravel(order="F"), pair.b.ravel(order="F")])


def unpack_pair(theta, s, l, canonical_shift=0.0):
    """Inverse of pack_pair."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (s * s + l * l,):
        raise ValueError(f"theta must have length {s * s + l * l}, got {theta.shape}")
    at = theta[: s * s].reshape(s, s, order="F")
    b = theta[s * s:].reshape(l, l, order="F")
    return InfluencePair(at.T, b, canonical_shift=canonical_shift)


def build_design(series, lags, max_elements=DESIGN_BUDGET):
    """Dense stacked design and response for the vectorized linear model.

    Returns (design, y) with design of shape (S*L*T_eff, S^2 + L^2),
    T_eff = horizon - lags.p, whose row block for time t is
    [X_t^T kron I_S, I_L kron Z_t], and y the stacked column-major vecs of
    the usable responses.  Brute-force path: refuses to materialize more
    than max_elements entries.
    """
    vals = _values_of(series)
    if vals.ndim != 3:
        raise ValueError("build_design expects a two-mode (matrix) series")
    horizon, s, l = vals.shape
    p = lags.p
    if horizon <= p:
        raise ValueError(f"horizon {horizon} must exceed the largest lag {p}")
    teff = horizon - p
    n_rows = s * l * teff
    n_cols = s * s + l * l
    if n_rows * n_cols > max_elements:
        raise ValueError(
            f"dense design of {n_rows}x{n_cols} = {n_rows * n_cols} elements "
            f"exceeds the budget of {max_elements}"
        )
    xs = lag_sums(vals, lags.p_a, start=p)
    zs = lag_sums(vals, lags.p_b, start=p)
    eye_s = np.eye(s)
    eye_l = np.eye(l)
    design = np.empty((teff, s * l, n_cols))
    for i in range(teff):
        design[i, :, : s * s] = np.kron(xs[i].T, eye_s)
        design[i, :, s * s:] = np.kron(eye_l, zs[i])
    return design.reshape(n_rows, n_cols), vec_slices(vals[p:])


def companion(pair, lags):
    """Companion form of the dynamics; two-mode lag specs only.

    The one-step operator on vec(Y_t) is theta1 = I_L kron A^T + B^T kron I_S
    at lags up to q_lag = min(p_a, p_b), and theta2 (the surviving single
    term) at the remaining lags up to p.
    """
    if lags.p_c is not None:
        raise ValueError("companion form is defined for two-mode lag specs")
    s, l = pair.s, pair.l
    n = s * l
    eye_s = np.eye(s)
    eye_l = np.eye(l)
    theta1 = np.kron(eye_l, pair.a.T) + np.kron(pair.b.T, eye_s)
    if lags.p_a > lags.p_b:
        theta2 = np.kron(eye_l, pair.a.T)
    elif lags.p_b > lags.p_a:
        theta2 = np.kron(pair.b.T, eye_s)
    else:
        theta2 = np.zeros((n, n))
    p, q = lags.p, lags.q_lag
    f = np.zeros((n * p, n * p))
    for k in range(p):
        f[:n, k * n:(k + 1) * n] = theta1 if k < q else theta2
    if p > 1:
        idx = np.arange(n * (p - 1))
        f[n + idx, idx] = 1.0
    radius = float(np.max(np.abs(np.linalg.eigvals(f))))
    return CompanionSystem(theta1, theta2, f, radius)


def is_stationary(sys, margin=0.0):
    """True iff the companion spectral radius is below 1 - margin."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return bool(sys.spectral_radius < 1.0 - margin)


def canonicalize(pair):
    """Shift (A, B) to (A + cI, B - cI) with equal mean diagonals.

    c = (mean diag B - mean diag A) / 2.  The diagonal combination
    a_ii + b_jj is unchanged entrywise; fitted values are unchanged
    whenever both regressors use the same lag depth (X_t = Z_t).
    """
    c = float(np.diag(pair.b).mean() - np.diag(pair.a).mean()) / 2.0
    if c == 0.0:
        return pair
    return InfluencePair(
        pair.a + c * np.eye(pair.s),
        pair.b - c * np.eye(pair.l),
        canonical_shift=pair.canonical_shift + c,
    )
