"""Cyclic coordinate descent for the l1-penalized stacked linear model.

Works on gram-form sufficient statistics g = D'D and c = D'y, minimizing
(1/2) theta' g theta - c' theta + lam * ||theta||_1 over a descending
grid of penalties with warm starts.  The gradient vector g @ theta is
maintained incrementally, so a full sweep costs O(n * nnz-moves) and the
path never touches the row dimension.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return deco


@njit(cache=True)
def _cd_kernel(g, c, lams, max_sweeps, tol):
    """Solve the path; returns (thetas, sweeps used, converged flags).

    tol bounds the largest per-coordinate gradient change in a sweep,
    so it lives on the same scale as c and the KKT residuals.
    """
    n = c.shape[0]
    n_lam = lams.shape[0]
    thetas = np.zeros((n_lam, n))
    sweeps = np.zeros(n_lam, dtype=np.int64)
    ok = np.zeros(n_lam, dtype=np.bool_)
    theta = np.zeros(n)
    grad = np.zeros(n)  # g @ theta
    for q in range(n_lam):
        lam = lams[q]
        used = 0
        conv = False
        for _sweep in range(max_sweeps):
            delta = 0.0
            for j in range(n):
                gjj = g[j, j]
                if gjj <= 0.0:
                    continue  # all-zero column; optimum keeps theta_j at 0
                old = theta[j]
                rho = c[j] - grad[j] + gjj * old
                if rho > lam:
                    new = (rho - lam) / gjj
                elif rho < -lam:
                    new = (rho + lam) / gjj
                else:
                    new = 0.0
                d = new - old
                if d != 0.0:
                    theta[j] = new
                    for i in range(n):
                        grad[i] += g[i, j] * d
                    move = abs(d) * gjj
                    if move > delta:
                        delta = move
            used += 1
            if delta <= tol:
                conv = True
                break
        thetas[q] = theta
        sweeps[q] = used
        ok[q] = conv
    return thetas, sweeps, ok


def solve_path(g, c, lams, max_sweeps=2000, tol=None):
    """Run the kernel with a gradient-scale default tolerance."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    lams = np.ascontiguousarray(lams, dtype=np.float64)
    if tol is None:
        scale = float(np.max(np.abs(c))) if c.size else 0.0
        tol = 1e-9 * max(scale, 1e-300)
    return _cd_kernel(g, c, lams, int(max_sweeps), float(tol))
