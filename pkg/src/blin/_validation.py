"""Input checks shared by the estimator wrappers."""

import numpy as np

from .core import LagSpec


def check_series_array(y, min_horizon=2):
    """Coerce a series-like input to a finite (T, S, L) float array."""
    vals = y.values if hasattr(y, "values") else y
    vals = np.asarray(vals, dtype=float)
    if vals.ndim != 3:
        raise ValueError(f"expected a (T, S, L) series, got shape {vals.shape}")
    if vals.shape[0] < min_horizon:
        raise ValueError(f"need at least {min_horizon} time slices, got {vals.shape[0]}")
    if not np.isfinite(vals).all():
        raise ValueError("series contains non-finite values")
    return vals


def check_lags(lags):
    """Normalize an int, a (p_a, p_b) pair, or a LagSpec to a LagSpec."""
    if isinstance(lags, LagSpec):
        return lags
    if isinstance(lags, (int, np.integer)) and not isinstance(lags, bool):
        return LagSpec(int(lags), int(lags))
    try:
        p_a, p_b = lags
    except (TypeError, ValueError) as exc:
        raise ValueError("lags must be a LagSpec, an int, or a (p_a, p_b) pair") from exc
    return LagSpec(int(p_a), int(p_b))


def check_rank(rank):
    """Normalize an int or a (rank_a, rank_b) pair; None passes through."""
    if rank is None:
        return None, None
    if isinstance(rank, (int, np.integer)) and not isinstance(rank, bool):
        return int(rank), int(rank)
    try:
        ra, rb = rank
    except (TypeError, ValueError) as exc:
        raise ValueError("rank must be an int or a (rank_a, rank_b) pair") from exc
    return int(ra), int(rb)
