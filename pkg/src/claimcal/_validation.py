"""Array checking helpers used at public entry points."""

import numpy as np

from .exceptions import ValidationError


def as_matrix(x, name="features"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2d, got ndim={arr.ndim}")
    if arr.shape[0] == 0:
        raise ValidationError(f"{name} has no rows")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def as_vector(x, name="scores", n=None, allow_neg_inf=False):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1d, got ndim={arr.ndim}")
    if n is not None and arr.shape[0] != n:
        raise ValidationError(
            f"{name} has length {arr.shape[0]}, expected {n}"
        )
    bad = ~np.isfinite(arr)
    if allow_neg_inf:
        bad &= ~np.isneginf(arr)
    if np.any(bad):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def as_levels(x, n, name="levels"):
    """Quantile levels, scalar or per-row, each strictly inside (0, 1)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    arr = as_vector(arr, name=name, n=n)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValidationError(f"{name} must lie strictly in (0, 1)")
    return arr


def check_level(alpha, name="alpha"):
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0) or not np.isfinite(alpha):
        raise ValidationError(f"{name} must lie strictly in (0, 1), got {alpha}")
    return alpha


def score_span(scores):
    """Spread of the finite scores; positive fallback for constant input."""
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        return 1.0
    span = float(finite.max() - finite.min())
    if span > 0.0:
        return span
    return max(1.0, abs(float(finite.max())))
