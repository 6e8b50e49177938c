"""Choosing a per-point miscoverage level that meets a quality target.

Cutoffs shrink as the level grows, so usefulness criteria (keep enough
claims, keep intervals short) hold on an upper tail of levels. For each
point the target is the smallest grid level from which the criterion holds
at every larger grid level; a pinball regression of those targets on the
feature class, clipped to a truncation range, gives the level function.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_levels, as_matrix, as_vector, check_level
from .conformal import cutoff_nonrandomized, impute_sentinels, predict_interval
from .exceptions import AugmentWarning, InsufficientDataError, ValidationError
from .qr import solve_pinball_qr
from .scores import AbsResidualScore, ScoredClaimSet, filter_claims
from .seeding import derive_rng

DEFAULT_GRID = np.round(np.arange(0.01, 1.00, 0.01), 2)


@dataclass(frozen=True)
class RetentionAtLeast:
    """Quality holds when at least ``fraction`` of the claims survive the
    cutoff. Empty claim sets count as satisfied."""

    fraction: float = 0.7

    def __call__(self, point, tau):
        if not isinstance(point, ScoredClaimSet):
            raise ValidationError("retention criterion expects a ScoredClaimSet")
        if len(point) == 0:
            return True
        kept = int(filter_claims(point, tau).sum())
        return kept / len(point) >= self.fraction


@dataclass(frozen=True)
class IntervalLengthAtMost:
    """Quality holds when the issued interval is no longer than
    ``max_length``. ``point`` is the raw input row for the score family."""

    max_length: float
    family: object = None

    def __call__(self, point, tau):
        fam = self.family if self.family is not None else AbsResidualScore()
        return predict_interval(fam, point, tau).length <= self.max_length


def alpha_star(quality_on_grid, grid=None):
    """Smallest grid level from which quality holds at all larger levels.

    Returns the sentinel 1.0 when quality fails even at the top of the
    grid: the criterion is unreachable for this point, and downstream
    fits keep the sentinel so unreachable points pull the level up
    rather than silently vanishing.
    """
    q = np.asarray(quality_on_grid, dtype=bool)
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("grid must be non-empty")
    if q.shape != grid.shape:
        raise ValidationError("quality_on_grid must align with the grid")
    if not q[-1]:
        return 1.0
    bad = np.flatnonzero(~q)
    return float(grid[0]) if bad.size == 0 else float(grid[bad[-1] + 1])


@dataclass(frozen=True)
class LevelFunction:
    """Linear level rule: clip(features @ coefficients, lo, hi)."""

    coefficients: np.ndarray
    fit_quantile: float
    truncation: tuple

    def __call__(self, features):
        phi = as_matrix(features, "features")
        if phi.shape[1] != self.coefficients.shape[0]:
            raise ValidationError(
                f"expected {self.coefficients.shape[0]} feature columns, "
                f"got {phi.shape[1]}"
            )
        lo, hi = self.truncation
        return np.clip(phi @ self.coefficients, lo, hi)

    def to_dict(self):
        return {
            "coefficients": [float(c) for c in self.coefficients],
            "fit_quantile": self.fit_quantile,
            "truncation": [float(self.truncation[0]), float(self.truncation[1])],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            coef = np.asarray(d["coefficients"], dtype=float)
            fq = float(d["fit_quantile"])
            lo, hi = (float(v) for v in d["truncation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad level function payload: {exc}") from None
        return cls(coefficients=coef, fit_quantile=fq, truncation=(lo, hi))


def _check_truncation(truncation):
    lo, hi = (float(v) for v in truncation)
    check_level(lo, "truncation lo")
    check_level(hi, "truncation hi")
    if lo > hi:
        raise ValidationError("truncation lo must not exceed hi")
    return lo, hi


def estimate_level_function(
    features, scores, points, criterion, *,
    grid=None, fit_quantile=0.85, truncation=(0.1, 0.5), split_fraction=0.5,
    seed=0, exact_sweep=False,
):
    """Fit a level rule from held-out quality targets.

    The rows are split in two: the first fold calibrates cutoffs across
    the level grid, the second supplies target levels. ``points`` holds
    the per-row payloads the criterion inspects (claim sets for retention,
    raw input rows for interval length), aligned with ``features``.

    ``exact_sweep`` recomputes each fold-2 cutoff with the full augmented
    fit instead of reading fitted values off one fold-1 fit per grid
    level; the default matches the fast route.

    Returns
    -------
    LevelFunction
    """
    phi = as_matrix(features, "features")
    n, d = phi.shape
    s = as_vector(scores, "scores", n=n, allow_neg_inf=True)
    if len(points) != n:
        raise ValidationError(f"points has length {len(points)}, expected {n}")
    if n < 5 * d:
        raise InsufficientDataError(
            f"need at least 5 d = {5 * d} rows to fit a level rule, got {n}"
        )
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be increasing with at least 2 levels")
    as_levels(grid, grid.size, "grid")
    fit_quantile = check_level(fit_quantile, "fit_quantile")
    lo, hi = _check_truncation(truncation)

    perm = derive_rng(seed, "level_split").permutation(n)
    n1 = int(round(split_fraction * n))
    n1 = min(max(n1, d), n - 1)
    fold1, fold2 = perm[:n1], perm[n1:]

    taus = np.empty((grid.size, fold2.size))
    if exact_sweep:
        for g, alpha in enumerate(grid):
            for j, i in enumerate(fold2):
                taus[g, j] = cutoff_nonrandomized(
                    phi[fold1], s[fold1], alpha, phi[i], alpha, seed=seed
                ).tau
    else:
        s1 = impute_sentinels(s[fold1])
        for g, alpha in enumerate(grid):
            beta = solve_pinball_qr(phi[fold1], s1, alpha, seed=seed).beta
            taus[g] = phi[fold2] @ beta

    # sentinel targets (criterion unreachable, alpha_star = 1) stay in
    # the fit; dropping them would bias the fitted level down
    targets = np.empty(fold2.size)
    for j, i in enumerate(fold2):
        quality = np.fromiter(
            (criterion(points[i], taus[g, j]) for g in range(grid.size)),
            dtype=bool, count=grid.size,
        )
        targets[j] = alpha_star(quality, grid)

    fit = solve_pinball_qr(
        phi[fold2], targets, 1.0 - fit_quantile, seed=seed
    )
    return LevelFunction(
        coefficients=fit.beta, fit_quantile=fit_quantile, truncation=(lo, hi)
    )


def augment_features(base, alpha_values, bin_edges, *, groups=None,
                     smooth_center=None):
    """Extend a design matrix with level-bin indicator columns.

    Bins are half-open ``[e_k, e_{k+1})`` with the last bin closed. Bins
    nobody occupies are dropped with a warning. With ``groups`` (a 0/1
    membership matrix), the appended columns are the bin x group products
    instead of the bins alone. ``smooth_center`` appends the single column
    ``(alpha - center)^2``.
    """
    base = as_matrix(base, "base")
    n = base.shape[0]
    a = as_vector(alpha_values, "alpha_values", n=n)
    edges = as_vector(np.asarray(bin_edges, dtype=float), "bin_edges")
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin_edges must be increasing with >= 2 entries")

    cols, labels = [], []
    for k in range(edges.size - 1):
        in_bin = (a >= edges[k]) & (
            (a <= edges[k + 1]) if k == edges.size - 2 else (a < edges[k + 1])
        )
        cols.append(in_bin.astype(float))
        labels.append(f"[{edges[k]:g}, {edges[k + 1]:g}{']' if k == edges.size - 2 else ')'}")

    if groups is not None:
        g = as_matrix(groups, "groups")
        if g.shape[0] != n:
            raise ValidationError("groups must align with base rows")
        prods, plabels = [], []
        for c, lab in zip(cols, labels):
            for gi in range(g.shape[1]):
                prods.append(c * g[:, gi])
                plabels.append(f"{lab} x group{gi}")
        cols, labels = prods, plabels

    kept, dropped = [], []
    for c, lab in zip(cols, labels):
        (kept if c.any() else dropped).append((c, lab))
    if dropped:
        names = ", ".join(lab for _, lab in dropped)
        warnings.warn(f"dropping empty level bins: {names}", AugmentWarning)
    out = [base] + [c[:, None] for c, _ in kept]
    if smooth_center is not None:
        out.append(((a - float(smooth_center)) ** 2)[:, None])
    return np.hstack(out)


class LevelFunctionEstimator(BaseEstimator):
    """Estimator facade over ``estimate_level_function``.

    ``fit(features, scores, points)`` learns the rule; ``predict`` maps
    feature rows to clipped levels.
    """

    def __init__(self, criterion=None, grid=None, fit_quantile=0.85,
                 truncation=(0.1, 0.5), split_fraction=0.5, seed=0,
                 exact_sweep=False):
        self.criterion = criterion
        self.grid = grid
        self.fit_quantile = fit_quantile
        self.truncation = truncation
        self.split_fraction = split_fraction
        self.seed = seed
        self.exact_sweep = exact_sweep

    def fit(self, features, scores, points):
        criterion = self.criterion if self.criterion is not None else RetentionAtLeast()
        self.level_function_ = estimate_level_function(
            features, scores, points, criterion,
            grid=self.grid, fit_quantile=self.fit_quantile,
            truncation=self.truncation, split_fraction=self.split_fraction,
            seed=self.seed, exact_sweep=self.exact_sweep,
        )
        self.n_features_in_ = as_matrix(features).shape[1]
        return self

    def predict(self, features):
        return self.level_function_(features)
