"""Conditional cutoffs by augmenting a pinball regression with the test point.

The cutoff at a test point is the largest score the calibration fit would
still cover there. It is found by imputing a large value at the test row,
solving the augmented regression, and reading the fitted value: above the
cutoff the fit no longer moves, so one solve pins it once the imputed
value clears the fitted value.

Randomization draws a dual weight threshold ``u`` and returns the largest
test score whose dual weight stays at or below ``u``; the dual weight is a
non-decreasing step function of the test score, so bisection locates the
jump. The event "test score <= randomized cutoff" can also be decided
directly from the test score's own dual weight with a single solve, which
is how the Monte Carlo helpers avoid the bisection loop.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_levels, as_matrix, as_vector, check_level, score_span
from .exceptions import UnboundedCutoffWarning, ValidationError
from .qr import solve_pinball_qr
from .seeding import derive_rng

_PIN_TOL = 1e-9  # relative margin for "imputed value cleared the fit"
_BISECT_TOL = 1e-8  # times the score span
_MAX_ESCALATIONS = 60


@dataclass(frozen=True)
class Cutoff:
    """A calibrated cutoff at one test point.

    ``tau`` may be ``+inf`` (cutoff unbounded over the class) or ``-inf``
    (randomization rejected every score). ``eta_test`` is the dual weight
    assigned to the test row at the returned cutoff; ``u`` is the
    randomization draw (None when not randomized).
    """

    tau: float
    randomized: bool
    eta_test: float
    u: float
    alpha_test: float


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    @classmethod
    def empty(cls):
        return cls(np.nan, np.nan)

    @property
    def is_empty(self):
        return not (self.lower <= self.upper)

    @property
    def length(self):
        return 0.0 if self.is_empty else float(self.upper - self.lower)

    def contains(self, y):
        return (not self.is_empty) and self.lower <= y <= self.upper


class ControlEvent(NamedTuple):
    covered: bool
    eta_test: float
    u: float


def impute_sentinels(scores):
    """Map ``-inf`` sentinel scores below the finite range.

    Pinball fits only compare scores against fitted values, so any value
    below the running minimum is equivalent; this keeps the solver finite.
    """
    s = np.asarray(scores, dtype=float)
    mask = np.isneginf(s)
    if not mask.any():
        return s
    finite = s[~mask]
    if finite.size == 0:
        return np.full_like(s, -1.0)
    out = s.copy()
    out[mask] = finite.min() - score_span(finite) - 1.0
    return out


def _check_cutoff_inputs(calib_features, calib_scores, calib_levels, test_features):
    phi = as_matrix(calib_features, "calib_features")
    n, d = phi.shape
    s = as_vector(calib_scores, "calib_scores", n=n, allow_neg_inf=True)
    a = as_levels(calib_levels, n, "calib_levels")
    x = np.asarray(test_features, dtype=float).ravel()
    if x.shape != (d,):
        raise ValidationError(
            f"test_features must have shape ({d},), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValidationError("test_features contains non-finite entries")
    return phi, impute_sentinels(s), a, x


def augmented_solve(
    calib_features, calib_scores, calib_levels, test_features, alpha_test,
    test_score, *, seed=0,
):
    """Pinball fit on calibration rows plus the test row at ``test_score``.

    The test row is last; its dual weight is ``solution.duals[-1]``.
    """
    phi, s, a, x = _check_cutoff_inputs(
        calib_features, calib_scores, calib_levels, test_features
    )
    alpha_test = check_level(alpha_test, "alpha_test")
    return solve_pinball_qr(
        np.vstack([phi, x]),
        np.append(s, float(test_score)),
        np.append(a, alpha_test),
        seed=seed,
    )


def imputed_dual_weight(
    calib_features, calib_scores, calib_levels, test_features, alpha_test,
    test_score, *, seed=0,
):
    """Dual weight of the test row when its score is ``test_score``."""
    sol = augmented_solve(
        calib_features, calib_scores, calib_levels, test_features,
        alpha_test, test_score, seed=seed,
    )
    return float(sol.duals[-1])


def cutoff_nonrandomized(
    calib_features, calib_scores, calib_levels, test_features, alpha_test,
    *, seed=0, _with_solution=False,
):
    """Largest score still covered by the augmented fit at the test point.

    Imputes ``max + span`` at the test row and escalates geometrically
    until the imputed value clears the fitted value; the fitted value is
    then the cutoff. If escalation never clears (the class can chase the
    test row indefinitely), warns and returns ``tau = +inf``.
    """
    phi, s, a, x = _check_cutoff_inputs(
        calib_features, calib_scores, calib_levels, test_features
    )
    alpha_test = check_level(alpha_test, "alpha_test")
    span = score_span(s)
    top = float(s.max())
    phi_aug = np.vstack([phi, x])
    a_aug = np.append(a, alpha_test)
    for k in range(_MAX_ESCALATIONS):
        m = top + span * 2.0 ** k
        sol = solve_pinball_qr(phi_aug, np.append(s, m), a_aug, seed=seed)
        tau = float(x @ sol.beta)
        if m - tau > _PIN_TOL * max(span, abs(m), 1.0):
            cut = Cutoff(
                tau=tau, randomized=False, eta_test=float(sol.duals[-1]),
                u=None, alpha_test=alpha_test,
            )
            return (cut, sol) if _with_solution else cut
    warnings.warn(
        "imputed-value escalation failed; cutoff is unbounded over this class",
        UnboundedCutoffWarning,
    )
    cut = Cutoff(
        tau=np.inf, randomized=False, eta_test=np.nan, u=None,
        alpha_test=alpha_test,
    )
    return (cut, None) if _with_solution else cut


def cutoff_randomized(
    calib_features, calib_scores, calib_levels, test_features, alpha_test,
    *, seed=0, u=None,
):
    """Randomized cutoff restoring exact-coverage behavior.

    Draws ``u`` uniformly on ``[-alpha_test, 1 - alpha_test)`` (or uses the
    injected value) and bisects for the largest test score whose dual
    weight stays at or below ``u``. The returned ``tau`` is the feasible
    end of the final bracket, within ``1e-8 * span`` of the jump.
    """
    alpha_test = check_level(alpha_test, "alpha_test")
    if u is None:
        u = float(
            derive_rng(seed, "cutoff_u").uniform(-alpha_test, 1.0 - alpha_test)
        )
    else:
        u = float(u)
        if not (-alpha_test <= u <= 1.0 - alpha_test):
            raise ValidationError(
                f"u must lie in [-alpha_test, 1 - alpha_test], got {u}"
            )
    base = cutoff_nonrandomized(
        calib_features, calib_scores, calib_levels, test_features,
        alpha_test, seed=seed,
    )
    if u >= 1.0 - alpha_test or not np.isfinite(base.tau):
        return Cutoff(
            tau=base.tau, randomized=True, eta_test=base.eta_test, u=u,
            alpha_test=alpha_test,
        )

    phi, s, a, x = _check_cutoff_inputs(
        calib_features, calib_scores, calib_levels, test_features
    )
    span = score_span(s)
    tol = _BISECT_TOL * span

    def eta_at(score):
        return imputed_dual_weight(
            phi, s, a, x, alpha_test, score, seed=seed
        )

    hi = base.tau + max(1e-6 * span, 1e-12 * abs(base.tau))
    lo = min(float(s.min()), base.tau) - span
    eta_lo = eta_at(lo)
    shrink = span
    while eta_lo > u and shrink < 2.0 ** 40 * span:
        shrink *= 2.0
        lo -= shrink
        eta_lo = eta_at(lo)
    if eta_lo > u:
        warnings.warn(
            "no score with dual weight below u was found; returning -inf",
            UnboundedCutoffWarning,
        )
        return Cutoff(
            tau=-np.inf, randomized=True, eta_test=np.nan, u=u,
            alpha_test=alpha_test,
        )
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        eta_mid = eta_at(mid)
        if eta_mid <= u:
            lo, eta_lo = mid, eta_mid
        else:
            hi = mid
    return Cutoff(
        tau=lo, randomized=True, eta_test=eta_lo, u=u, alpha_test=alpha_test,
    )


def control_event(
    calib_features, calib_scores, calib_levels, test_features, alpha_test,
    test_score, *, seed=0, u=None,
):
    """Decide ``test_score <= randomized cutoff`` with one solve.

    The event holds exactly when the test score's own dual weight is at or
    below the randomization draw, so no bisection is needed. Returns the
    event, the dual weight, and the draw used.
    """
    alpha_test = check_level(alpha_test, "alpha_test")
    if u is None:
        u = float(
            derive_rng(seed, "cutoff_u").uniform(-alpha_test, 1.0 - alpha_test)
        )
    if np.isneginf(test_score):
        return ControlEvent(True, -alpha_test, u)
    eta = imputed_dual_weight(
        calib_features, calib_scores, calib_levels, test_features,
        alpha_test, float(test_score), seed=seed,
    )
    return ControlEvent(bool(eta <= u), eta, u)


def predict_interval(family, x, tau):
    """Convert a cutoff into an interval for the given score family.

    Negative or ``-inf`` cutoffs give the empty interval. A zero score
    scale raises rather than silently returning a point.
    """
    tau = float(tau)
    if tau < 0 or np.isneginf(tau):
        return Interval.empty()
    half = family.halfwidth(np.asarray(x, dtype=float).ravel(), tau)
    return Interval(-half, half)


class CutoffCalibrator(BaseEstimator):
    """Estimator facade over the cutoff machinery.

    Parameters
    ----------
    feature_map : callable or None
        Maps raw inputs (n, p) to the design matrix (n, d); None fits an
        intercept-only class.
    level : float or callable
        Miscoverage level. A callable receives the raw inputs and returns
        per-row levels; calibration rows and test rows both go through it.
    randomize : bool
        Randomize predicted cutoffs (exact coverage) or not (conservative).
    seed : int
        Master seed; each predicted row draws an independent substream.
    """

    def __init__(self, feature_map=None, level=0.1, randomize=True, seed=0):
        self.feature_map = feature_map
        self.level = level
        self.randomize = randomize
        self.seed = seed

    def _design(self, X):
        X = as_matrix(X, "X")
        if self.feature_map is None:
            return X, np.ones((X.shape[0], 1))
        return X, as_matrix(self.feature_map(X), "feature_map(X)")

    def _levels(self, X, n):
        if callable(self.level):
            return as_levels(self.level(X), n, "level(X)")
        return as_levels(check_level(self.level, "level"), n, "level")

    def fit(self, X, scores):
        X, design = self._design(X)
        self.design_ = design
        self.scores_ = as_vector(
            scores, "scores", n=design.shape[0], allow_neg_inf=True
        )
        self.levels_ = self._levels(X, design.shape[0])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_cutoffs(self, X):
        """Per-row Cutoff objects for new points."""
        X, design = self._design(X)
        alphas = self._levels(X, design.shape[0])
        out = []
        for i, (row, alpha) in enumerate(zip(design, alphas)):
            if self.randomize:
                u = float(
                    derive_rng(self.seed, "calibrator_u", i).uniform(
                        -alpha, 1.0 - alpha
                    )
                )
                out.append(
                    cutoff_randomized(
                        self.design_, self.scores_, self.levels_, row, alpha,
                        seed=self.seed, u=u,
                    )
                )
            else:
                out.append(
                    cutoff_nonrandomized(
                        self.design_, self.scores_, self.levels_, row, alpha,
                        seed=self.seed,
                    )
                )
        return out

    def predict(self, X):
        """Cutoff values only, as an array."""
        return np.array([c.tau for c in self.predict_cutoffs(X)])
