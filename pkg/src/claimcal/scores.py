"""Claim sets, budgeted set losses, and parametric conformity scores.

A claim set is a batch of candidate statements, each with a confidence
score and a 0/1 annotation. Filtering keeps the claims scoring strictly
above a cutoff; the conformity score of a whole set is the smallest cutoff
whose filtered output stays within a loss budget.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._validation import as_matrix
from .exceptions import DegenerateScoreError, ValidationError

# scale floor used when training through a learned denominator
_SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class ScoredClaimSet:
    """Claims from one record: per-claim scores with truth annotations."""

    scores: np.ndarray
    annotations: np.ndarray
    texts: tuple = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).ravel()
        if s.size and not np.all(np.isfinite(s)):
            raise ValidationError("claim scores must be finite")
        a = np.asarray(self.annotations).ravel()
        if a.shape != s.shape:
            raise ValidationError(
                f"annotations shape {a.shape} != scores shape {s.shape}"
            )
        if a.size and not np.all(np.isin(a, (0, 1))):
            raise ValidationError("annotations must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "annotations", a.astype(int))
        if self.texts is not None:
            t = tuple(self.texts)
            if len(t) != s.size:
                raise ValidationError("texts length mismatch")
            object.__setattr__(self, "texts", t)

    def __len__(self):
        return self.scores.size


class MonotoneLoss:
    """Set-level loss with a budget; must not increase when claims are
    dropped.

    ``fn`` maps the annotations of the kept claims to a loss value. The
    canonical instance counts kept false claims.
    """

    def __init__(self, fn, budget, name="custom"):
        if not callable(fn):
            raise ValidationError("loss fn must be callable")
        if not np.isfinite(budget) or budget < 0:
            raise ValidationError("loss budget must be finite and >= 0")
        self.fn = fn
        self.budget = float(budget)
        self.name = name

    @classmethod
    def count_false(cls, budget=0):
        """Loss = number of kept claims annotated false."""
        return cls(lambda kept: float(np.sum(kept == 0)), budget, "count_false")

    def value(self, kept_annotations):
        return float(self.fn(np.asarray(kept_annotations)))

    def controlled(self, kept_annotations):
        return self.value(kept_annotations) <= self.budget


def filter_claims(claims, tau):
    """Boolean keep-mask: claims scoring strictly above ``tau``."""
    scores = claims.scores if isinstance(claims, ScoredClaimSet) else claims
    scores = np.asarray(scores, dtype=float)
    return scores > tau


def score_from_loss(claims, loss):
    """Smallest cutoff whose filtered claim set stays within budget.

    Evaluates the loss over the nested chain of kept sets induced by the
    distinct claim scores, top down. Returns ``-inf`` when even keeping
    every claim is within budget (the set never needs filtering). The
    result never exceeds the maximum claim score, since filtering at that
    score keeps nothing. The chain doubles as a monotonicity audit: a loss
    value that drops as the kept set grows breaks the contract and raises.
    """
    if not isinstance(claims, ScoredClaimSet):
        raise ValidationError("score_from_loss expects a ScoredClaimSet")
    if len(claims) == 0:
        return float("-inf")
    uniq = np.unique(claims.scores)  # ascending
    # chain[k] = loss of the kept set at the k-th candidate from the top;
    # chain starts at the empty set and ends at the full set
    chain = [
        loss.value(claims.annotations[claims.scores > u]) for u in uniq[::-1]
    ]
    chain.append(loss.value(claims.annotations))
    if chain[0] != 0.0:
        raise ValidationError("loss of the empty claim set must be 0")
    for prev, cur in zip(chain, chain[1:]):
        if cur < prev - 1e-9 * max(1.0, abs(prev)):
            raise ValidationError(
                "loss decreased as the kept set grew; fn is not monotone"
            )
    if chain[-1] <= loss.budget:
        return float("-inf")
    best = float(uniq[-1])
    for u, v in zip(uniq[::-1], chain):
        if v <= loss.budget:
            best = float(u)
    return best


class AbsResidualScore:
    """Score ``|y|``; cutoffs convert to the symmetric interval
    ``[-tau, tau]``."""

    kind = "abs_residual"
    theta = None

    def score(self, x, y):
        return np.abs(np.asarray(y, dtype=float))

    def halfwidth(self, x, tau):
        return float(tau)


class ScaledResidualScore:
    """Score ``|y| / |x . theta|`` with a learnable scale direction.

    Cutoff ``tau`` converts to the interval ``+- tau |x . theta|``. A zero
    scale at prediction time is an error rather than a silent zero-width
    interval; during training the denominator is floored instead so
    gradients stay finite.
    """

    kind = "scaled_residual"

    def __init__(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size == 0 or not np.all(np.isfinite(theta)):
            raise ValidationError("theta must be a finite non-empty vector")
        self.theta = theta

    def score(self, x, y, theta=None):
        th = self.theta if theta is None else theta
        scale = np.abs(as_matrix(x, "x") @ th)
        return np.abs(np.asarray(y, dtype=float)) / np.maximum(scale, _SCALE_FLOOR)

    def score_jacobian(self, x, y, theta=None):
        """d score / d theta, rows aligned with ``x``; zero where the
        scale floor is active."""
        th = self.theta if theta is None else theta
        X = as_matrix(x, "x")
        z = X @ th
        live = np.abs(z) > _SCALE_FLOOR
        denom = np.where(live, z * z, 1.0)
        coef = np.where(live, -np.abs(np.asarray(y, dtype=float)) * np.sign(z) / denom, 0.0)
        return coef[:, None] * X

    def halfwidth(self, x, tau):
        scale = float(abs(np.asarray(x, dtype=float).ravel() @ self.theta))
        if scale == 0.0:
            raise DegenerateScoreError(
                "score scale x . theta is zero at this point"
            )
        return float(tau) * scale


class LinearClaimEnsemble:
    """Claim confidence as a learned combination of base scores.

    ``theta`` weights the base score columns; defaults to uniform. The
    conformity score of a record is ``score_from_loss`` of the combined
    claim scores, and its gradient is the base-score row of the claim
    attaining that score (zero for the ``-inf`` sentinel).
    """

    kind = "linear_claim_ensemble"

    def __init__(self, base_score_names, theta=None):
        names = tuple(base_score_names)
        if not names:
            raise ValidationError("need at least one base score name")
        self.base_score_names = names
        if theta is None:
            theta = np.full(len(names), 1.0 / len(names))
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != len(names) or not np.all(np.isfinite(theta)):
            raise ValidationError("theta must be finite with one weight per base score")
        self.theta = theta

    def claim_scores(self, base_matrix, theta=None):
        th = self.theta if theta is None else theta
        return as_matrix(base_matrix, "base scores") @ th

    def record_score(self, base_matrix, annotations, loss, theta=None):
        p = self.claim_scores(base_matrix, theta)
        return score_from_loss(ScoredClaimSet(p, annotations), loss)

    def record_score_and_grad(self, base_matrix, annotations, loss, theta=None):
        base = as_matrix(base_matrix, "base scores")
        p = self.claim_scores(base, theta)
        s = score_from_loss(ScoredClaimSet(p, annotations), loss)
        if np.isneginf(s):
            return s, np.zeros(base.shape[1])
        j = int(np.flatnonzero(p == s)[0])
        return s, base[j].copy()


def smoothed_keep(claim_scores, tau, temperature):
    """Sigmoid relaxation of the strict keep indicator ``score > tau``."""
    if temperature <= 0:
        raise ValidationError("sigmoid temperature must be positive")
    return expit((np.asarray(claim_scores, dtype=float) - tau) / temperature)
