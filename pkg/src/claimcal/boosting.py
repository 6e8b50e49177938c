"""Tuning score parameters through the cutoff itself.

The cutoff at a test point is the fitted value of an augmented pinball
regression, and near the optimum that fitted value is a linear function of
the basis rows' scores. Differentiating through the basis gives exact
cutoff gradients with respect to score parameters, so a smoothed objective
(retained claims, interval length) can be pushed through Adam.

Each step re-splits the data: fold 1 fits the regression that plays the
calibration role, fold 2 supplies the objective. The default gradient
reads every fold-2 cutoff off the single fold-1 fit (one solve per step);
``use_full_basis`` recomputes each cutoff with its own augmented fit.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from ._validation import as_levels, as_matrix, as_vector, check_level
from .conformal import cutoff_nonrandomized, impute_sentinels
from .exceptions import (
    InsufficientDataError,
    SingularBasisError,
    ValidationError,
)
from .qr import solve_pinball_qr
from .scores import LinearClaimEnsemble, MonotoneLoss, ScaledResidualScore
from .seeding import derive_rng


@dataclass(frozen=True)
class BoostConfig:
    learning_rate: float = 1e-3
    steps: int = 500
    sigmoid_temperature: float = 1.0
    split_fraction: float = 0.5
    seed: int = 0
    use_full_basis: bool = False


@dataclass(frozen=True)
class BoostResult:
    """Optimized parameters plus the per-step objective.

    ``objective_path`` records the value being optimized before each
    update: mean interval length (minimized) for regression data, mean
    smoothed retained fraction (maximized) for claim data.
    """

    theta: np.ndarray
    objective_path: np.ndarray


@dataclass(frozen=True)
class RegressionBoostData:
    """Raw inputs and targets plus the cutoff design matrix."""

    X: np.ndarray
    y: np.ndarray
    features: np.ndarray


@dataclass(frozen=True)
class ClaimBoostData:
    """Per-record base score matrices and annotations plus the cutoff
    design matrix and the budgeted loss defining conformity scores."""

    base_matrices: list
    annotations: list
    features: np.ndarray
    loss: MonotoneLoss


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, p):
        return cls(m=np.zeros(p), v=np.zeros(p), t=0)


def adam_step(theta, grad, state, learning_rate, *, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One Adam update; returns (new_theta, new_state)."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != theta.shape:
        raise ValidationError("gradient shape must match theta")
    if not np.all(np.isfinite(grad)):
        raise ValidationError(
            f"non-finite gradient at step {state.t + 1}: {grad}"
        )
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    new_theta = theta - learning_rate * mhat / (np.sqrt(vhat) + eps)
    return new_theta, AdamState(m=m, v=v, t=t)


def tau_gradient(solution, features, score_jacobian, test_features):
    """Gradient of fitted cutoffs with respect to score parameters.

    ``solution`` is the pinball fit on ``features``; ``score_jacobian``
    holds d(score_i)/d(theta) rows aligned with ``features``. Only the
    basis rows enter: the fitted value at a test row is linear in the
    basis scores while the basis stays optimal.
    """
    phi = as_matrix(features, "features")
    jac = as_matrix(score_jacobian, "score_jacobian")
    if jac.shape[0] != phi.shape[0]:
        raise ValidationError("score_jacobian must align with features rows")
    basis = solution.basis
    try:
        w = np.linalg.solve(phi[basis], jac[basis])
    except np.linalg.LinAlgError as exc:
        raise SingularBasisError(str(exc)) from None
    x = np.atleast_2d(np.asarray(test_features, dtype=float))
    out = x @ w
    return out[0] if np.asarray(test_features).ndim == 1 else out


def _scores_and_jacobian(data, family, theta):
    if isinstance(data, RegressionBoostData):
        if not isinstance(family, ScaledResidualScore):
            raise ValidationError("regression boosting expects ScaledResidualScore")
        s = family.score(data.X, data.y, theta)
        jac = family.score_jacobian(data.X, data.y, theta)
        return s, jac
    if isinstance(data, ClaimBoostData):
        if not isinstance(family, LinearClaimEnsemble):
            raise ValidationError("claim boosting expects LinearClaimEnsemble")
        n = len(data.base_matrices)
        s = np.empty(n)
        jac = np.empty((n, theta.size))
        for i in range(n):
            s[i], jac[i] = family.record_score_and_grad(
                data.base_matrices[i], data.annotations[i], data.loss,
                theta=theta,
            )
        return s, jac
    raise ValidationError(f"unsupported boost data type {type(data).__name__}")


def _objective_terms(data, family, theta, fold2, taus, dtaus, temperature):
    """(display value, loss gradient) for the fold-2 objective at theta."""
    if isinstance(data, RegressionBoostData):
        X2 = as_matrix(data.X, "X")[fold2]
        z = X2 @ theta
        live = taus > 0
        lengths = np.where(live, 2.0 * taus * np.abs(z), 0.0)
        grad = np.zeros_like(theta)
        if live.any():
            grad = (
                2.0 * dtaus[live].T @ np.abs(z[live])
                + 2.0 * (taus[live] * np.sign(z[live])) @ X2[live]
            ) / taus.size
        return float(lengths.mean()), grad

    total, keep_sum = 0, 0.0
    grad = np.zeros_like(theta)
    for j, i in enumerate(fold2):
        base = data.base_matrices[i]
        k = base.shape[0]
        if k == 0 or not np.isfinite(taus[j]):
            continue
        p = family.claim_scores(base, theta)
        z = (p - taus[j]) / temperature
        r = expit(z)
        w = r * (1.0 - r) / temperature
        keep_sum += float(r.sum())
        total += k
        # maximizing retention: loss gradient is the negative of d(keep)/d(theta)
        grad -= w @ (base - dtaus[j])
    if total == 0:
        return float("nan"), grad
    return keep_sum / total, grad / total


def _resolve_folds(n, d, split_fraction, rng):
    n1 = int(round(split_fraction * n))
    n1 = min(max(n1, d), n - 1)
    if n1 < d or n - n1 < 1:
        raise InsufficientDataError(
            f"cannot split {n} rows into a d={d} fit fold and a scoring fold"
        )
    perm = rng.permutation(n)
    return perm[:n1], perm[n1:]


def conditional_boost(data, family, levels, config=BoostConfig()):
    """Optimize score parameters against per-point cutoffs.

    ``levels`` is the miscoverage level, scalar or one per row. Training
    uses non-randomized cutoffs; randomize downstream at prediction time.
    """
    phi = as_matrix(data.features, "features")
    n, d = phi.shape
    a = as_levels(levels, n)
    theta = np.asarray(family.theta, dtype=float).copy()
    rng = derive_rng(config.seed, "boost_split")
    state = AdamState.zeros(theta.size)
    path = np.empty(config.steps)
    for step in range(config.steps):
        fold1, fold2 = _resolve_folds(n, d, config.split_fraction, rng)
        s, jac = _scores_and_jacobian(data, family, theta)
        s1 = impute_sentinels(s[fold1])
        if config.use_full_basis:
            taus = np.empty(fold2.size)
            dtaus = np.empty((fold2.size, theta.size))
            jac_aug = np.vstack([jac[fold1], np.zeros(theta.size)])
            for j, i in enumerate(fold2):
                cut, sol = cutoff_nonrandomized(
                    phi[fold1], s1, a[fold1], phi[i], a[i],
                    seed=config.seed + step, _with_solution=True,
                )
                taus[j] = cut.tau
                if sol is None or not np.isfinite(cut.tau):
                    dtaus[j] = 0.0
                    continue
                dtaus[j] = tau_gradient(
                    sol, np.vstack([phi[fold1], phi[i]]), jac_aug, phi[i]
                )
        else:
            sol = solve_pinball_qr(
                phi[fold1], s1, a[fold1], seed=config.seed + step
            )
            taus = phi[fold2] @ sol.beta
            dtaus = tau_gradient(sol, phi[fold1], jac[fold1], phi[fold2])
        value, grad = _objective_terms(
            data, family, theta, fold2, taus, dtaus,
            config.sigmoid_temperature,
        )
        path[step] = value
        theta, state = adam_step(theta, grad, state, config.learning_rate)
    return BoostResult(theta=theta, objective_path=path)


def marginal_boost(data, family, alpha, config=BoostConfig()):
    """Baseline: boost against the split order-statistic cutoff.

    Fold 1 supplies the ``ceil((1 - alpha)(n1 + 1))``-th smallest score as
    a single shared cutoff; the gradient flows through that one score.
    """
    phi = as_matrix(data.features, "features")
    n, d = phi.shape
    alpha = check_level(alpha)
    theta = np.asarray(family.theta, dtype=float).copy()
    rng = derive_rng(config.seed, "boost_split")
    state = AdamState.zeros(theta.size)
    path = np.empty(config.steps)
    for step in range(config.steps):
        fold1, fold2 = _resolve_folds(n, 1, config.split_fraction, rng)
        k = int(np.ceil((1.0 - alpha) * (fold1.size + 1)))
        if k > fold1.size:
            raise InsufficientDataError(
                f"order statistic {k} exceeds fold size {fold1.size}; "
                "lower alpha or add rows"
            )
        s, jac = _scores_and_jacobian(data, family, theta)
        s1 = impute_sentinels(s[fold1])
        order = np.argsort(s1, kind="stable")
        pick = fold1[order[k - 1]]
        tau = float(s1[order[k - 1]])
        taus = np.full(fold2.size, tau)
        dtaus = np.tile(jac[pick], (fold2.size, 1))
        value, grad = _objective_terms(
            data, family, theta, fold2, taus, dtaus,
            config.sigmoid_temperature,
        )
        path[step] = value
        theta, state = adam_step(theta, grad, state, config.learning_rate)
    return BoostResult(theta=theta, objective_path=path)


class ConditionalBooster(BaseEstimator):
    """Estimator facade: learn a scaled-residual score on (X, y).

    After ``fit``, ``family_`` holds the optimized score family and
    ``objective_path_`` the training trajectory.
    """

    def __init__(self, feature_map=None, level=0.1, learning_rate=1e-3,
                 steps=500, sigmoid_temperature=1.0, split_fraction=0.5,
                 seed=0, use_full_basis=False, init_theta=None):
        self.feature_map = feature_map
        self.level = level
        self.learning_rate = learning_rate
        self.steps = steps
        self.sigmoid_temperature = sigmoid_temperature
        self.split_fraction = split_fraction
        self.seed = seed
        self.use_full_basis = use_full_basis
        self.init_theta = init_theta

    def fit(self, X, y):
        X = as_matrix(X, "X")
        design = (
            np.ones((X.shape[0], 1)) if self.feature_map is None
            else as_matrix(self.feature_map(X), "feature_map(X)")
        )
        levels = (
            self.level(X) if callable(self.level)
            else check_level(self.level, "level")
        )
        theta0 = (
            np.ones(X.shape[1]) if self.init_theta is None
            else np.asarray(self.init_theta, dtype=float)
        )
        result = conditional_boost(
            RegressionBoostData(X=X, y=as_vector(y, "y", n=X.shape[0]),
                                features=design),
            ScaledResidualScore(theta0),
            levels,
            BoostConfig(
                learning_rate=self.learning_rate, steps=self.steps,
                sigmoid_temperature=self.sigmoid_temperature,
                split_fraction=self.split_fraction, seed=self.seed,
                use_full_basis=self.use_full_basis,
            ),
        )
        self.theta_ = result.theta
        self.objective_path_ = result.objective_path
        self.family_ = ScaledResidualScore(result.theta)
        self.n_features_in_ = X.shape[1]
        return self
