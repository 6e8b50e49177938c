"""Pinball-loss quantile regression over a linear feature class.

The fit solves

    min_beta  sum_i  l_{a_i}(s_i - phi_i . beta),
    l_a(r) = (1 - a) max(r, 0) + a max(-r, 0),

by handing scipy's HiGHS dual simplex the dual linear program

    max_eta  s . eta   s.t.  Phi^T eta = 0,  -a_i <= eta_i <= 1 - a_i,

whose optimal vertex carries everything downstream code needs: the basic
rows (exactly ``d`` of them, strictly inside their box interval) are the
interpolated points, and ``beta`` is recovered by solving the square system
on those rows. Non-basic duals sit exactly on a box bound, which encodes
the sign of each residual.

Per-row levels ``a_i`` are allowed; a constant level gives ordinary
quantile regression where the minimizer tracks the (1 - a) quantile.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ._validation import as_levels, as_matrix, as_vector, score_span
from .exceptions import DegenerateDesignError, SingularBasisError, ValidationError

# interior / residual classification slack; the dual box always has width 1
_BOX_TOL = 1e-8
_DUAL_TOL = 1e-9


@dataclass(frozen=True)
class QRSolution:
    """Vertex solution of a pinball regression.

    Attributes
    ----------
    beta : ndarray of shape (d,)
        Fitted coefficients.
    duals : ndarray of shape (n,)
        Dual weights, one per row. Rows with positive residual carry
        ``1 - a_i``, rows with negative residual carry ``-a_i``, basic rows
        carry an interior value.
    basis : ndarray of shape (d,)
        Sorted indices of the interpolated rows; ``beta`` solves
        ``features[basis] @ beta == scores[basis]`` exactly.
    objective : float
        Total pinball loss at ``beta`` against the caller's scores.
    """

    beta: np.ndarray
    duals: np.ndarray
    basis: np.ndarray
    objective: float


def pinball_loss(residuals, levels):
    """Elementwise pinball loss ``(1 - a) r+ + a r-``."""
    r = np.asarray(residuals, dtype=float)
    a = np.asarray(levels, dtype=float)
    return np.where(r >= 0.0, (1.0 - a) * r, -a * r)


def dither(scores, magnitude, seed):
    """Return a copy of ``scores`` with uniform noise in ``+-magnitude``.

    Deterministic given ``seed``. Used to break ties that would otherwise
    leave the regression without a clean vertex.
    """
    scores = np.asarray(scores, dtype=float)
    if magnitude <= 0:
        raise ValidationError("dither magnitude must be positive")
    rng = np.random.default_rng(seed)
    return scores + rng.uniform(-magnitude, magnitude, size=scores.shape)


def basis_interpolator(features, scores):
    """Coefficients interpolating ``scores`` on a square feature block.

    Raises
    ------
    SingularBasisError
        If the block is not square or not invertible.
    """
    block = np.asarray(features, dtype=float)
    vals = np.asarray(scores, dtype=float)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise SingularBasisError(
            f"basis block must be square, got shape {block.shape}"
        )
    try:
        beta = np.linalg.solve(block, vals)
    except np.linalg.LinAlgError as exc:
        raise SingularBasisError(str(exc)) from None
    if not np.all(np.isfinite(beta)):
        raise SingularBasisError("basis solve produced non-finite coefficients")
    return beta


def solve_pinball_qr(features, scores, levels, *, seed=0):
    """Fit pinball regression and return the vertex bookkeeping.

    Parameters
    ----------
    features : array-like of shape (n, d)
        Design matrix, full column rank required.
    scores : array-like of shape (n,)
        Finite response values.
    levels : float or array-like of shape (n,)
        Pinball level per row, each strictly inside (0, 1). A constant
        level ``a`` fits the (1 - a) conditional quantile.
    seed : int
        Seeds the tie-breaking dither when the first solve is degenerate.

    Returns
    -------
    QRSolution

    Raises
    ------
    DegenerateDesignError
        Rank-deficient design, or no clean vertex even after dithering.
    """
    phi = as_matrix(features)
    n, d = phi.shape
    if d < 1:
        raise ValidationError("features must have at least one column")
    if n < d:
        raise ValidationError(f"need at least d={d} rows, got {n}")
    s = as_vector(scores, "scores", n=n)
    a = as_levels(levels, n)
    if np.linalg.matrix_rank(phi) < d:
        raise DegenerateDesignError(
            f"design matrix has rank < {d}; drop or merge columns"
        )

    span = score_span(s)
    work = s
    # first pass undithered, then escalate the jitter by one decade per retry
    for attempt in range(5):
        if attempt > 0:
            work = dither(s, 1e-9 * span * 10.0 ** (attempt - 1), seed + attempt)
        sol = _vertex_solution(phi, work, a, span)
        if sol is None:
            sol = _nudged_solution(phi, work, a, span)
        if sol is not None:
            beta, duals, basis = sol
            obj = float(np.sum(pinball_loss(s - phi @ beta, a)))
            return QRSolution(beta=beta, duals=duals, basis=basis, objective=obj)
    raise DegenerateDesignError(
        "no clean vertex found after dithering; scores are too degenerate"
    )


def _solve_dual(phi, s, lo, hi):
    res = linprog(
        -s,
        A_eq=phi.T,
        b_eq=np.zeros(phi.shape[1]),
        bounds=np.column_stack([lo, hi]),
        method="highs-ds",
    )
    return res.x if res.status == 0 else None


def _assemble(phi, s, a, basis, snap_hi_pref, span):
    """Build and certify a solution from a basis and bound preferences.

    Non-basic duals go to the bound their residual sign demands (ties
    follow ``snap_hi_pref``); basic duals are re-derived so stationarity
    holds exactly. Returns None unless the full optimality certificate
    (box feasibility, stationarity, complementary slackness) checks out,
    so a wrong basis can never be returned.
    """
    lo = -a
    hi = 1.0 - a
    try:
        beta = basis_interpolator(phi[basis], s[basis])
    except SingularBasisError:
        return None
    resid = s - phi @ beta
    resid_tol = _DUAL_TOL * max(1.0, span)
    duals = np.empty(s.shape)
    nonbasic = np.ones(s.shape, dtype=bool)
    nonbasic[basis] = False
    pos = nonbasic & (resid > resid_tol)
    neg = nonbasic & (resid < -resid_tol)
    flat = nonbasic & ~pos & ~neg
    duals[pos] = hi[pos]
    duals[neg] = lo[neg]
    if np.any(flat):
        idx = np.flatnonzero(flat)
        duals[idx] = np.where(snap_hi_pref[idx], hi[idx], lo[idx])
    rhs = -phi[nonbasic].T @ duals[nonbasic] if np.any(nonbasic) else np.zeros(phi.shape[1])
    try:
        duals[basis] = np.linalg.solve(phi[basis].T, rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(duals[basis] < lo[basis] - _DUAL_TOL) or np.any(
        duals[basis] > hi[basis] + _DUAL_TOL
    ):
        return None
    return beta, duals, np.sort(basis)


def _vertex_solution(phi, s, a, span):
    """One LP solve plus vertex extraction; None means retry."""
    n, d = phi.shape
    lo = -a
    hi = 1.0 - a
    eta = _solve_dual(phi, s, lo, hi)
    if eta is None:
        return None
    interior = (eta - lo > _BOX_TOL) & (hi - eta > _BOX_TOL)
    if int(interior.sum()) != d:
        return None
    basis = np.flatnonzero(interior)
    # check the solver's bound pattern against the residual signs below
    resid_tol = _DUAL_TOL * max(1.0, span)
    snap_hi = np.abs(eta - hi) <= np.abs(eta - lo)
    sol = _assemble(phi, s, a, basis, snap_hi, span)
    if sol is None:
        return None
    resid = s - phi @ sol[0]
    nonbasic = ~interior
    bad_pos = nonbasic & (resid > resid_tol) & (np.abs(eta - hi) > 1e-6)
    bad_neg = nonbasic & (resid < -resid_tol) & (np.abs(eta - lo) > 1e-6)
    if bad_pos.any() or bad_neg.any():
        return None
    return sol


def _nudged_solution(phi, s, a, span):
    """Break a fully-bound (degenerate) optimum by nudging levels up.

    When the optimal fit is a face rather than a point, raising every
    level slightly selects the face's lower end. The nudged solve only
    identifies the vertex structure: the returned solution is assembled
    and certified against the original levels, so it is exactly optimal
    for the caller's problem or rejected.
    """
    d = phi.shape[1]
    for eps in (1e-7, 1e-6, 1e-5):
        a2 = a + eps * (1.0 - a)
        lo2 = -a2
        hi2 = 1.0 - a2
        eta2 = _solve_dual(phi, s, lo2, hi2)
        if eta2 is None:
            continue
        interior = (eta2 - lo2 > _BOX_TOL) & (hi2 - eta2 > _BOX_TOL)
        if int(interior.sum()) != d:
            continue
        snap_hi = np.abs(eta2 - hi2) <= np.abs(eta2 - lo2)
        sol = _assemble(phi, s, a, np.flatnonzero(interior), snap_hi, span)
        if sol is not None:
            return sol
    return None
