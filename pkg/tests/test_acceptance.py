"""End-to-end acceptance checks.

One test per shipped guarantee, each printing a single PASS line with its
measured quantities and wall time. Budget asserts keep the suite honest
about runtime as well as accuracy.
"""

import time
import warnings

import numpy as np
from scipy.stats import norm

from claimcal import (
    AbsResidualScore,
    BoostConfig,
    ClaimBoostData,
    IntervalLengthAtMost,
    LinearClaimEnsemble,
    MonotoneLoss,
    RegressionBoostData,
    ScaledResidualScore,
    ScoredClaimSet,
    augment_features,
    calibration_curve,
    conditional_boost,
    control_event,
    cutoff_nonrandomized,
    estimate_level_function,
    score_from_loss,
    solve_pinball_qr,
    synth_claims,
    synth_gaussian_alpha,
    synth_hetero,
    tau_gradient,
)
from claimcal.seeding import derive_rng, derive_seed


def report(num, detail, t0, budget=None):
    elapsed = time.perf_counter() - t0
    if budget is not None:
        assert elapsed < budget, f"criterion {num} took {elapsed:.1f}s"
    print(f"[criterion {num:02d}] PASS in {elapsed:.1f}s: {detail}")


def test_01_split_conformal_reduction():
    # intercept-only class, n=99 distinct scores, alpha=0.1: the cutoff
    # is exactly the 90th order statistic
    t0 = time.perf_counter()
    scores = np.random.default_rng(11).permutation(np.arange(1.0, 100.0))
    phi = np.ones((99, 1))
    cut = cutoff_nonrandomized(phi, scores, 0.1, np.array([1.0]), 0.1)
    assert cut.tau == 90.0
    report(1, "intercept-only cutoff == 90th order statistic (exact)",
           t0, budget=1.0)


def test_02_marginal_exactness_randomized():
    # 2000 independent heteroscedastic Gaussian trials at alpha=0.1:
    # randomized control frequency must land in [0.88, 0.92]
    t0 = time.perf_counter()
    hits = 0
    for t in range(2000):
        rng = derive_rng(201, "trial", t)
        x = rng.normal(size=61)
        y = rng.normal(size=61) * (1.0 + np.abs(x))
        phi = np.column_stack([np.ones(61), x])
        ev = control_event(
            phi[:60], y[:60], 0.1, phi[60], 0.1, test_score=float(y[60]),
            seed=derive_seed(202, "u", t),
        )
        hits += bool(ev.covered)
    freq = hits / 2000
    assert 0.88 <= freq <= 0.92
    report(2, f"control frequency {freq:.4f} in [0.88, 0.92]",
           t0, budget=120.0)


def test_03_group_conditional_coverage():
    # two-group design with group-indicator class: each group's frequency
    # over 2000 trials within 0.90 +- 3 binomial SE
    t0 = time.perf_counter()
    stat = {0: [0, 0], 1: [0, 0]}
    for t in range(2000):
        rng = derive_rng(301, "trial", t)
        g = rng.integers(0, 2, size=51)
        s = rng.normal(size=51) * np.where(g == 1, 3.0, 1.0)
        phi = np.column_stack([(g == 0).astype(float), (g == 1).astype(float)])
        ev = control_event(
            phi[:50], s[:50], 0.1, phi[50], 0.1, test_score=float(s[50]),
            seed=derive_seed(302, "u", t),
        )
        stat[int(g[50])][0] += bool(ev.covered)
        stat[int(g[50])][1] += 1
    msgs = []
    for grp, (h, n) in stat.items():
        se = np.sqrt(0.9 * 0.1 / n)
        assert abs(h / n - 0.9) <= 3.0 * se, (grp, h / n, n)
        msgs.append(f"group {grp}: {h / n:.4f} (n={n}, band 0.90+-{3 * se:.4f})")
    report(3, "; ".join(msgs), t0, budget=180.0)


DECILE_EDGES = 1.0 + 0.9 * np.arange(11)   # population deciles of Unif(1, 10)


def decile_indicators(x1):
    edges = DECILE_EDGES.copy()
    edges[0], edges[-1] = -np.inf, np.inf
    idx = np.searchsorted(edges, x1, side="right") - 1
    out = np.zeros((x1.size, 10))
    out[np.arange(x1.size), idx] = 1.0
    return out


def test_04_conditional_boosting_beats_marginal():
    # scale direction boosted for 500 steps at lr 0.001 on 1000 points;
    # conditional calibration per decile of the first input must cover
    # within 0.90 +- 0.05 everywhere, the marginal baseline must
    # undercover the top decile by >= 0.05, and the boosted mean interval
    # length must drop strictly below the initialization's
    t0 = time.perf_counter()
    X_tr, y_tr = synth_hetero(1000, 41)
    X_cal, y_cal = synth_hetero(3000, 42)
    X_ev, y_ev = synth_hetero(2000, 43)

    result = conditional_boost(
        RegressionBoostData(X=X_tr, y=y_tr,
                            features=decile_indicators(X_tr[:, 0])),
        ScaledResidualScore(np.ones(2)), 0.1,
        BoostConfig(learning_rate=1e-3, steps=500, seed=7),
    )

    phi_cal = decile_indicators(X_cal[:, 0])
    dec_ev = decile_indicators(X_ev[:, 0]).argmax(axis=1)

    def conditional_eval(theta):
        # the cutoff depends on the test point only through its decile
        # indicator, so one solve per decile covers every eval point
        fam = ScaledResidualScore(theta)
        s_cal = fam.score(X_cal, y_cal)
        s_ev = fam.score(X_ev, y_ev)
        taus = np.empty(10)
        for k in range(10):
            e_k = np.zeros(10)
            e_k[k] = 1.0
            taus[k] = cutoff_nonrandomized(phi_cal, s_cal, 0.1, e_k, 0.1).tau
        cov = np.array([
            float((s_ev[dec_ev == k] <= taus[k]).mean()) for k in range(10)
        ])
        lengths = 2.0 * taus[dec_ev] * np.abs(X_ev @ np.asarray(theta, float))
        return cov, float(lengths.mean())

    cov_boost, len_boost = conditional_eval(result.theta)
    _, len_init = conditional_eval(np.ones(2))
    assert np.all(np.abs(cov_boost - 0.9) <= 0.05), cov_boost

    init_family = ScaledResidualScore(np.ones(2))
    s_cal0 = np.sort(init_family.score(X_cal, y_cal))
    tau_marg = s_cal0[int(np.ceil(0.9 * (s_cal0.size + 1))) - 1]
    s_ev0 = init_family.score(X_ev, y_ev)
    cov_top = float((s_ev0[dec_ev == 9] <= tau_marg).mean())
    assert 0.9 - cov_top >= 0.05, cov_top
    assert len_boost < len_init, (len_boost, len_init)
    report(
        4,
        f"boosted per-decile coverage within +-{np.abs(cov_boost - 0.9).max():.3f}; "
        f"marginal top-decile undercoverage {0.9 - cov_top:.3f}; "
        f"mean length {len_boost:.1f} < init {len_init:.1f}",
        t0, budget=600.0,
    )


def test_05_cutoff_gradient_finite_differences():
    # 100 random instances with verified basis stability: analytic cutoff
    # gradient vs central differences, relative error <= 1e-4
    t0 = time.perf_counter()
    rng = np.random.default_rng(51)
    checked = 0
    attempts = 0
    worst = 0.0
    h = 1e-6
    while checked < 100 and attempts < 2000:
        attempts += 1
        n = int(rng.integers(25, 60))
        phi = np.column_stack([np.ones(n), rng.normal(size=n)])
        scores = rng.normal(size=n) * 2.0
        jac = rng.normal(size=(n, 2))
        sol = solve_pinball_qr(phi, scores, 0.3)
        x = np.array([1.0, float(rng.normal())])
        g = tau_gradient(sol, phi, jac, x)
        fd = np.empty(2)
        stable = True
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            up = solve_pinball_qr(phi, scores + jac @ e, 0.3)
            dn = solve_pinball_qr(phi, scores - jac @ e, 0.3)
            if not (np.array_equal(up.basis, sol.basis)
                    and np.array_equal(dn.basis, sol.basis)):
                stable = False
                break
            fd[k] = (float(x @ up.beta) - float(x @ dn.beta)) / (2 * h)
        if not stable:
            continue
        rel = np.abs(g - fd).max() / max(1.0, np.abs(fd).max())
        assert rel <= 1e-4, rel
        worst = max(worst, rel)
        checked += 1
    assert checked == 100, f"only {checked} basis-stable instances found"
    report(5, f"100 basis-stable instances, worst relative error {worst:.2e}",
           t0, budget=60.0)


def level_features(X):
    x1 = X[:, 0]
    return np.column_stack([np.ones(len(X)), x1, x1 ** 2, x1 ** 3, X[:, 1]])


def test_06_level_adaptive_length_control():
    # level rule fitted on 2000 points against a 500-length cap at
    # fit_quantile 0.85, calibrated on 1000, 200 test points: the exceed
    # fraction stays within (1 - fit_quantile) + 0.10, and binned realized
    # coverage (exact Gaussian CDF) tracks nominal 1 - alpha(x) within 0.05
    t0 = time.perf_counter()
    family = AbsResidualScore()
    X_fit, y_fit = synth_hetero(2000, 61)
    rule = estimate_level_function(
        level_features(X_fit), family.score(X_fit, y_fit), list(X_fit),
        IntervalLengthAtMost(500.0, family=family),
        fit_quantile=0.85, truncation=(0.1, 0.95), seed=62,
    )
    X_cal, y_cal = synth_hetero(1000, 63)
    X_te, _ = synth_hetero(200, 64)
    a_cal = rule(level_features(X_cal))
    a_te = rule(level_features(X_te))

    edges = np.array([0.05, 0.25, 0.45, 0.7, 0.96])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        phi_all = augment_features(
            np.ones((1200, 1)), np.concatenate([a_cal, a_te]), edges
        )[:, 1:]  # the bins partition every row, so they span the constant
    phi_cal, phi_te = phi_all[:1000], phi_all[1000:]
    s_cal = family.score(X_cal, y_cal)
    taus = np.array([
        cutoff_nonrandomized(phi_cal, s_cal, a_cal, phi_te[j],
                             float(a_te[j])).tau
        for j in range(200)
    ])

    exceed = float((2.0 * taus > 500.0).mean())
    assert exceed <= (1.0 - 0.85) + 0.10, exceed

    realized = 2.0 * norm.cdf(taus / X_te[:, 0] ** 3) - 1.0
    nominal = 1.0 - a_te
    bins = phi_te.argmax(axis=1)
    devs = [
        abs(float(realized[bins == b].mean() - nominal[bins == b].mean()))
        for b in np.unique(bins)
    ]
    assert max(devs) <= 0.05, devs
    report(
        6,
        f"exceed fraction {exceed:.3f} <= 0.25; "
        f"max binned |realized - nominal| {max(devs):.4f} <= 0.05",
        t0, budget=600.0,
    )


def test_07_level_adaptive_calibration_curve():
    # 500 trials on the sigmoid-level Gaussian instance: with the class
    # containing {1, alpha(x)} every nominal bin calibrates within 3 SE;
    # the intercept-only class is strictly worse on weighted error
    t0 = time.perf_counter()
    nominal, full, flat = [], [], []
    for t in range(500):
        X, y, lv = synth_gaussian_alpha(201, derive_seed(701, "data", t))
        phi2 = np.column_stack([np.ones(201), lv])
        phi1 = np.ones((201, 1))
        u_seed = derive_seed(702, "u", t)
        ev2 = control_event(phi2[:200], y[:200], lv[:200], phi2[200],
                            float(lv[200]), test_score=float(y[200]),
                            seed=u_seed)
        ev1 = control_event(phi1[:200], y[:200], lv[:200], phi1[200],
                            float(lv[200]), test_score=float(y[200]),
                            seed=u_seed)
        nominal.append(1.0 - float(lv[200]))
        full.append(float(ev2.covered))
        flat.append(float(ev1.covered))

    edges = np.round(np.arange(0.0, 1.0001, 0.1), 10)

    def binned_error(outcomes):
        curve = calibration_curve(np.array(nominal), np.array(outcomes),
                                  edges)
        dev = np.abs(curve["realized"] - curve["nominal_mean"]).to_numpy()
        se = np.sqrt(
            curve["nominal_mean"] * (1.0 - curve["nominal_mean"])
            / curve["count"]
        ).to_numpy()
        weights = (curve["count"] / curve["count"].sum()).to_numpy()
        return dev, se, float((weights * dev).sum())

    dev2, se2, mad2 = binned_error(full)
    _, _, mad1 = binned_error(flat)
    assert np.all(dev2 <= 3.0 * se2), (dev2, 3.0 * se2)
    assert mad1 > mad2, (mad1, mad2)
    report(
        7,
        f"all bins within 3 SE (worst ratio "
        f"{float((dev2 / np.maximum(se2, 1e-12)).max()):.2f}); weighted "
        f"error {mad2:.4f} vs intercept-only {mad1:.4f}",
        t0, budget=600.0,
    )


def brute_force_score(claims, loss):
    uniq = np.unique(claims.scores)
    candidates = np.concatenate([[uniq[0] - 1.0], uniq])
    controlled = [
        loss.controlled(claims.annotations[claims.scores > t])
        for t in candidates
    ]
    if controlled[0]:
        return float("-inf")
    return float(min(t for t, ok in zip(candidates, controlled) if ok))


def test_08_conformity_score_oracle_equivalence():
    # 1000 random claim sets of <= 12 claims: the conformity score matches
    # exhaustive search exactly, and {S <= tau} <-> {loss controlled}
    # holds at every candidate threshold
    t0 = time.perf_counter()
    rng = np.random.default_rng(81)
    for _ in range(1000):
        m = int(rng.integers(1, 13))
        scores = rng.normal(size=m)
        if rng.uniform() < 0.5:
            scores = np.round(scores, 1)  # force ties
        claims = ScoredClaimSet(scores, rng.integers(0, 2, size=m))
        loss = MonotoneLoss.count_false(float(rng.integers(0, 3)))
        s = score_from_loss(claims, loss)
        assert s == brute_force_score(claims, loss)
        uniq = np.unique(claims.scores)
        for tau in np.concatenate([[uniq[0] - 1.0], uniq]):
            kept = claims.annotations[claims.scores > tau]
            assert (s <= tau) == loss.controlled(kept)
    report(8, "1000 claim sets: exact brute-force match and "
              "threshold/control equivalence", t0, budget=30.0)


def test_09_dual_certificate_suite():
    # 500 random instances: box feasibility, stationarity <= 1e-7 n,
    # complementary slackness within 1e-9, basis size d
    t0 = time.perf_counter()
    rng = np.random.default_rng(91)
    for i in range(500):
        n = int(rng.integers(15, 80))
        d = int(rng.integers(1, 5))
        phi = np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))])
        scores = rng.normal(size=n) * float(rng.uniform(0.5, 5.0))
        if i % 7 == 0:
            levels = float(rng.integers(1, n)) / (n + 1)  # degenerate level
        elif i % 3 == 0:
            levels = rng.uniform(0.05, 0.9, size=n)
        else:
            levels = float(rng.uniform(0.05, 0.6))
        sol = solve_pinball_qr(phi, scores, levels, seed=i)
        lv = np.full(n, levels) if np.isscalar(levels) else levels
        eta = sol.duals
        assert np.all(eta >= -lv - 1e-9) and np.all(eta <= 1.0 - lv + 1e-9)
        assert np.max(np.abs(phi.T @ eta)) <= 1e-7 * n
        resid = scores - phi @ sol.beta
        span = max(1.0, float(np.max(np.abs(scores))))
        pos = resid > 1e-9 * span
        neg = resid < -1e-9 * span
        assert np.allclose(eta[pos], (1.0 - lv)[pos], atol=1e-9)
        assert np.allclose(eta[neg], -lv[neg], atol=1e-9)
        assert len(sol.basis) == phi.shape[1]
        assert np.allclose(resid[sol.basis], 0.0, atol=1e-8 * span)
    report(9, "500 instances: box, stationarity, slackness, basis size",
           t0, budget=60.0)


def test_10_boosted_retention_dominates_uniform():
    # without external pre-scored data, the stand-in check: the boosted
    # ensemble's retention beats the uniform ensemble's on fresh claim
    # mixtures in at least 80% of 50 trials
    t0 = time.perf_counter()
    loss = MonotoneLoss.count_false(0.0)
    alpha = 0.1
    wins = 0
    for t in range(50):
        train = synth_claims(120, derive_seed(1001, "train", t))
        data = ClaimBoostData(
            base_matrices=[train.base_matrix(i) for i in range(len(train))],
            annotations=[train.annotations(i) for i in range(len(train))],
            features=np.column_stack(
                [np.ones(120), train.feature_matrix()[:, 0]]
            ),
            loss=loss,
        )
        result = conditional_boost(
            data, LinearClaimEnsemble(train.score_names), alpha,
            BoostConfig(learning_rate=0.05, steps=60,
                        seed=derive_seed(1002, "boost", t)),
        )
        holdout = synth_claims(240, derive_seed(1003, "eval", t))
        perm = derive_rng(1004, "split", t).permutation(240)
        cal_idx, te_idx = perm[:120], perm[120:]
        retention = {}
        for name, theta in (("boost", result.theta), ("uniform", None)):
            sets = holdout.claim_sets(theta)
            s_cal = np.sort([
                score_from_loss(sets[i], loss) for i in cal_idx
            ])
            tau = s_cal[int(np.ceil((1 - alpha) * (len(cal_idx) + 1))) - 1]
            retention[name] = float(np.mean([
                (sets[i].scores > tau).mean() for i in te_idx
            ]))
        wins += retention["boost"] >= retention["uniform"]
    assert wins >= 40, wins
    report(10, f"boosted retention >= uniform in {wins}/50 trials", t0)
