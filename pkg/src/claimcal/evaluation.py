"""Synthetic generators, trial planning, and coverage reporting."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.special import expit

from ._validation import as_vector
from .data import Claim, ClaimDataset, ClaimRecord
from .exceptions import ValidationError
from .scores import ScoredClaimSet, filter_claims
from .seeding import derive_rng

CURVE_COLUMNS = ["bin_lo", "bin_hi", "nominal_mean", "realized", "count", "stderr"]
GROUP_COLUMNS = ["group", "nominal_mean", "realized", "count", "stderr"]


@dataclass(frozen=True)
class TrialPlan:
    """How many repetitions to run and at what sizes, with labeled
    per-trial randomness."""

    n_trials: int
    n_calib: int
    n_test: int = 1
    seed: int = 0

    def rng(self, label, trial):
        return derive_rng(self.seed, label, trial)


def synth_hetero(n, seed=0):
    """Heteroskedastic regression data: noise scale grows as the cube of
    the first input; the second input is irrelevant."""
    rng = derive_rng(seed, "synth_hetero")
    x1 = rng.uniform(1.0, 10.0, n)
    x2 = rng.uniform(5.0, 10.0, n)
    y = rng.normal(0.0, x1 ** 3)
    return np.column_stack([x1, x2]), y


def synth_gaussian_alpha(n, seed=0):
    """Standard bivariate Gaussian with an input-dependent level.

    Returns (x, y, levels) with ``levels = sigmoid(x)``; the score of a
    point is ``y`` itself, so coverage against a cutoff has the closed
    form ``NormalCDF(cutoff)``.
    """
    rng = derive_rng(seed, "synth_gaussian_alpha")
    x = rng.normal(size=n)
    y = rng.normal(size=n)
    return x.reshape(-1, 1), y, expit(x)


_GROUP_SPEC = (
    ("solo", 0.087), ("short", 0.309), ("medium", 0.395),
    ("long", 0.193), ("xlong", 0.016),
)
_SCORE_NOISE = {"lm": 0.55, "retrieval": 0.8, "judge": 0.35}


def synth_claims(n_records, seed=0):
    """Claim records with base scores of unequal quality.

    Each record carries a latent difficulty; harder records have more
    false claims. Three base scores track the truth annotation with
    different noise levels and miscalibrated shifts, so a tuned
    combination beats the uniform one. Group labels follow a fixed
    unbalanced distribution.
    """
    rng = derive_rng(seed, "synth_claims")
    names = sorted(_SCORE_NOISE)
    labels = [g for g, _ in _GROUP_SPEC]
    probs = np.array([p for _, p in _GROUP_SPEC])
    records = []
    for i in range(n_records):
        group = labels[int(rng.choice(len(labels), p=probs))]
        difficulty = float(rng.uniform(0.0, 1.0))
        k = int(rng.integers(3, 13))
        p_true = float(np.clip(0.92 - 0.55 * difficulty, 0.05, 0.95))
        truth = (rng.uniform(size=k) < p_true).astype(int)
        claims = []
        for j in range(k):
            scores = {}
            for name in names:
                noise = _SCORE_NOISE[name]
                shift = 0.3 if name == "retrieval" else 0.0
                scores[name] = float(
                    truth[j] + shift + rng.normal(0.0, noise)
                )
            claims.append(Claim(scores=scores, annotation=int(truth[j])))
        records.append(
            ClaimRecord(
                id=f"r{i:05d}", group=group,
                features={"difficulty": difficulty, "n_claims": float(k)},
                claims=tuple(claims),
            )
        )
    return ClaimDataset(records)


def _binom_stderr(p, count):
    return np.sqrt(np.maximum(p * (1.0 - p), 0.0) / count)


def calibration_curve(nominal, outcomes, bin_edges=None):
    """Realized vs nominal coverage, binned by nominal level.

    Bins are half-open with the last closed; empty bins are omitted.
    Returns a DataFrame with columns bin_lo, bin_hi, nominal_mean,
    realized, count, stderr.
    """
    nominal = as_vector(np.asarray(nominal, dtype=float), "nominal")
    outcomes = np.asarray(outcomes, dtype=float).ravel()
    if outcomes.shape != nominal.shape:
        raise ValidationError("outcomes must align with nominal")
    edges = (
        np.round(np.arange(0.5, 1.0001, 0.05), 10) if bin_edges is None
        else np.asarray(bin_edges, dtype=float)
    )
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin_edges must be increasing with >= 2 entries")
    rows = []
    for k in range(edges.size - 1):
        last = k == edges.size - 2
        mask = (nominal >= edges[k]) & (
            (nominal <= edges[k + 1]) if last else (nominal < edges[k + 1])
        )
        count = int(mask.sum())
        if count == 0:
            continue
        realized = float(outcomes[mask].mean())
        rows.append({
            "bin_lo": float(edges[k]), "bin_hi": float(edges[k + 1]),
            "nominal_mean": float(nominal[mask].mean()),
            "realized": realized, "count": count,
            "stderr": float(_binom_stderr(realized, count)),
        })
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def coverage_by_group(outcomes, labels, nominal=None):
    """Realized coverage per group label.

    Returns a DataFrame with columns group, nominal_mean, realized,
    count, stderr, ordered by first appearance.
    """
    outcomes = np.asarray(outcomes, dtype=float).ravel()
    labels = list(labels)
    if len(labels) != outcomes.size:
        raise ValidationError("labels must align with outcomes")
    if any(lab is None or (isinstance(lab, float) and np.isnan(lab))
           for lab in labels):
        raise ValidationError("every outcome needs a group label")
    if nominal is None:
        nominal = np.full(outcomes.size, np.nan)
    else:
        nominal = as_vector(np.asarray(nominal, dtype=float), "nominal",
                            n=outcomes.size)
    order, seen = [], set()
    for lab in labels:
        if lab not in seen:
            seen.add(lab)
            order.append(lab)
    arr = np.array([str(lab) for lab in labels], dtype=object)
    rows = []
    for lab in order:
        mask = arr == str(lab)
        count = int(mask.sum())
        realized = float(outcomes[mask].mean())
        nom = nominal[mask]
        rows.append({
            "group": str(lab),
            "nominal_mean": float(np.nanmean(nom)) if np.isfinite(nom).any() else float("nan"),
            "realized": realized, "count": count,
            "stderr": float(_binom_stderr(realized, count)),
        })
    return pd.DataFrame(rows, columns=GROUP_COLUMNS)


@dataclass(frozen=True)
class RetentionSummary:
    fractions: np.ndarray
    mean_retention: float
    n_empty: int
    n_records: int


def retention_stats(claim_sets, cutoffs):
    """Fraction of claims surviving each record's cutoff.

    Empty claim sets get NaN fractions and are excluded from the mean.
    """
    cutoffs = np.asarray(cutoffs, dtype=float).ravel()
    if len(claim_sets) != cutoffs.size:
        raise ValidationError("cutoffs must align with claim_sets")
    fractions = np.empty(cutoffs.size)
    n_empty = 0
    for i, (cs, tau) in enumerate(zip(claim_sets, cutoffs)):
        if not isinstance(cs, ScoredClaimSet):
            raise ValidationError("claim_sets must hold ScoredClaimSet objects")
        if len(cs) == 0:
            fractions[i] = np.nan
            n_empty += 1
        else:
            fractions[i] = float(filter_claims(cs, tau).mean())
    kept = fractions[np.isfinite(fractions)]
    mean = float(kept.mean()) if kept.size else float("nan")
    return RetentionSummary(
        fractions=fractions, mean_retention=mean, n_empty=n_empty,
        n_records=cutoffs.size,
    )


class WeightedCoverage(NamedTuple):
    realized: float
    nominal: float


def shift_weighted_coverage(outcomes, nominal, weights):
    """Coverage reweighted for a shifted test distribution.

    ``weights`` are (unnormalized) likelihood ratios on the evaluation
    points; returns the weighted realized coverage next to the weighted
    nominal level.
    """
    outcomes = np.asarray(outcomes, dtype=float).ravel()
    nominal = as_vector(np.asarray(nominal, dtype=float), "nominal",
                        n=outcomes.size)
    w = as_vector(np.asarray(weights, dtype=float), "weights", n=outcomes.size)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValidationError("weights must be nonnegative with positive mass")
    w = w / w.sum()
    return WeightedCoverage(
        realized=float(w @ outcomes), nominal=float(w @ nominal)
    )
