"""Command-line pipeline.

Commands share one JSON config plus ``--seed`` and ``--out``; stages of a
pipeline point at the same output directory so later commands find the
artifacts of earlier ones (cutoffs.csv, theta.json, level_function.json,
splits.json). Every command writes run_meta.json with the config hash and
seed it ran under.

    claimcal --command synth --config cfg.json --out runs/demo
    claimcal --command calibrate --config cfg.json --out runs/demo
    claimcal --command evaluate --config cfg.json --out runs/demo
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._validation import check_level
from .boosting import (
    BoostConfig,
    ClaimBoostData,
    RegressionBoostData,
    conditional_boost,
)
from .conformal import cutoff_nonrandomized, cutoff_randomized, predict_interval
from .data import atomic_write_text, dump_claims, load_claims
from .evaluation import (
    calibration_curve,
    coverage_by_group,
    retention_stats,
    synth_claims,
    synth_gaussian_alpha,
    synth_hetero,
)
from .exceptions import ClaimcalError, ValidationError
from .levels import (
    IntervalLengthAtMost,
    LevelFunction,
    RetentionAtLeast,
    estimate_level_function,
)
from .scores import (
    AbsResidualScore,
    LinearClaimEnsemble,
    MonotoneLoss,
    ScaledResidualScore,
    score_from_loss,
)
from .seeding import derive_rng, derive_seed

VERSION = "0.1.0"
COMMANDS = ("synth", "calibrate", "filter", "boost", "estimate-alpha", "evaluate")

_DEFAULTS = {
    "task": "claims",
    "data": {"kind": "synth_claims", "n": 400, "path": None},
    "level": {"alpha": 0.1, "function_path": None, "column": None},
    "loss": {"kind": "count_false", "budget": 0},
    "criterion": {"kind": "retention_at_least", "value": 0.7},
    "features": {"kind": "columns", "poly_degree": 1, "include_level": False},
    "score": {"kind": "ensemble", "theta_path": None},
    "level_fit": {
        "grid": None, "fit_quantile": 0.85, "truncation": [0.1, 0.5],
        "split_fraction": 0.5, "exact_sweep": False,
    },
    "boost": {
        "learning_rate": 1e-3, "steps": 500, "sigmoid_temperature": 1.0,
        "split_fraction": 0.5, "use_full_basis": False,
    },
    "split": {"calib_fraction": 0.5},
    "randomize": True,
    "report_bins": None,
}


@dataclass
class RunConfig:
    task: str
    data: dict
    level: dict
    loss: dict
    criterion: dict
    features: dict
    score: dict
    level_fit: dict
    boost: dict
    split: dict
    randomize: bool
    report_bins: list
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(obj) - set(_DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        merged = {}
        for key, default in _DEFAULTS.items():
            value = obj.get(key, default)
            if isinstance(default, dict):
                if not isinstance(value, dict):
                    raise ValidationError(f"config key {key!r} must be an object")
                extra = set(value) - set(default)
                if extra:
                    raise ValidationError(
                        f"unknown keys in config {key!r}: {sorted(extra)}"
                    )
                merged[key] = {**default, **value}
            else:
                merged[key] = value
        if merged["task"] not in ("claims", "regression"):
            raise ValidationError("task must be 'claims' or 'regression'")
        return cls(**merged, raw=obj)


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_run_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc.msg}") from None
    return RunConfig.from_dict(obj)


def write_reports(frames, out_dir):
    """Write named DataFrames as CSV files; returns {name: path}."""
    paths = {}
    for name, frame in frames.items():
        path = os.path.join(out_dir, f"{name}.csv")
        atomic_write_text(path, frame.to_csv(index=False))
        paths[name] = path
    return paths


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- data


def _load_regression(config, seed):
    """(X, y, per-row levels or None, feature column names)."""
    kind = config.data["kind"]
    levels = None
    if kind == "synth_hetero":
        X, y = synth_hetero(int(config.data["n"]), seed)
        names = ["x1", "x2"]
    elif kind == "synth_gaussian_alpha":
        X, y, levels = synth_gaussian_alpha(int(config.data["n"]), seed)
        names = ["x"]
    elif kind == "csv":
        frame = pd.read_csv(config.data["path"])
        if "y" not in frame.columns:
            raise ValidationError("regression csv needs a 'y' column")
        names = [c for c in frame.columns if c not in ("y", "alpha")]
        if not names:
            raise ValidationError("regression csv needs feature columns")
        X = frame[names].to_numpy(dtype=float)
        y = frame["y"].to_numpy(dtype=float)
        if config.level["column"]:
            col = config.level["column"]
            if col not in frame.columns:
                raise ValidationError(f"level column {col!r} not in csv")
            levels = frame[col].to_numpy(dtype=float)
    else:
        raise ValidationError(f"data kind {kind!r} is not a regression source")
    return X, y, levels, names


def _load_claim_dataset(config, seed):
    kind = config.data["kind"]
    if kind == "synth_claims":
        return synth_claims(int(config.data["n"]), seed)
    if kind == "ndjson":
        if not config.data["path"]:
            raise ValidationError("data.path is required for ndjson data")
        return load_claims(config.data["path"])
    raise ValidationError(f"data kind {kind!r} is not a claims source")


def _loss(config):
    if config.loss["kind"] != "count_false":
        raise ValidationError("cli supports loss kind 'count_false' only")
    return MonotoneLoss.count_false(float(config.loss["budget"]))


def _read_theta(path, expect_names=None):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    theta = np.asarray(obj.get("theta"), dtype=float).ravel()
    names = obj.get("score_names")
    if expect_names is not None and names is not None:
        if tuple(names) != tuple(expect_names):
            raise ValidationError(
                f"theta file scores {names} do not match dataset "
                f"{list(expect_names)}"
            )
    return theta


def _ensemble(config, dataset):
    theta = None
    if config.score["theta_path"]:
        theta = _read_theta(config.score["theta_path"], dataset.score_names)
    return LinearClaimEnsemble(dataset.score_names, theta)


def _regression_family(config, n_cols):
    kind = config.score["kind"]
    if kind == "abs":
        return AbsResidualScore()
    if kind == "scaled":
        if config.score["theta_path"]:
            return ScaledResidualScore(_read_theta(config.score["theta_path"]))
        return ScaledResidualScore(np.ones(n_cols))
    raise ValidationError(
        f"score kind {kind!r} is not usable for regression (use abs/scaled)"
    )


def _base_design(config, X):
    """Design matrix before any level column: intercept, columns, powers."""
    n = X.shape[0]
    cols = [np.ones((n, 1))]
    if config.features["kind"] == "columns":
        cols.append(X)
        degree = int(config.features["poly_degree"])
        for p in range(2, degree + 1):
            cols.append((X[:, 0] ** p)[:, None])
    elif config.features["kind"] != "intercept":
        raise ValidationError("features.kind must be 'intercept' or 'columns'")
    return np.hstack(cols)


def _resolve_levels(config, base_design, n):
    """Per-row miscoverage levels from the config's level block."""
    if config.level["function_path"]:
        with open(config.level["function_path"], encoding="utf-8") as fh:
            rule = LevelFunction.from_dict(json.load(fh))
        return rule(base_design)
    return np.full(n, check_level(config.level["alpha"], "level.alpha"))


def _design(config, base_design, levels):
    if config.features["include_level"]:
        return np.hstack([base_design, np.asarray(levels, dtype=float)[:, None]])
    return base_design


def _criterion(config, family=None):
    kind = config.criterion["kind"]
    value = float(config.criterion["value"])
    if kind == "retention_at_least":
        return RetentionAtLeast(value)
    if kind == "interval_length_at_most":
        return IntervalLengthAtMost(value, family=family)
    raise ValidationError(f"unknown criterion kind {kind!r}")


def _split(n, fraction, seed):
    perm = derive_rng(seed, "split").permutation(n)
    n_cal = int(round(float(fraction) * n))
    n_cal = min(max(n_cal, 1), n - 1)
    return perm[:n_cal], perm[n_cal:]


# ------------------------------------------------------------- commands


def cmd_synth(config, seed, out_dir):
    kind = config.data["kind"]
    if kind == "synth_claims":
        path = os.path.join(out_dir, "claims.ndjson")
        dump_claims(synth_claims(int(config.data["n"]), seed), path)
        return {"claims": path}
    if kind in ("synth_hetero", "synth_gaussian_alpha"):
        X, y, levels, names = _load_regression(config, seed)
        frame = pd.DataFrame(X, columns=names)
        frame["y"] = y
        if levels is not None:
            frame["alpha"] = levels
        path = os.path.join(out_dir, "dataset.csv")
        atomic_write_text(path, frame.to_csv(index=False))
        return {"dataset": path}
    raise ValidationError(f"synth cannot generate data kind {kind!r}")


def _claims_bundle(config, seed):
    dataset = _load_claim_dataset(config, seed)
    loss = _loss(config)
    if len(dataset) == 0:
        return dataset, loss, None, [], np.zeros(0), np.zeros((0, 1))
    family = _ensemble(config, dataset)
    claim_sets = dataset.claim_sets(family.theta)
    scores = np.array([score_from_loss(cs, loss) for cs in claim_sets])
    base = _base_design(config, dataset.feature_matrix())
    return dataset, loss, family, claim_sets, scores, base


def cmd_estimate_alpha(config, seed, out_dir):
    fit_seed = derive_seed(seed, "level_fit")
    lf_cfg = config.level_fit
    if config.task == "claims":
        _, _, _, claim_sets, scores, base = _claims_bundle(config, seed)
        points, criterion = claim_sets, _criterion(config)
    else:
        X, y, _, _ = _load_regression(config, seed)
        family = _regression_family(config, X.shape[1])
        criterion = _criterion(config, family=family)
        points = list(X)
        scores = family.score(X, y)
        base = _base_design(config, X)
    rule = estimate_level_function(
        base, scores, points, criterion,
        grid=None if lf_cfg["grid"] is None else np.asarray(lf_cfg["grid"], dtype=float),
        fit_quantile=float(lf_cfg["fit_quantile"]),
        truncation=tuple(lf_cfg["truncation"]),
        split_fraction=float(lf_cfg["split_fraction"]),
        seed=fit_seed,
        exact_sweep=bool(lf_cfg["exact_sweep"]),
    )
    path = os.path.join(out_dir, "level_function.json")
    _write_json(path, {**rule.to_dict(), "seed": fit_seed,
                       "config_hash": config_hash(config.raw)})
    return {"level_function": path}


def cmd_boost(config, seed, out_dir):
    boost_seed = derive_seed(seed, "boost")
    bc = BoostConfig(
        learning_rate=float(config.boost["learning_rate"]),
        steps=int(config.boost["steps"]),
        sigmoid_temperature=float(config.boost["sigmoid_temperature"]),
        split_fraction=float(config.boost["split_fraction"]),
        seed=boost_seed,
        use_full_basis=bool(config.boost["use_full_basis"]),
    )
    if config.task == "claims":
        dataset, loss, family, _, _, base = _claims_bundle(config, seed)
        levels = _resolve_levels(config, base, len(dataset))
        data = ClaimBoostData(
            base_matrices=[dataset.base_matrix(i) for i in range(len(dataset))],
            annotations=[dataset.annotations(i) for i in range(len(dataset))],
            features=_design(config, base, levels),
            loss=loss,
        )
        names = list(dataset.score_names)
        objective = "retention"
    else:
        X, y, data_levels, _ = _load_regression(config, seed)
        base = _base_design(config, X)
        levels = (
            data_levels if data_levels is not None
            else _resolve_levels(config, base, X.shape[0])
        )
        family = ScaledResidualScore(np.ones(X.shape[1]))
        data = RegressionBoostData(
            X=X, y=y, features=_design(config, base, levels)
        )
        names = None
        objective = "interval_length"
    result = conditional_boost(data, family, levels, bc)
    theta_path = os.path.join(out_dir, "theta.json")
    _write_json(theta_path, {
        "kind": family.kind, "score_names": names,
        "theta": [float(v) for v in result.theta],
        "objective": objective, "seed": boost_seed,
        "config_hash": config_hash(config.raw),
    })
    traj = pd.DataFrame({
        "step": np.arange(result.objective_path.size),
        "objective": result.objective_path,
    })
    paths = write_reports({"trajectory": traj}, out_dir)
    return {"theta": theta_path, **paths}


def _calibrate_rows(config, seed, phi, scores, levels, ids, groups, test_idx,
                    calib_idx):
    rows = []
    for j, i in enumerate(test_idx):
        alpha = float(levels[i])
        if config.randomize:
            cut = cutoff_randomized(
                phi[calib_idx], scores[calib_idx], levels[calib_idx],
                phi[i], alpha, seed=derive_seed(seed, "cutoff", int(i)),
            )
        else:
            cut = cutoff_nonrandomized(
                phi[calib_idx], scores[calib_idx], levels[calib_idx],
                phi[i], alpha,
            )
        rows.append({
            "id": ids[i], "group": groups[i] if groups else None,
            "tau": cut.tau, "alpha": alpha,
            "eta_test": cut.eta_test,
            "u": np.nan if cut.u is None else cut.u,
        })
    return pd.DataFrame(rows, columns=["id", "group", "tau", "alpha",
                                       "eta_test", "u"])


def cmd_calibrate(config, seed, out_dir):
    if config.task == "claims":
        dataset, _, _, _, scores, base = _claims_bundle(config, seed)
        n = len(dataset)
        ids, groups = dataset.ids(), dataset.groups()
        levels = _resolve_levels(config, base, n)
    else:
        X, y, data_levels, _ = _load_regression(config, seed)
        family = _regression_family(config, X.shape[1])
        scores = family.score(X, y)
        base = _base_design(config, X)
        n = X.shape[0]
        ids, groups = [str(i) for i in range(n)], None
        levels = (
            data_levels if data_levels is not None
            else _resolve_levels(config, base, n)
        )
    phi = _design(config, base, levels)
    calib_idx, test_idx = _split(n, config.split["calib_fraction"], seed)
    frame = _calibrate_rows(
        config, seed, phi, np.asarray(scores, dtype=float), levels, ids,
        groups, test_idx, calib_idx,
    )
    paths = write_reports({"cutoffs": frame}, out_dir)
    _write_json(os.path.join(out_dir, "splits.json"), {
        "calib": [ids[i] for i in calib_idx],
        "test": [ids[i] for i in test_idx],
    })
    paths["splits"] = os.path.join(out_dir, "splits.json")
    return paths


def _read_cutoffs(out_dir):
    path = os.path.join(out_dir, "cutoffs.csv")
    if not os.path.exists(path):
        raise ValidationError(
            "cutoffs.csv not found; run --command calibrate into this "
            "output directory first"
        )
    return pd.read_csv(path)


def cmd_filter(config, seed, out_dir):
    if config.task != "claims":
        raise ValidationError("filter applies to the claims task")
    dataset, _, family, claim_sets, _, _ = _claims_bundle(config, seed)
    by_id = {rec.id: i for i, rec in enumerate(dataset)}
    cut = _read_cutoffs(out_dir)
    lines = []
    for row in cut.itertuples(index=False):
        if row.id not in by_id:
            raise ValidationError(f"cutoff row id {row.id!r} not in dataset")
        i = by_id[row.id]
        cs = claim_sets[i]
        kept = np.flatnonzero(cs.scores > row.tau)
        obj = {
            "id": row.id, "tau": float(row.tau),
            "kept_indices": [int(k) for k in kept],
        }
        if cs.texts is not None:
            obj["kept_texts"] = [cs.texts[int(k)] for k in kept]
        lines.append(json.dumps(obj, sort_keys=True))
    path = os.path.join(out_dir, "retained.ndjson")
    atomic_write_text(path, "\n".join(lines) + "\n" if lines else "")
    return {"retained": path}


def cmd_evaluate(config, seed, out_dir):
    cut = _read_cutoffs(out_dir)
    bins = (
        None if config.report_bins is None
        else np.asarray(config.report_bins, dtype=float)
    )
    if config.task == "claims":
        dataset, loss, _, claim_sets, _, _ = _claims_bundle(config, seed)
        by_id = {rec.id: i for i, rec in enumerate(dataset)}
        outcomes, nominal, labels, sets, taus = [], [], [], [], []
        for row in cut.itertuples(index=False):
            if row.id not in by_id:
                raise ValidationError(f"cutoff row id {row.id!r} not in dataset")
            i = by_id[row.id]
            cs = claim_sets[i]
            kept_ann = cs.annotations[cs.scores > row.tau]
            outcomes.append(loss.controlled(kept_ann))
            nominal.append(1.0 - float(row.alpha))
            labels.append(dataset.records[i].group or "none")
            sets.append(cs)
            taus.append(float(row.tau))
        stats = retention_stats(sets, taus)
        frames = {
            "calibration": calibration_curve(nominal, outcomes, bins),
            "coverage_by_group": coverage_by_group(outcomes, labels, nominal),
            "retention": pd.DataFrame([{
                "mean_retention": stats.mean_retention,
                "n_records": stats.n_records,
                "n_empty": stats.n_empty,
            }]),
        }
        return write_reports(frames, out_dir)

    X, y, data_levels, _ = _load_regression(config, seed)
    family = _regression_family(config, X.shape[1])
    ids = {str(i): i for i in range(X.shape[0])}
    rows = []
    for row in cut.itertuples(index=False):
        key = str(row.id)
        if key not in ids:
            raise ValidationError(f"cutoff row id {row.id!r} not in dataset")
        i = ids[key]
        interval = predict_interval(family, X[i], row.tau)
        rows.append({
            "id": key, "tau": float(row.tau), "alpha": float(row.alpha),
            "length": interval.length,
            "covered": bool(interval.contains(float(y[i]))),
            "x1": float(X[i, 0]),
        })
    table = pd.DataFrame(rows)
    deciles = np.quantile(table["x1"], np.linspace(0, 1, 11))
    deciles[0], deciles[-1] = -np.inf, np.inf
    labels = [
        f"d{np.searchsorted(deciles, v, side='right')}" for v in table["x1"]
    ]
    frames = {
        "calibration": calibration_curve(
            1.0 - table["alpha"].to_numpy(), table["covered"].to_numpy(), bins
        ),
        "coverage_by_group": coverage_by_group(
            table["covered"].to_numpy(), labels,
            1.0 - table["alpha"].to_numpy(),
        ),
        "lengths": table[["id", "tau", "alpha", "length", "covered"]],
    }
    return write_reports(frames, out_dir)


_HANDLERS = {
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "filter": cmd_filter,
    "boost": cmd_boost,
    "estimate-alpha": cmd_estimate_alpha,
    "evaluate": cmd_evaluate,
}


def run_command(command, config, seed=0, out_dir="out"):
    """Run one pipeline command; returns {output name: path}."""
    if command not in _HANDLERS:
        raise ValidationError(
            f"unknown command {command!r}; expected one of {COMMANDS}"
        )
    if not isinstance(config, RunConfig):
        config = RunConfig.from_dict(config)
    os.makedirs(out_dir, exist_ok=True)
    outputs = _HANDLERS[command](config, int(seed), out_dir)
    _write_json(os.path.join(out_dir, "run_meta.json"), {
        "command": command, "seed": int(seed), "version": VERSION,
        "config_hash": config_hash(config.raw),
        "outputs": {k: os.path.basename(v) for k, v in outputs.items()},
    })
    return outputs


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="claimcal",
        description="Calibrated cutoffs for claim filtering and intervals",
    )
    parser.add_argument("--command", required=True, choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out", help="output directory")
    args = parser.parse_args(argv)
    try:
        outputs = run_command(
            args.command, load_run_config(args.config), args.seed, args.out
        )
    except ClaimcalError as exc:
        json.dump({"category": exc.category, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    json.dump({"status": "ok", "outputs": outputs}, sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
