"""Claim record datasets and their newline-delimited JSON serialization.

One line per record:

    {"id": "r1", "group": "short", "features": {"difficulty": 0.4},
     "claims": [{"scores": {"lm": 0.9, "judge": 0.7}, "annotation": 1,
                 "text": "..."}]}

``group`` and per-claim ``text`` are optional. Feature names and score
names must agree across the whole file; validation errors cite the
1-based line number.
"""

import json
import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyDataWarning, ValidationError
from .scores import ScoredClaimSet


@dataclass(frozen=True)
class Claim:
    scores: dict
    annotation: int
    text: str = None


@dataclass(frozen=True)
class ClaimRecord:
    id: str
    group: str
    features: dict
    claims: tuple


class ClaimDataset:
    """Validated claim records with stable column orderings."""

    def __init__(self, records):
        records = list(records)
        self.records = records
        if not records:
            self.feature_names = ()
            self.score_names = ()
            return
        self.feature_names = tuple(sorted(records[0].features))
        first_scores = None
        for rec in records:
            for claim in rec.claims:
                first_scores = tuple(sorted(claim.scores))
                break
            if first_scores is not None:
                break
        self.score_names = first_scores if first_scores is not None else ()
        seen = set()
        for rec in records:
            if rec.id in seen:
                raise ValidationError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if tuple(sorted(rec.features)) != self.feature_names:
                raise ValidationError(
                    f"record {rec.id!r} has feature names "
                    f"{sorted(rec.features)}, expected {list(self.feature_names)}"
                )
            for claim in rec.claims:
                if tuple(sorted(claim.scores)) != self.score_names:
                    raise ValidationError(
                        f"record {rec.id!r} has score names "
                        f"{sorted(claim.scores)}, expected {list(self.score_names)}"
                    )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def ids(self):
        return [rec.id for rec in self.records]

    def groups(self):
        return [rec.group for rec in self.records]

    def feature_matrix(self):
        return np.array(
            [[rec.features[k] for k in self.feature_names] for rec in self.records],
            dtype=float,
        ).reshape(len(self.records), len(self.feature_names))

    def base_matrix(self, index):
        """Per-claim base scores of one record, (k, n_score_names)."""
        rec = self.records[index]
        return np.array(
            [[c.scores[k] for k in self.score_names] for c in rec.claims],
            dtype=float,
        ).reshape(len(rec.claims), len(self.score_names))

    def annotations(self, index):
        return np.array(
            [c.annotation for c in self.records[index].claims], dtype=int
        )

    def claim_sets(self, weights=None):
        """ScoredClaimSets with combined scores ``base @ weights``
        (uniform weights by default)."""
        if not self.records:
            return []
        if not self.score_names:
            raise ValidationError("dataset has no claims to score")
        m = len(self.score_names)
        w = (
            np.full(m, 1.0 / m) if weights is None
            else np.asarray(weights, dtype=float).ravel()
        )
        if w.shape != (m,):
            raise ValidationError(f"weights must have shape ({m},)")
        out = []
        for i, rec in enumerate(self.records):
            base = self.base_matrix(i)
            texts = tuple(c.text for c in rec.claims)
            if not any(t is not None for t in texts):
                texts = None
            out.append(
                ScoredClaimSet(base @ w, self.annotations(i), texts=texts)
            )
        return out

    def subset(self, indices):
        return ClaimDataset([self.records[i] for i in indices])


def _parse_claim(obj, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: claim must be an object")
    extra = set(obj) - {"scores", "annotation", "text"}
    if extra:
        raise ValidationError(f"{where}: unexpected claim keys {sorted(extra)}")
    scores = obj.get("scores")
    if not isinstance(scores, dict) or not scores:
        raise ValidationError(f"{where}: claim scores must be a non-empty object")
    clean = {}
    for k, v in scores.items():
        if not isinstance(k, str):
            raise ValidationError(f"{where}: score names must be strings")
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not np.isfinite(v):
            raise ValidationError(f"{where}: score {k!r} must be a finite number")
        clean[k] = float(v)
    ann = obj.get("annotation")
    if ann not in (0, 1) or isinstance(ann, bool):
        raise ValidationError(f"{where}: annotation must be 0 or 1")
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise ValidationError(f"{where}: text must be a string when present")
    return Claim(scores=clean, annotation=int(ann), text=text)


def _parse_record(obj, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: record must be an object")
    extra = set(obj) - {"id", "group", "features", "claims"}
    if extra:
        raise ValidationError(f"{where}: unexpected keys {sorted(extra)}")
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise ValidationError(f"{where}: id must be a non-empty string")
    group = obj.get("group")
    if group is not None and not isinstance(group, str):
        raise ValidationError(f"{where}: group must be a string or null")
    features = obj.get("features", {})
    if not isinstance(features, dict):
        raise ValidationError(f"{where}: features must be an object")
    feats = {}
    for k, v in features.items():
        if not isinstance(k, str):
            raise ValidationError(f"{where}: feature names must be strings")
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not np.isfinite(v):
            raise ValidationError(f"{where}: feature {k!r} must be a finite number")
        feats[k] = float(v)
    claims = obj.get("claims")
    if not isinstance(claims, list):
        raise ValidationError(f"{where}: claims must be a list")
    parsed = tuple(
        _parse_claim(c, f"{where}, claim {j + 1}") for j, c in enumerate(claims)
    )
    return ClaimRecord(id=rid, group=group, features=feats, claims=parsed)


def load_claims(path):
    """Read a claim dataset from newline-delimited JSON.

    An empty file yields an empty dataset and a warning rather than an
    error, so pipelines degrade to empty outputs instead of crashing.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            records.append(_parse_record(obj, f"line {lineno}"))
    if not records:
        warnings.warn(f"{path} has no records", EmptyDataWarning, stacklevel=2)
    return ClaimDataset(records)


def record_to_obj(rec):
    claims = []
    for c in rec.claims:
        obj = {"scores": c.scores, "annotation": c.annotation}
        if c.text is not None:
            obj["text"] = c.text
        claims.append(obj)
    return {
        "id": rec.id, "group": rec.group, "features": rec.features,
        "claims": claims,
    }


def dump_claims(dataset, path):
    """Write a claim dataset as newline-delimited JSON (atomically)."""
    lines = [json.dumps(record_to_obj(rec), sort_keys=True) for rec in dataset]
    atomic_write_text(path, "\n".join(lines) + "\n" if lines else "")


def atomic_write_text(path, text):
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
