"""Sparse charted records -> dense normalized design matrices.

Pipeline order: range filter -> aggregate -> z-score -> forward fill ->
population-mean backfill.  Therapies scale to [0,1] by their clinical
maximum with missing values meaning absence of treatment.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .catalog import THERAPY_KINDS, VariableSpec, catalog_to_json

AGE_FEATURE = "age"

Z_SCORED_KINDS = {"physiologic", "lab", "demographic"}


@dataclass
class NormStats:
    features: list[str]  # column order of the design matrix
    kinds: dict[str, str]  # feature -> kind
    means: dict[str, float]  # z-scored features only
    stds: dict[str, float]
    therapy_max: dict[str, float]  # therapy features only
    catalog_hash: str = ""
    dropped: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "features": self.features,
                "kinds": self.kinds,
                "means": self.means,
                "stds": self.stds,
                "therapy_max": self.therapy_max,
                "catalog_hash": self.catalog_hash,
                "dropped": self.dropped,
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        d = json.loads(text)
        return cls(**d)


@dataclass
class DesignMatrix:
    times: np.ndarray  # (T,)
    values: np.ndarray  # (T, F) dense, normalized
    observed: np.ndarray  # (T, F) bool mask of charted cells
    features: list[str]


def catalog_hash(catalog: list[VariableSpec]) -> str:
    return hashlib.sha256(catalog_to_json(catalog).encode()).hexdigest()[:16]


def aggregate_and_filter(records, catalog):
    """Merge aggregation groups into single features and drop out-of-range
    values.  Returns (records with feature-level variable names, drop count)."""
    spec_by_name = {v.name: v for v in catalog}
    out = []
    dropped = 0
    for rec in records:
        spec = spec_by_name.get(rec.variable)
        if spec is None:
            continue
        if not (spec.valid_min <= rec.value <= spec.valid_max):
            dropped += 1
            continue
        if spec.feature != rec.variable:
            rec = type(rec)(rec.episode_id, rec.time, spec.feature, rec.value)
        out.append(rec)
    return out, dropped


def feature_order(catalog: list[VariableSpec]) -> tuple[list[str], dict[str, str]]:
    """Post-aggregation feature columns (catalog order) plus the age column."""
    features = []
    kinds = {}
    for v in catalog:
        if v.feature not in kinds:
            features.append(v.feature)
            kinds[v.feature] = v.kind
    if AGE_FEATURE not in kinds:
        features.append(AGE_FEATURE)
        kinds[AGE_FEATURE] = "demographic"
    return features, kinds


def fit_normalization(training_trials, catalog) -> NormStats:
    """Per-feature normalization statistics from the training partition only.

    ``training_trials`` is an iterable of (records, age_years) pairs whose
    records have already been aggregated and range-filtered.  Z-scored
    features never observed in training, or with zero variance, are dropped
    with a diagnostic entry.
    """
    training_trials = list(training_trials)
    if not training_trials:
        raise ValueError("training set is empty")
    features, kinds = feature_order(catalog)
    observed: dict[str, list[float]] = {f: [] for f in features}
    for records, age in training_trials:
        for rec in records:
            if rec.variable in observed:
                observed[rec.variable].append(rec.value)
        observed[AGE_FEATURE].append(age)

    therapy_max = {}
    for v in catalog:
        if v.kind in THERAPY_KINDS:
            therapy_max.setdefault(v.feature, float(v.therapy_max))

    means, stds, kept, dropped = {}, {}, [], []
    for f in features:
        if kinds[f] in THERAPY_KINDS:
            kept.append(f)
            continue
        vals = np.asarray(observed[f], dtype=float)
        if vals.size == 0:
            dropped.append(f"{f}: never observed in training")
            continue
        mean = float(vals.mean())
        std = float(vals.std())  # population formula, fixed for determinism
        if std <= 0.0:
            dropped.append(f"{f}: zero variance in training")
            continue
        means[f] = mean
        stds[f] = std
        kept.append(f)

    return NormStats(
        features=kept,
        kinds={f: kinds[f] for f in kept},
        means=means,
        stds=stds,
        therapy_max=therapy_max,
        catalog_hash=catalog_hash(catalog),
        dropped=dropped,
    )


def build_design_matrix(records, age: float, stats: NormStats,
                        times: np.ndarray | None = None) -> DesignMatrix:
    """Dense per-trial input matrix at the trial's charting times.

    Physiologic/lab/demographic features are z-scored then forward-filled;
    rows before the first observation (and never-observed features) sit at
    the population mean, i.e. exactly 0.  Therapy features scale to [0,1]
    by therapy_max and are 0 wherever not charted.
    """
    if times is None:
        times = np.array(sorted({r.time for r in records}), dtype=float)
    else:
        times = np.asarray(times, dtype=float)
    if times.size and np.any(np.diff(times) < 0):
        raise ValueError("charting times must be ascending")

    T, F = times.size, len(stats.features)
    col = {f: j for j, f in enumerate(stats.features)}
    row = {t: i for i, t in enumerate(times)}
    values = np.zeros((T, F))
    observed = np.zeros((T, F), dtype=bool)

    for rec in records:
        j = col.get(rec.variable)
        i = row.get(rec.time)
        if j is None or i is None:
            continue
        f = rec.variable
        if stats.kinds[f] in THERAPY_KINDS:
            v = min(max(rec.value / stats.therapy_max[f], 0.0), 1.0)
        else:
            v = (rec.value - stats.means[f]) / stats.stds[f]
        values[i, j] = v
        observed[i, j] = True

    # forward-fill z-scored features; therapy gaps stay 0 (no treatment)
    for f in stats.features:
        if stats.kinds[f] in THERAPY_KINDS:
            continue
        j = col[f]
        if f == AGE_FEATURE and not observed[:, j].any():
            values[:, j] = (age - stats.means[f]) / stats.stds[f]
            continue
        last = 0.0  # population mean in z-space
        for i in range(T):
            if observed[i, j]:
                last = values[i, j]
            else:
                values[i, j] = last

    return DesignMatrix(times=times, values=values, observed=observed,
                        features=list(stats.features))


def perseverate(matrix: np.ndarray, k: int) -> np.ndarray:
    """Repeat each input row k consecutive times."""
    if k < 1:
        raise ValueError("perseveration factor k must be >= 1")
    matrix = np.asarray(matrix)
    if k == 1:
        return matrix
    return np.repeat(matrix, k, axis=0)


def perseverate_labels(labels: np.ndarray, k: int) -> np.ndarray:
    """Align labels with a perseverated matrix: each original label attaches
    to the last of its k copies, earlier copies are masked NaN."""
    if k < 1:
        raise ValueError("perseveration factor k must be >= 1")
    labels = np.asarray(labels, dtype=float)
    if k == 1:
        return labels
    out = np.full(labels.size * k, np.nan)
    out[k - 1 :: k] = labels
    return out
