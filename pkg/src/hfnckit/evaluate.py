"""Time-anchored evaluation: AUROC sweeps with resolved-trial exclusion,
ROC curves, operating-point tables, and time-to-failure statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trials import FAILURE, HFNCTrial

DEFAULT_SENSITIVITY_TARGETS = (
    0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 0.95, 1.00,
)


@dataclass
class PredictionSeries:
    trial_id: str
    times: np.ndarray  # ascending, minutes since admission
    probs: np.ndarray  # in [0, 1]


@dataclass
class SweepRow:
    t_min: float
    n_eligible: int
    n_failures: int
    n_dropped: int  # eligible trials without any prediction by the anchor
    auroc: float | None


@dataclass
class OperatingRow:
    target_sensitivity: float
    threshold: float
    sensitivity: float
    specificity: float
    ppv: float | None
    npv: float | None


@dataclass
class EvalReport:
    sweep: list[SweepRow] = field(default_factory=list)
    roc: list[tuple[float, float, float]] = field(default_factory=list)
    operating: list[OperatingRow] = field(default_factory=list)
    ttf_quantiles: dict[str, float] = field(default_factory=dict)


def eligible_trials_at(trials: list[HFNCTrial], t_min: float) -> list[HFNCTrial]:
    """Trials still unresolved ``t_min`` minutes into their target period.

    A trial resolved at or before the anchor (failure escalated, or success
    already concluded) is excluded; e.g. a failure exactly 4.5h in is
    excluded from the 5-hour anchor.
    """
    return [
        tr
        for tr in trials
        if tr.period.resolution_time - tr.period.start > t_min
    ]


def score_at(series: PredictionSeries, t_min: float, period_start: float):
    """Most recent prediction at or before period_start + t_min, or None."""
    cutoff = period_start + t_min
    idx = np.searchsorted(series.times, cutoff, side="right") - 1
    if idx < 0:
        return None
    return float(series.probs[idx])


def _count_groups(scores, labels):
    """Distinct score values with per-class counts, ascending by score."""
    order = np.argsort(scores, kind="stable")
    s = np.asarray(scores, dtype=float)[order]
    y = np.asarray(labels)[order]
    values, pos, neg = [], [], []
    i = 0
    while i < len(s):
        j = i
        p = n = 0
        while j < len(s) and s[j] == s[i]:
            if y[j]:
                p += 1
            else:
                n += 1
            j += 1
        values.append(s[i])
        pos.append(p)
        neg.append(n)
        i = j
    return values, pos, neg


def auroc(scores, labels) -> float | None:
    """Mann-Whitney AUROC: P(score+ > score-) + 0.5 P(tie).

    Computed by exact integer pair counting so it matches brute-force
    enumeration bit for bit.  Returns None when only one class is present.
    """
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    _, pos, neg = _count_groups(scores, labels)
    concordant = 0
    ties = 0
    neg_below = 0
    for p, n in zip(pos, neg):
        concordant += p * neg_below
        ties += p * n
        neg_below += n
    return (concordant + 0.5 * ties) / (n_pos * n_neg)


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) points at every distinct threshold, anchored at
    (0,0) and (1,1); predictions are positive when score >= threshold."""
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs both classes")
    values, pos, neg = _count_groups(scores, labels)
    points = [(float("inf"), 0.0, 0.0)]
    tp = fp = 0
    for v, p, n in zip(reversed(values), reversed(pos), reversed(neg)):
        tp += p
        fp += n
        points.append((v, fp / n_neg, tp / n_pos))
    if points[-1][1:] != (1.0, 1.0):
        points.append((float("-inf"), 1.0, 1.0))
    return points


def roc_area(points) -> float:
    area = 0.0
    for (_, x0, y0), (_, x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def operating_points(
    scores, labels, sensitivity_targets=DEFAULT_SENSITIVITY_TARGETS
) -> list[OperatingRow]:
    """Operating table: for each sensitivity target, the highest threshold
    achieving sensitivity >= target, with achieved specificity/PPV/NPV."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("operating_points needs both classes")

    candidates = sorted(set(scores.tolist()), reverse=True)
    candidates.append(min(candidates) - 1.0)  # classify everything positive
    table = []
    for target in sensitivity_targets:
        chosen = None
        for thresh in candidates:
            pred = scores >= thresh
            tp = int(np.sum(pred & labels))
            if tp / n_pos >= target:
                chosen = thresh
                break
        pred = scores >= chosen
        tp = int(np.sum(pred & labels))
        fp = int(np.sum(pred & ~labels))
        fn = n_pos - tp
        tn = n_neg - fp
        table.append(
            OperatingRow(
                target_sensitivity=target,
                threshold=float(chosen),
                sensitivity=tp / n_pos,
                specificity=tn / n_neg,
                ppv=tp / (tp + fp) if (tp + fp) else None,
                npv=tn / (tn + fn) if (tn + fn) else None,
            )
        )
    return table


def anchor_scores(
    trials: list[HFNCTrial],
    predictions: dict[str, PredictionSeries],
    t_min: float,
):
    """Eligible-trial scores and labels at one anchor.

    Returns (scores, labels, n_eligible, n_failures, n_dropped); trials with
    no prediction at or before the anchor are dropped and counted.
    """
    eligible = eligible_trials_at(trials, t_min)
    scores, labels = [], []
    dropped = 0
    for tr in eligible:
        series = predictions.get(tr.trial_id)
        s = score_at(series, t_min, tr.period.start) if series is not None else None
        if s is None:
            dropped += 1
            continue
        scores.append(s)
        labels.append(tr.period.outcome == FAILURE)
    n_fail = sum(1 for tr in eligible if tr.period.outcome == FAILURE)
    return np.array(scores), np.array(labels, dtype=bool), len(eligible), n_fail, dropped


def horizon_sweep(
    trials: list[HFNCTrial],
    predictions: dict[str, PredictionSeries],
    step_min: float = 30.0,
    span_min: tuple[float, float] = (0.0, 1440.0),
    cohort: str = "all",
) -> list[SweepRow]:
    """AUROC at each anchor across the 24h window (or a custom span)."""
    if cohort == "respiratory":
        trials = [t for t in trials if t.respiratory]
    elif cohort != "all":
        raise ValueError(f"unknown cohort filter {cohort!r}")
    lo, hi = span_min
    anchors = np.arange(lo, hi + 0.5 * step_min, step_min)
    rows = []
    for t in anchors:
        scores, labels, n_elig, n_fail, dropped = anchor_scores(
            trials, predictions, float(t)
        )
        value = auroc(scores, labels) if scores.size else None
        rows.append(SweepRow(float(t), n_elig, n_fail, dropped, value))
    return rows


def validation_objective(
    trials: list[HFNCTrial], predictions: dict[str, PredictionSeries]
) -> float:
    """Mean of the hourly AUROCs from 0 to 14 hours; hours where AUROC is
    undefined (single class) are skipped."""
    rows = horizon_sweep(trials, predictions, step_min=60.0, span_min=(0.0, 840.0))
    values = [r.auroc for r in rows if r.auroc is not None]
    if not values:
        return 0.5
    return float(np.mean(values))


def time_to_failure_stats(trials: list[HFNCTrial]) -> dict:
    """Failure-time distribution relative to period start: histogram, CDF,
    and linear-interpolation quantiles (median and 80th percentile)."""
    ttf = np.array(
        sorted(
            tr.period.resolution_time - tr.period.start
            for tr in trials
            if tr.period.outcome == FAILURE
        )
    )
    if ttf.size == 0:
        return {"n_failures": 0, "quantiles": {}, "bins": [], "counts": [], "cdf": []}
    edges = np.arange(0.0, 1440.0 + 60.0, 60.0)
    counts, _ = np.histogram(ttf, bins=edges)
    cdf = np.cumsum(counts) / ttf.size
    return {
        "n_failures": int(ttf.size),
        "quantiles": {
            "p50_min": float(np.percentile(ttf, 50)),
            "p80_min": float(np.percentile(ttf, 80)),
        },
        "bins": edges[:-1].tolist(),
        "counts": counts.tolist(),
        "cdf": cdf.tolist(),
    }
