"""Glue between modules: cohort segmentation, preprocessing fit/apply, and
episode-level matrices for the pretext task."""

from __future__ import annotations

import numpy as np

from .catalog import Episode, VariableSpec
from .preprocess import (
    NormStats,
    aggregate_and_filter,
    build_design_matrix,
    fit_normalization,
)
from .trainer import TrialData
from .trials import ExclusionReport, HFNCTrial, segment_episode, split_cohort


def segment_cohort(
    episodes: list[Episode],
) -> tuple[list[HFNCTrial], list[ExclusionReport]]:
    trials, reports = [], []
    for ep in episodes:
        t, r = segment_episode(ep)
        trials.extend(t)
        reports.append(r)
    return trials, reports


def _trial_records(episode: Episode, trial: HFNCTrial):
    return [r for r in episode.records if r.time <= trial.slice_end]


def fit_stats_for_training(
    episodes: list[Episode],
    trials: list[HFNCTrial],
    partition: dict[str, str],
    catalog: list[VariableSpec],
) -> NormStats:
    by_id = {ep.episode_id: ep for ep in episodes}
    training = []
    for tr in trials:
        if partition.get(tr.trial_id) != "training":
            continue
        ep = by_id[tr.episode_id]
        records, _ = aggregate_and_filter(_trial_records(ep, tr), catalog)
        training.append((records, ep.age_at_admission))
    return fit_normalization(training, catalog)


def make_trial_data(
    episodes: list[Episode],
    trials: list[HFNCTrial],
    partition: dict[str, str],
    stats: NormStats,
    catalog: list[VariableSpec],
) -> list[TrialData]:
    by_id = {ep.episode_id: ep for ep in episodes}
    out = []
    for tr in trials:
        ep = by_id[tr.episode_id]
        records, _ = aggregate_and_filter(_trial_records(ep, tr), catalog)
        dm = build_design_matrix(
            records, ep.age_at_admission, stats, times=tr.label_series.times
        )
        out.append(
            TrialData(
                trial=tr,
                X=dm.values,
                labels=tr.label_series.labels,
                partition=partition.get(tr.trial_id, ""),
            )
        )
    return out


def make_episode_data(
    episodes: list[Episode],
    stats: NormStats,
    catalog: list[VariableSpec],
    mortality: dict[str, bool] | None = None,
    max_rows: int | None = None,
) -> list[tuple[np.ndarray, int]]:
    """Per-episode design matrices with binary mortality outcomes for the
    pretext task.  ``max_rows`` optionally truncates long episodes."""
    out = []
    for ep in episodes:
        records, _ = aggregate_and_filter(ep.records, catalog)
        dm = build_design_matrix(records, ep.age_at_admission, stats)
        X = dm.values
        if X.shape[0] == 0:
            continue
        if max_rows is not None and X.shape[0] > max_rows:
            X = X[:max_rows]
        if mortality is not None:
            y = int(mortality.get(ep.episode_id, False))
        else:
            y = int(ep.died)
        out.append((X, y))
    return out


def partition_cohort(
    trials: list[HFNCTrial],
    ratios: tuple[float, float, float] = (0.535, 0.217, 0.248),
    seed: int = 0,
) -> dict[str, str]:
    """Default three-way split at the 341/138/158 patient proportions."""
    return split_cohort(trials, ratios, seed)
