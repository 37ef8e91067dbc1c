"""Segmentation of episodes into HFNC periods, trials, labels, and cohort splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import ESCALATION_MODALITIES, Episode

PERIOD_MINUTES = 1440.0  # 24 h window after an initiation
REINIT_GAP_MINUTES = 1440.0  # HFNC-free gap required before a new period
STEPDOWN_GUARD_MINUTES = 30.0  # minimum delay after NIV/intubation step-down

FAILURE = "Failure"
SUCCESS = "Success"
CENSORED = "Censored"

SUCCESS_DISPOSITIONS = {"GeneralCareFloor", "Home", "StepDownUnit"}
CENSOR_DISPOSITIONS = {
    "OperatingRoom",
    "AnotherHospitalICU",
    "AnotherICUCurrentHospital",
}

EXCLUSION_RULES = (
    "age>=19",
    "apnea",
    "DNR/DNI",
    "OR-truncated",
    "ambiguous-disposition",
    "no-HFNC",
)


@dataclass
class HFNCPeriod:
    episode_id: str
    start: float
    end: float  # start + 24h, or earlier if the episode ends first
    outcome: str = ""
    resolution_time: float = float("nan")


@dataclass
class LabelSeries:
    times: np.ndarray  # ascending charting times, minutes
    labels: np.ndarray  # 0.0 / 1.0 / NaN


@dataclass
class HFNCTrial:
    episode_id: str
    trial_id: str
    patient_id: str
    slice_end: float
    period: HFNCPeriod
    label_series: LabelSeries
    respiratory: bool = False


@dataclass
class ExclusionReport:
    episode_id: str
    decision: str  # "included" | "excluded"
    reason: str = ""


def derive_periods(episode: Episode) -> list[HFNCPeriod]:
    """Identify HFNC periods from the episode's support events.

    An HFNC start opens a new period only when (a) the patient had no HFNC
    support during the preceding 24 hours (the most recent HFNC stop, if
    any, is more than 24h in the past) and (b) at least 30 minutes have
    passed since any step-down from NIV or intubation.
    """
    periods: list[HFNCPeriod] = []
    last_hfnc_stop: float | None = None
    had_hfnc = False
    last_stepdown: float | None = None

    for ev in episode.support_events:
        if ev.modality == "HFNC":
            if ev.action == "stop":
                last_hfnc_stop = ev.time
                continue
            t = ev.time
            had_gap = not had_hfnc or (
                last_hfnc_stop is not None and t - last_hfnc_stop > REINIT_GAP_MINUTES
            )
            guard_ok = (
                last_stepdown is None or t - last_stepdown >= STEPDOWN_GUARD_MINUTES
            )
            if had_gap and guard_ok:
                end = min(t + PERIOD_MINUTES, episode.discharge_time)
                periods.append(HFNCPeriod(episode.episode_id, t, end))
            had_hfnc = True
        elif ev.modality in ESCALATION_MODALITIES and ev.action == "stop":
            last_stepdown = ev.time
    return periods


def assign_outcome(period: HFNCPeriod, episode: Episode) -> HFNCPeriod:
    """Fill in outcome and resolution time for one period.

    Failure at the first escalation (BiPAP/NIMV/intubation start) inside the
    window; otherwise, an in-window discharge is mapped through the patient's
    disposition; otherwise the period runs its full 24h as a success.
    """
    for ev in episode.support_events:
        if (
            ev.modality in ESCALATION_MODALITIES
            and ev.action == "start"
            and period.start < ev.time <= period.end
        ):
            period.outcome = FAILURE
            period.resolution_time = ev.time
            return period

    if period.end < period.start + PERIOD_MINUTES:
        # episode ended before the 24h window elapsed
        if episode.disposition in SUCCESS_DISPOSITIONS:
            period.outcome = SUCCESS
        else:
            # OR / other-ICU transfers are ambiguous; in-window death and
            # truncated data are likewise unknowable outcomes
            period.outcome = CENSORED
        period.resolution_time = period.end
        return period

    period.outcome = SUCCESS
    period.resolution_time = period.end
    return period


def apply_exclusions(episode: Episode, periods: list[HFNCPeriod]) -> ExclusionReport:
    """Episode-level inclusion decision; first matching rule wins."""
    if episode.age_at_admission >= 19.0:
        return ExclusionReport(episode.episode_id, "excluded", "age>=19")
    if "apnea" in episode.diagnosis_tags:
        return ExclusionReport(episode.episode_id, "excluded", "apnea")
    if episode.care_flags & {"DNR", "DNI"}:
        return ExclusionReport(episode.episode_id, "excluded", "DNR/DNI")
    truncated = any(p.end < p.start + PERIOD_MINUTES for p in periods)
    if truncated and episode.disposition == "OperatingRoom":
        return ExclusionReport(episode.episode_id, "excluded", "OR-truncated")
    if truncated and episode.disposition in (
        "AnotherHospitalICU",
        "AnotherICUCurrentHospital",
    ):
        return ExclusionReport(episode.episode_id, "excluded", "ambiguous-disposition")
    if not periods:
        return ExclusionReport(episode.episode_id, "excluded", "no-HFNC")
    return ExclusionReport(episode.episode_id, "included")


def label_timesteps(
    period: HFNCPeriod, charting_times: np.ndarray
) -> LabelSeries:
    """Per-time-step labels for one target period.

    Times before the period start carry NaN; times from period start through
    the resolution time carry the period outcome; later times are dropped.
    """
    times = np.asarray(charting_times, dtype=float)
    if times.size and np.any(np.diff(times) < 0):
        raise ValueError("charting times must be ascending")
    keep = times <= period.resolution_time
    times = times[keep]
    labels = np.full(times.shape, np.nan)
    in_period = times >= period.start
    labels[in_period] = 1.0 if period.outcome == FAILURE else 0.0
    return LabelSeries(times=times, labels=labels)


def build_trials(episode: Episode, periods: list[HFNCPeriod]) -> list[HFNCTrial]:
    """One trial per non-censored period; the slice runs from admission to
    the target period's resolution, and only that last period is labeled."""
    obs_times = np.array(sorted({r.time for r in episode.records}), dtype=float)
    trials = []
    for i, period in enumerate(periods):
        if period.outcome == CENSORED:
            continue
        series = label_timesteps(period, obs_times)
        trials.append(
            HFNCTrial(
                episode_id=episode.episode_id,
                trial_id=f"{episode.episode_id}-t{i}",
                patient_id=episode.patient_id,
                slice_end=period.resolution_time,
                period=period,
                label_series=series,
                respiratory="respiratory" in episode.diagnosis_tags,
            )
        )
    return trials


def segment_episode(episode: Episode) -> tuple[list[HFNCTrial], ExclusionReport]:
    """Full per-episode pipeline: periods -> exclusion -> outcomes -> trials."""
    periods = derive_periods(episode)
    report = apply_exclusions(episode, periods)
    if report.decision == "excluded":
        return [], report
    for p in periods:
        assign_outcome(p, episode)
    return build_trials(episode, periods), report


def split_cohort(
    trials: list[HFNCTrial], ratios: tuple[float, float, float], seed: int
) -> dict[str, str]:
    """Patient-level partition into training/validation/test.

    Returns trial_id -> partition name.  All trials of one patient land in
    the same partition; assignment is a deterministic shuffle of patients.
    """
    if not trials:
        raise ValueError("cannot split an empty cohort")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    patients = sorted({t.patient_id for t in trials})
    rng = np.random.default_rng(seed)
    rng.shuffle(patients)
    n = len(patients)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    assignment = {}
    for i, pid in enumerate(patients):
        if i < n_train:
            assignment[pid] = "training"
        elif i < n_train + n_val:
            assignment[pid] = "validation"
        else:
            assignment[pid] = "test"
    return {t.trial_id: assignment[t.patient_id] for t in trials}


def trial_manifest_dict(trial: HFNCTrial, partition: str | None = None) -> dict:
    d = {
        "episode_id": trial.episode_id,
        "trial_id": trial.trial_id,
        "patient_id": trial.patient_id,
        "period_start": trial.period.start,
        "period_end": trial.period.end,
        "outcome": trial.period.outcome,
        "resolution_time": trial.period.resolution_time,
        "respiratory": trial.respiratory,
    }
    if partition is not None:
        d["partition"] = partition
    return d
