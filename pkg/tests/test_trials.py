import numpy as np
import pytest

from hfnckit.catalog import Episode, ObservationRecord, SupportEvent
from hfnckit.trials import (
    CENSORED,
    FAILURE,
    SUCCESS,
    HFNCPeriod,
    apply_exclusions,
    assign_outcome,
    build_trials,
    derive_periods,
    label_timesteps,
    segment_episode,
    split_cohort,
)


def ep(events, disposition="GeneralCareFloor", discharge=5000.0, age=2.0,
       tags=(), flags=(), records=()):
    return Episode(
        episode_id="e1",
        patient_id="p1",
        age_at_admission=age,
        sex="F",
        diagnosis_tags=frozenset(tags),
        care_flags=frozenset(flags),
        disposition=disposition,
        discharge_time=discharge,
        records=list(records),
        support_events=[SupportEvent(t, m, a) for t, m, a in events],
    )


class TestDerivePeriods:
    def test_single_initiation(self):
        periods = derive_periods(ep([(100, "HFNC", "start")]))
        assert len(periods) == 1
        assert periods[0].start == 100 and periods[0].end == 1540

    def test_reinitiation_within_24h_same_period(self):
        events = [
            (100, "HFNC", "start"),
            (200, "HFNC", "stop"),
            (260, "HFNC", "start"),
        ]
        periods = derive_periods(ep(events))
        assert len(periods) == 1 and periods[0].start == 100

    def test_reinitiation_after_24h_new_period(self):
        events = [
            (100, "HFNC", "start"),
            (800, "HFNC", "stop"),
            (800 + 1441, "HFNC", "start"),
        ]
        periods = derive_periods(ep(events))
        assert [p.start for p in periods] == [100, 2241]

    def test_gap_of_exactly_24h_is_not_new(self):
        events = [
            (100, "HFNC", "start"),
            (800, "HFNC", "stop"),
            (800 + 1440, "HFNC", "start"),
        ]
        assert len(derive_periods(ep(events))) == 1

    def test_stepdown_guard_blocks_period(self):
        events = [
            (100, "NIMV", "start"),
            (500, "NIMV", "stop"),
            (529, "HFNC", "start"),
        ]
        assert derive_periods(ep(events)) == []

    def test_stepdown_guard_boundary_30min_opens_period(self):
        events = [
            (100, "NIMV", "start"),
            (500, "NIMV", "stop"),
            (530, "HFNC", "start"),
        ]
        periods = derive_periods(ep(events))
        assert len(periods) == 1 and periods[0].start == 530

    def test_period_end_capped_at_discharge(self):
        periods = derive_periods(ep([(100, "HFNC", "start")], discharge=900))
        assert periods[0].end == 900


class TestAssignOutcome:
    def period(self, start=100.0, end=None, discharge=5000.0):
        return HFNCPeriod("e1", start, end if end is not None else start + 1440)

    def test_escalation_in_window_is_failure(self):
        p = self.period()
        episode = ep([(100, "HFNC", "start"), (400, "BiPAP", "start")])
        assign_outcome(p, episode)
        assert p.outcome == FAILURE and p.resolution_time == 400

    def test_escalation_at_period_start_ignored(self):
        p = self.period()
        episode = ep([(100, "HFNC", "start"), (100, "NIMV", "start")])
        assign_outcome(p, episode)
        assert p.outcome == SUCCESS

    def test_escalation_exactly_at_end_is_failure(self):
        p = self.period()
        episode = ep([(100, "HFNC", "start"), (1540, "Intubation", "start")])
        assign_outcome(p, episode)
        assert p.outcome == FAILURE and p.resolution_time == 1540

    def test_full_window_is_success(self):
        p = self.period()
        assign_outcome(p, ep([(100, "HFNC", "start")]))
        assert p.outcome == SUCCESS and p.resolution_time == p.end

    def test_early_discharge_to_floor_is_success(self):
        p = self.period(end=900)
        assign_outcome(p, ep([(100, "HFNC", "start")], discharge=900))
        assert p.outcome == SUCCESS and p.resolution_time == 900

    @pytest.mark.parametrize(
        "dispo", ["Died", "OperatingRoom", "AnotherHospitalICU", "StillAdmitted"]
    )
    def test_early_end_unfavorable_dispositions_censored(self, dispo):
        p = self.period(end=900)
        assign_outcome(p, ep([(100, "HFNC", "start")], disposition=dispo,
                             discharge=900))
        assert p.outcome == CENSORED


class TestExclusions:
    def test_age_rule_first(self):
        r = apply_exclusions(ep([], age=20.0, tags={"apnea"}), [])
        assert r.decision == "excluded" and r.reason == "age>=19"

    def test_apnea(self):
        r = apply_exclusions(ep([], tags={"apnea"}), [])
        assert r.reason == "apnea"

    def test_dnr(self):
        r = apply_exclusions(ep([], flags={"DNR"}), [])
        assert r.reason == "DNR/DNI"

    def test_or_truncated(self):
        p = [HFNCPeriod("e1", 100, 900)]
        r = apply_exclusions(ep([], disposition="OperatingRoom"), p)
        assert r.reason == "OR-truncated"

    def test_ambiguous_transfer(self):
        p = [HFNCPeriod("e1", 100, 900)]
        r = apply_exclusions(ep([], disposition="AnotherHospitalICU"), p)
        assert r.reason == "ambiguous-disposition"

    def test_no_hfnc(self):
        r = apply_exclusions(ep([]), [])
        assert r.reason == "no-HFNC"

    def test_included(self):
        p = [HFNCPeriod("e1", 100, 1540)]
        r = apply_exclusions(ep([]), p)
        assert r.decision == "included" and r.reason == ""


class TestLabels:
    def test_nan_before_start_outcome_after(self):
        p = HFNCPeriod("e1", 100, 1540, FAILURE, 250)
        series = label_timesteps(p, np.array([0.0, 100.0, 200.0, 300.0]))
        assert series.times.tolist() == [0.0, 100.0, 200.0]
        assert np.isnan(series.labels[0])
        assert series.labels[1] == 1.0 and series.labels[2] == 1.0

    def test_success_labels_zero(self):
        p = HFNCPeriod("e1", 100, 1540, SUCCESS, 1540)
        series = label_timesteps(p, np.array([50.0, 150.0]))
        assert np.isnan(series.labels[0]) and series.labels[1] == 0.0

    def test_unsorted_times_rejected(self):
        p = HFNCPeriod("e1", 100, 1540, SUCCESS, 1540)
        with pytest.raises(ValueError):
            label_timesteps(p, np.array([200.0, 100.0]))


class TestBuildTrials:
    def make_episode(self):
        records = [
            ObservationRecord("e1", t, "heart_rate", 100.0)
            for t in (0.0, 150.0, 500.0, 3000.0)
        ]
        events = [
            (100, "HFNC", "start"),
            (600, "HFNC", "stop"),
            (600 + 1441, "HFNC", "start"),
        ]
        return ep(events, records=records)

    def test_censored_periods_skipped(self):
        episode = self.make_episode()
        periods = derive_periods(episode)
        periods[0].outcome = CENSORED
        periods[0].resolution_time = 600.0
        periods[1].outcome = SUCCESS
        periods[1].resolution_time = periods[1].end
        trials = build_trials(episode, periods)
        assert len(trials) == 1 and trials[0].trial_id == "e1-t1"

    def test_slice_and_labels(self):
        episode = self.make_episode()
        trials, report = segment_episode(episode)
        assert report.decision == "included"
        assert len(trials) == 2
        first = trials[0]
        assert first.slice_end == first.period.resolution_time
        # labels only at charting times up to the resolution
        assert np.all(first.label_series.times <= first.slice_end)

    def test_respiratory_flag(self):
        episode = self.make_episode()
        episode.diagnosis_tags = frozenset({"respiratory"})
        trials, _ = segment_episode(episode)
        assert all(t.respiratory for t in trials)


class TestSplit:
    def trials_for(self, n_patients, per_patient=1):
        out = []
        for i in range(n_patients):
            for j in range(per_patient):
                t = object.__new__(type("T", (), {}))
                out.append(
                    type(
                        "Trial",
                        (),
                        {"trial_id": f"p{i}-t{j}", "patient_id": f"p{i}"},
                    )()
                )
        return out

    def test_637_patients_split_341_138_158(self):
        trials = self.trials_for(637)
        part = split_cohort(trials, (0.535, 0.217, 0.248), seed=0)
        counts = {k: 0 for k in ("training", "validation", "test")}
        for v in part.values():
            counts[v] += 1
        assert counts == {"training": 341, "validation": 138, "test": 158}

    def test_patient_level_grouping(self):
        trials = self.trials_for(50, per_patient=3)
        part = split_cohort(trials, (0.5, 0.25, 0.25), seed=3)
        by_patient = {}
        for t in trials:
            by_patient.setdefault(t.patient_id, set()).add(part[t.trial_id])
        assert all(len(s) == 1 for s in by_patient.values())

    def test_deterministic(self):
        trials = self.trials_for(100)
        a = split_cohort(trials, (0.5, 0.25, 0.25), seed=7)
        b = split_cohort(trials, (0.5, 0.25, 0.25), seed=7)
        assert a == b
        c = split_cohort(trials, (0.5, 0.25, 0.25), seed=8)
        assert a != c

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split_cohort(self.trials_for(10), (0.5, 0.5, 0.5), seed=0)

    def test_empty(self):
        with pytest.raises(ValueError):
            split_cohort([], (0.5, 0.25, 0.25), seed=0)
