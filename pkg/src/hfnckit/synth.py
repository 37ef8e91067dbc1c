"""Synthetic cohort generator with a configurable planted signal.

Episodes are built from explicit scenario templates (single period,
re-initiation inside a period, re-initiation >24h after stop, step-down
guard, censoring dispositions, and the exclusion rules), so the generator
can state every period boundary and outcome independently of the
segmentation engine.  A latent per-trial severity drives both the observable
vital-sign drift and the time to failure.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .catalog import Episode, ObservationRecord, SupportEvent, VariableSpec

# log-normal time-to-failure parameters, truncation-corrected so draws
# capped at 24h land at median ~7.6h and 80th percentile ~14.1h
TTF_MU = 6.3046706
TTF_SIGMA = 0.9449125

PERIOD = 1440.0

SCENARIOS = (
    "single",
    "reinit_inside",
    "reinit_after_24h",
    "stepdown_guard",
    "censored_death",
    "excluded_or",
    "excluded_ambiguous",
    "excluded_apnea",
    "excluded_age",
    "excluded_dnr",
    "guard_only",
)


@dataclass
class SynthConfig:
    n_patients: int = 637
    trials_target: int = 834
    failure_rate: float = 0.21
    respiratory_fraction: float = 0.706
    reinit_inside_fraction: float = 0.08
    reinit_after_24h_fraction: float = 0.07
    stepdown_fraction: float = 0.03
    censoring_fraction: float = 0.04
    inwindow_discharge_fraction: float = 0.10  # successes resolved by discharge
    mortality_rate: float = 0.05
    signal_strength: float = 0.5  # 0 = labels independent of features
    charting_interval_min: float = 35.0  # mean gap; gaps clipped to [1, 240]
    seed: int = 0

    def validate(self) -> None:
        rates = [
            self.failure_rate,
            self.respiratory_fraction,
            self.reinit_inside_fraction,
            self.reinit_after_24h_fraction,
            self.stepdown_fraction,
            self.censoring_fraction,
            self.inwindow_discharge_fraction,
            self.mortality_rate,
        ]
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("all rate parameters must lie in [0, 1]")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if self.trials_target < 1 or self.n_patients < 1:
            raise ValueError("need at least one patient and one trial")
        if self.trials_target < self.n_patients:
            raise ValueError(
                "infeasible config: trials_target smaller than n_patients"
            )


def default_catalog() -> list[VariableSpec]:
    V = VariableSpec
    return [
        V("heart_rate", "physiologic", "bpm", 20, 400),
        V("resp_rate", "physiologic", "breaths/min", 0, 150),
        V("spo2", "physiologic", "%", 50, 100),
        V("fio2", "physiologic", "fraction", 0.21, 1.0),
        V("sf_ratio", "physiologic", "", 50, 500),
        V("sbp_invasive", "physiologic", "mmHg", 30, 250, aggregation_group="sbp"),
        V("sbp_noninvasive", "physiologic", "mmHg", 30, 250, aggregation_group="sbp"),
        V("dbp", "physiologic", "mmHg", 15, 150),
        V("temperature", "physiologic", "C", 30, 43),
        V("ph", "lab", "", 6.8, 7.8),
        V("pco2", "lab", "mmHg", 10, 130),
        V("wbc", "lab", "1e3/uL", 0, 100),
        V("lactate", "lab", "mmol/L", 0, 20),
        V("hfnc_flow", "intervention", "L/min", 0, 60, therapy_max=60),
        V("hfnc", "intervention", "", 0, 1, therapy_max=1),
        V("bipap", "intervention", "", 0, 1, therapy_max=1),
        V("nimv", "intervention", "", 0, 1, therapy_max=1),
        V("intubation", "intervention", "", 0, 1, therapy_max=1),
        V("epinephrine", "drug", "ug/kg/min", 0, 5, therapy_max=1),
        V("rare_drug", "drug", "mg", 0, 100, therapy_max=10),
        V("age", "demographic", "years"),
    ]


# baseline (mean, sd) of charted values, and signed drift applied per unit
# of severity effect
_BASELINES = {
    "heart_rate": (125.0, 15.0, 30.0),
    "resp_rate": (32.0, 6.0, 25.0),
    "spo2": (97.0, 1.5, -8.0),
    "fio2": (0.32, 0.05, 0.3),
    "sf_ratio": (320.0, 30.0, -150.0),
    "sbp": (95.0, 12.0, -15.0),
    "dbp": (55.0, 9.0, -8.0),
    "temperature": (37.1, 0.4, 0.8),
    "ph": (7.38, 0.04, -0.15),
    "pco2": (42.0, 7.0, 15.0),
    "wbc": (9.5, 3.0, 4.0),
    "lactate": (1.2, 0.5, 1.8),
}

_CHART_PROB = {
    "heart_rate": 0.9,
    "resp_rate": 0.9,
    "spo2": 0.9,
    "temperature": 0.5,
    "fio2": 0.6,
    "sf_ratio": 0.6,
    "sbp": 0.5,
    "dbp": 0.5,
    "ph": 0.12,
    "pco2": 0.12,
    "wbc": 0.08,
    "lactate": 0.08,
}


def _sample_age(rng) -> float:
    u = rng.random()
    if u < 0.454:
        return rng.uniform(0.05, 1.0)
    if u < 0.819:
        return rng.uniform(1.0, 5.0)
    if u < 0.891:
        return rng.uniform(5.0, 10.0)
    return rng.uniform(10.0, 18.9)


def _sample_ttf(rng) -> float:
    while True:
        t = rng.lognormal(TTF_MU, TTF_SIGMA)
        if 5.0 <= t < PERIOD:
            return t


@dataclass
class _PeriodPlan:
    start: float
    end: float
    outcome: str
    resolution: float
    severity: float  # drift amplitude inside the period


@dataclass
class _EpisodePlan:
    scenario: str
    periods: list
    support: list  # (time, modality, 1|0)
    discharge: float
    disposition: str
    excluded_reason: str = ""
    mortality: bool = False


class CohortGenerator:
    def __init__(self, config: SynthConfig):
        config.validate()
        self.config = config
        self.rng = np.random.default_rng(config.seed)

    # ------------------------------------------------------------------ plans

    def _plan_target(self, start: float, force_full_window: bool = False):
        """Outcome plan for one period starting at ``start``."""
        cfg, rng = self.config, self.rng
        if rng.random() < cfg.failure_rate:
            ttf = _sample_ttf(rng)
            severity = max(0.3, rng.normal(1.0, 0.2))
            return "Failure", start + ttf, severity
        severity = 0.0
        if not force_full_window and rng.random() < cfg.inwindow_discharge_fraction:
            return "Success-discharge", start + rng.uniform(400, 1380), severity
        return "Success", start + PERIOD, severity

    def _escalation_modality(self):
        return ["bipap", "nimv", "intubation"][int(self.rng.integers(3))]

    def _plan_episode(self, scenario: str) -> _EpisodePlan:
        rng = self.rng
        t0 = float(rng.uniform(30, 600))
        support = []
        periods = []

        def schedule_period(start, allow_discharge=True, min_fail=None):
            kind, resolution, severity = self._plan_target(
                start, force_full_window=not allow_discharge
            )
            if min_fail is not None and kind == "Failure":
                while resolution - start < min_fail:
                    resolution = start + _sample_ttf(rng)
            outcome = "Success" if kind.startswith("Success") else "Failure"
            return kind, _PeriodPlan(start, start + PERIOD, outcome, resolution, severity)

        if scenario == "single":
            kind, plan = schedule_period(t0)
            support.append((t0, "hfnc", 1))
            return self._finish_simple(kind, plan, support, periods)

        if scenario == "reinit_inside":
            # HFNC withdrawn and restarted while the original period is open
            stop = t0 + rng.uniform(60, 240)
            restart = stop + rng.uniform(10, 120)
            kind, plan = schedule_period(t0, min_fail=restart - t0 + 30)
            if kind == "Success-discharge" and plan.resolution < restart + 60:
                plan.resolution = restart + 60.0
            support.append((t0, "hfnc", 1))
            support.append((stop, "hfnc", 0))
            support.append((restart, "hfnc", 1))
            return self._finish_simple(kind, plan, support, periods,
                                       hfnc_open=True, scenario=scenario)

        if scenario == "reinit_after_24h":
            # first period runs its full window as a success, HFNC stops,
            # and a second initiation >24h later opens a second period
            stop1 = t0 + rng.uniform(600, 1380)
            p1 = _PeriodPlan(t0, t0 + PERIOD, "Success", t0 + PERIOD, 0.0)
            t1 = stop1 + PERIOD + 1 + rng.uniform(10, 400)
            kind, p2 = schedule_period(t1)
            support.append((t0, "hfnc", 1))
            support.append((stop1, "hfnc", 0))
            support.append((t1, "hfnc", 1))
            periods.append(p1)
            return self._finish_simple(kind, p2, support, periods,
                                       scenario=scenario)

        if scenario in ("stepdown_guard", "guard_only"):
            # HFNC begun <30 min after an NIMV step-down opens no period
            nstart = t0
            nstop = nstart + rng.uniform(120, 400)
            guarded = nstop + rng.uniform(5, 25)
            gstop = guarded + rng.uniform(60, 300)
            support.extend(
                [(nstart, "nimv", 1), (nstop, "nimv", 0),
                 (guarded, "hfnc", 1), (gstop, "hfnc", 0)]
            )
            if scenario == "guard_only":
                discharge = gstop + rng.uniform(300, 1200)
                return _EpisodePlan(scenario, [], support, discharge,
                                    "GeneralCareFloor", "no-HFNC")
            t1 = gstop + PERIOD + 1 + rng.uniform(10, 300)
            kind, plan = schedule_period(t1)
            support.append((t1, "hfnc", 1))
            return self._finish_simple(kind, plan, support, periods,
                                       scenario=scenario)

        if scenario == "censored_death":
            # in-window death: period censored, episode retained, no trial
            death = t0 + rng.uniform(200, 1380)
            plan = _PeriodPlan(t0, death, "Censored", death, 0.0)
            support.append((t0, "hfnc", 1))
            support.append((death, "hfnc", 0))
            return _EpisodePlan(scenario, [plan], support, death, "Died",
                                mortality=True)

        if scenario in ("excluded_or", "excluded_ambiguous"):
            cut = t0 + rng.uniform(200, 1380)
            plan = _PeriodPlan(t0, cut, "Censored", cut, 0.0)
            support.append((t0, "hfnc", 1))
            support.append((cut, "hfnc", 0))
            if scenario == "excluded_or":
                dispo, reason = "OperatingRoom", "OR-truncated"
            else:
                dispo = ["AnotherHospitalICU", "AnotherICUCurrentHospital"][
                    int(rng.integers(2))
                ]
                reason = "ambiguous-disposition"
            return _EpisodePlan(scenario, [plan], support, cut, dispo, reason)

        if scenario in ("excluded_apnea", "excluded_age", "excluded_dnr"):
            kind, plan = schedule_period(t0)
            support.append((t0, "hfnc", 1))
            ep = self._finish_simple(kind, plan, support, periods,
                                     scenario=scenario)
            ep.excluded_reason = {
                "excluded_apnea": "apnea",
                "excluded_age": "age>=19",
                "excluded_dnr": "DNR/DNI",
            }[scenario]
            return ep

        raise ValueError(f"unknown scenario {scenario!r}")

    def _finish_simple(self, kind, plan, support, periods,
                       hfnc_open=False, scenario="single"):
        rng = self.rng
        periods.append(plan)
        mortality = rng.random() < self.config.mortality_rate
        if kind == "Failure":
            modality = self._escalation_modality()
            support.append((plan.resolution, modality, 1))
            support.append((plan.resolution, "hfnc", 0))
            support.append(
                (plan.resolution + rng.uniform(300, 2000), modality, 0)
            )
            discharge = plan.resolution + rng.uniform(600, 3000)
            dispo = "Died" if mortality else "GeneralCareFloor"
            plan.end = min(plan.start + PERIOD, discharge)
        elif kind == "Success-discharge":
            discharge = plan.resolution
            plan.end = discharge
            dispo = ["GeneralCareFloor", "Home", "StepDownUnit"][
                int(rng.integers(3))
            ]
            support.append((discharge, "hfnc", 0))
            mortality = False
        else:  # full-window success
            discharge = plan.start + PERIOD + rng.uniform(120, 1500)
            dispo = "Died" if mortality else "GeneralCareFloor"
            stop = plan.start + PERIOD + rng.uniform(0, discharge - plan.start - PERIOD)
            support.append((stop, "hfnc", 0))
        return _EpisodePlan(scenario, periods, support, discharge, dispo,
                            mortality=mortality)

    # ----------------------------------------------------------------- charts

    def _chart_episode(self, episode_id: str, plan: _EpisodePlan,
                       rare_drug: bool) -> list[ObservationRecord]:
        cfg, rng = self.config, self.rng
        records = []
        horizon = min(plan.discharge, 7000.0)
        # per-episode baseline offsets
        offsets = {f: rng.normal(0.0, 0.3) * sd for f, (_, sd, _) in _BASELINES.items()}

        t = 0.0
        times = []
        while t <= horizon:
            times.append(t)
            t += float(np.clip(rng.exponential(cfg.charting_interval_min), 1.0, 240.0))
        times = np.asarray(times)

        s = cfg.signal_strength
        hfnc_windows = [
            (p.start, p.resolution, p.severity) for p in plan.periods
            if p.outcome == "Failure"
        ]

        def failure_effect(tv: float) -> float:
            e = 0.0
            for start, res, sev in hfnc_windows:
                if start <= tv <= res:
                    ramp = (tv - start) / max(res - start, 1.0)
                    e += s * sev * (0.4 + 0.6 * ramp)
            return e

        mort_effect = 0.5 * s if plan.mortality else 0.0
        active_hfnc = _ActiveTracker(plan.support, "hfnc")
        for tv in times:
            e = failure_effect(float(tv))
            for feat, prob in _CHART_PROB.items():
                if rng.random() >= prob:
                    continue
                mean, sd, drift = _BASELINES[feat]
                e_feat = e + (mort_effect if feat in _MORTALITY_FEATURES else 0.0)
                value = mean + offsets[feat] + drift * e_feat + rng.normal(0.0, sd)
                if feat == "sbp":
                    name = "sbp_invasive" if rng.random() < 0.3 else "sbp_noninvasive"
                else:
                    name = feat
                value = float(np.clip(value, *_CLIP[feat]))
                records.append(ObservationRecord(episode_id, float(tv), name, value))
            if active_hfnc.active_at(float(tv)) and rng.random() < 0.8:
                flow = float(np.clip(rng.normal(15 + 20 * e, 4.0), 2.0, 60.0))
                records.append(
                    ObservationRecord(episode_id, float(tv), "hfnc_flow", flow)
                )
            if rng.random() < 0.02:
                records.append(
                    ObservationRecord(
                        episode_id, float(tv), "epinephrine",
                        float(rng.uniform(0.01, 0.5)),
                    )
                )
        if rare_drug:
            records.append(
                ObservationRecord(episode_id, float(times[0]), "rare_drug", 5.0)
            )
        for when, modality, on in plan.support:
            if when <= horizon:
                records.append(
                    ObservationRecord(episode_id, float(when), modality, float(on))
                )
        records.sort(key=lambda r: r.time)
        return records

    # --------------------------------------------------------------- generate

    def generate(self) -> tuple[list[Episode], dict, list[VariableSpec]]:
        cfg, rng = self.config, self.rng
        f2 = cfg.reinit_after_24h_fraction
        n_core = int(np.ceil(cfg.trials_target / (1.0 + f2)))
        scenario_list = []
        n_inside = int(round(cfg.reinit_inside_fraction * n_core))
        n_after = int(round(f2 * n_core))
        n_guard = int(round(cfg.stepdown_fraction * n_core))
        n_death = int(round(0.5 * cfg.censoring_fraction * n_core))
        scenario_list += ["reinit_inside"] * n_inside
        scenario_list += ["reinit_after_24h"] * n_after
        scenario_list += ["stepdown_guard"] * n_guard
        scenario_list += ["censored_death"] * n_death
        scenario_list += ["single"] * max(n_core - len(scenario_list), 0)
        # non-trial episodes exercising censoring dispositions and exclusions
        n_or = max(int(round(0.25 * cfg.censoring_fraction * n_core)), 1)
        n_amb = max(int(round(0.25 * cfg.censoring_fraction * n_core)), 1)
        extras = (
            ["excluded_or"] * n_or
            + ["excluded_ambiguous"] * n_amb
            + ["excluded_apnea"] * max(int(0.02 * n_core), 1)
            + ["excluded_age"] * max(int(0.01 * n_core), 1)
            + ["excluded_dnr"] * max(int(0.01 * n_core), 1)
            + ["guard_only"] * 1
        )
        scenario_list += extras
        order = rng.permutation(len(scenario_list))
        scenario_list = [scenario_list[j] for j in order]

        episodes = []
        manifest_trials = []
        manifest_exclusions = []
        scenario_counts = {name: 0 for name in SCENARIOS}
        mortality_labels = {}

        for i, scenario in enumerate(scenario_list):
            episode_id = f"ep{i:05d}"
            patient_id = f"p{i % cfg.n_patients:05d}"
            plan = self._plan_episode(scenario)
            scenario_counts[scenario] += 1

            age = _sample_age(rng)
            if plan.excluded_reason == "age>=19":
                age = float(rng.uniform(19.0, 45.0))
            tags = set()
            if rng.random() < cfg.respiratory_fraction:
                tags.add("respiratory")
            if plan.excluded_reason == "apnea":
                tags.add("apnea")
            flags = set()
            if plan.excluded_reason == "DNR/DNI":
                flags.add("DNR" if rng.random() < 0.5 else "DNI")

            rare_drug = rng.random() < 0.005
            records = self._chart_episode(episode_id, plan, rare_drug)
            ep = Episode(
                episode_id=episode_id,
                patient_id=patient_id,
                age_at_admission=age,
                sex="F" if rng.random() < 0.432 else "M",
                diagnosis_tags=frozenset(tags),
                care_flags=frozenset(flags),
                disposition=plan.disposition,
                discharge_time=plan.discharge,
                records=records,
                support_events=[
                    SupportEvent(t, _MODALITY_NAMES[m], "start" if on else "stop")
                    for t, m, on in sorted(plan.support)
                ],
            )
            episodes.append(ep)
            mortality_labels[episode_id] = bool(plan.mortality)

            if plan.excluded_reason:
                manifest_exclusions.append(
                    {"episode_id": episode_id, "reason": plan.excluded_reason}
                )
                continue
            for pi, p in enumerate(plan.periods):
                manifest_trials.append(
                    {
                        "episode_id": episode_id,
                        "period_index": pi,
                        "period_start": p.start,
                        "period_end": p.end,
                        "outcome": p.outcome,
                        "resolution_time": p.resolution,
                    }
                )

        manifest = {
            "config": asdict(cfg),
            "scenario_counts": scenario_counts,
            "trials": manifest_trials,
            "exclusions": manifest_exclusions,
            "mortality": mortality_labels,
        }
        return episodes, manifest, default_catalog()


_MODALITY_NAMES = {
    "hfnc": "HFNC",
    "bipap": "BiPAP",
    "nimv": "NIMV",
    "intubation": "Intubation",
}

# features whose drift also responds to the planted mortality signal
_MORTALITY_FEATURES = {"heart_rate", "sbp", "dbp", "lactate", "wbc", "temperature"}

_CLIP = {
    "heart_rate": (25, 395),
    "resp_rate": (2, 145),
    "spo2": (52, 100),
    "fio2": (0.21, 1.0),
    "sf_ratio": (55, 495),
    "sbp": (32, 245),
    "dbp": (16, 145),
    "temperature": (30.5, 42.5),
    "ph": (6.85, 7.75),
    "pco2": (11, 125),
    "wbc": (0.2, 95),
    "lactate": (0.1, 19),
}


class _ActiveTracker:
    """Whether a modality is active at a query time, from (time, name, on)."""

    def __init__(self, support, modality):
        self.events = sorted(
            (t, on) for t, m, on in support if m == modality
        )

    def active_at(self, t: float) -> bool:
        state = False
        for when, on in self.events:
            if when > t:
                break
            state = bool(on)
        return state


def generate_cohort(config: SynthConfig):
    """Generate (episodes, ground-truth manifest, catalog) for one seed."""
    return CohortGenerator(config).generate()
