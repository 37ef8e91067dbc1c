"""Variable catalog and ingestion of raw observation streams into episodes."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

VARIABLE_KINDS = {"physiologic", "lab", "drug", "intervention", "demographic"}
THERAPY_KINDS = {"drug", "intervention"}

MODALITIES = ("HFNC", "BiPAP", "NIMV", "Intubation")
ESCALATION_MODALITIES = ("BiPAP", "NIMV", "Intubation")

# intervention variable names that double as respiratory-support state markers;
# value > 0 charts a start, value == 0 charts a stop
SUPPORT_VARIABLES = {
    "hfnc": "HFNC",
    "bipap": "BiPAP",
    "nimv": "NIMV",
    "intubation": "Intubation",
}

DISPOSITIONS = {
    "GeneralCareFloor",
    "Home",
    "StepDownUnit",
    "OperatingRoom",
    "AnotherHospitalICU",
    "AnotherICUCurrentHospital",
    "Died",
    "StillAdmitted",
}


class CatalogError(ValueError):
    pass


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    unit: str = ""
    valid_min: float = float("-inf")
    valid_max: float = float("inf")
    therapy_max: float | None = None
    aggregation_group: str | None = None

    @property
    def feature(self) -> str:
        """Feature name after aggregation-group merging."""
        return self.aggregation_group or self.name


@dataclass(frozen=True)
class ObservationRecord:
    episode_id: str
    time: float  # minutes since episode admission
    variable: str
    value: float


@dataclass(frozen=True)
class SupportEvent:
    time: float
    modality: str  # one of MODALITIES
    action: str  # "start" | "stop"


@dataclass
class Episode:
    episode_id: str
    patient_id: str
    age_at_admission: float  # years
    sex: str
    diagnosis_tags: frozenset = frozenset()
    care_flags: frozenset = frozenset()  # subset of {"DNR", "DNI"}
    disposition: str = "StillAdmitted"
    discharge_time: float = 0.0
    records: list = field(default_factory=list)
    support_events: list = field(default_factory=list)

    @property
    def died(self) -> bool:
        return self.disposition == "Died"


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str


def catalog_from_json(text: str) -> list[VariableSpec]:
    raw = json.loads(text)
    specs = []
    for entry in raw:
        specs.append(
            VariableSpec(
                name=entry["name"],
                kind=entry["kind"],
                unit=entry.get("unit", ""),
                valid_min=float(entry.get("valid_min", float("-inf"))),
                valid_max=float(entry.get("valid_max", float("inf"))),
                therapy_max=entry.get("therapy_max"),
                aggregation_group=entry.get("aggregation_group"),
            )
        )
    return specs


def catalog_to_json(catalog: list[VariableSpec]) -> str:
    out = []
    for v in catalog:
        entry = {"name": v.name, "kind": v.kind, "unit": v.unit}
        if v.valid_min != float("-inf"):
            entry["valid_min"] = v.valid_min
        if v.valid_max != float("inf"):
            entry["valid_max"] = v.valid_max
        if v.therapy_max is not None:
            entry["therapy_max"] = v.therapy_max
        if v.aggregation_group is not None:
            entry["aggregation_group"] = v.aggregation_group
        out.append(entry)
    return json.dumps(out, indent=2, sort_keys=True)


def validate_catalog(
    catalog: list[VariableSpec],
    training_prevalence: dict[str, float] | None = None,
) -> tuple[list[VariableSpec], list[str], list[str]]:
    """Validate a catalog and prune rarely administered therapies.

    ``training_prevalence`` maps variable name -> fraction of training
    episodes in which the therapy was administered.  Drug/intervention
    variables with prevalence strictly below 1% are removed.

    Returns (validated catalog, removed therapy names, errors).
    """
    errors = []
    seen = set()
    for v in catalog:
        if v.name in seen:
            errors.append(f"duplicate variable name: {v.name}")
        seen.add(v.name)
        if v.kind not in VARIABLE_KINDS:
            errors.append(f"{v.name}: unknown kind {v.kind!r}")
        if not v.valid_min < v.valid_max:
            errors.append(f"{v.name}: valid_min must be < valid_max")
        if v.kind in THERAPY_KINDS:
            if v.therapy_max is None or v.therapy_max <= 0:
                errors.append(f"{v.name}: therapy variables need therapy_max > 0")
        elif v.therapy_max is not None:
            errors.append(f"{v.name}: therapy_max only valid for drug/intervention")
    if errors:
        return [], [], errors

    removed = []
    kept = []
    for v in catalog:
        if (
            training_prevalence is not None
            and v.kind in THERAPY_KINDS
            and training_prevalence.get(v.name, 0.0) < 0.01
        ):
            removed.append(v.name)
        else:
            kept.append(v)
    return kept, removed, []


def parse_observation_stream(
    source, catalog: list[VariableSpec]
) -> tuple[list[ObservationRecord], list[Diagnostic]]:
    """Parse a CSV or JSON-lines observation stream.

    CSV header is ``episode_id,time_min,variable,value``.  Records with
    unknown variables or non-numeric fields are rejected with a diagnostic
    carrying the 1-based line number; valid records are returned in stream
    order.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        raise IngestError(f"unreadable source: {type(source).__name__}")

    known = {v.name for v in catalog}
    records: list[ObservationRecord] = []
    diagnostics: list[Diagnostic] = []

    stripped = text.lstrip()
    if stripped.startswith("{"):
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = ObservationRecord(
                    episode_id=str(obj["episode_id"]),
                    time=float(obj["time_min"]),
                    variable=str(obj["variable"]),
                    value=float(obj["value"]),
                )
            except (ValueError, KeyError, TypeError) as exc:
                diagnostics.append(Diagnostic(lineno, f"malformed JSON record: {exc}"))
                continue
            _validate_record(rec, known, lineno, records, diagnostics)
        return records, diagnostics

    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row:
            continue
        if lineno == 1 and row[0] == "episode_id":
            continue
        if len(row) != 4:
            diagnostics.append(Diagnostic(lineno, f"expected 4 fields, got {len(row)}"))
            continue
        try:
            rec = ObservationRecord(row[0], float(row[1]), row[2], float(row[3]))
        except ValueError:
            diagnostics.append(Diagnostic(lineno, f"non-numeric field in {row!r}"))
            continue
        _validate_record(rec, known, lineno, records, diagnostics)
    return records, diagnostics


def _validate_record(rec, known, lineno, records, diagnostics):
    if rec.variable not in known:
        diagnostics.append(Diagnostic(lineno, f"unknown variable {rec.variable!r}"))
    elif rec.time < 0:
        diagnostics.append(Diagnostic(lineno, f"negative time {rec.time}"))
    else:
        records.append(rec)


def episode_from_metadata(obj: dict) -> Episode:
    disposition = obj.get("disposition", "StillAdmitted")
    if disposition not in DISPOSITIONS:
        raise IngestError(
            f"episode {obj.get('episode_id')}: unknown disposition {disposition!r}"
        )
    return Episode(
        episode_id=str(obj["episode_id"]),
        patient_id=str(obj["patient_id"]),
        age_at_admission=float(obj["age_at_admission"]),
        sex=obj.get("sex", "unknown"),
        diagnosis_tags=frozenset(obj.get("diagnosis_tags", [])),
        care_flags=frozenset(obj.get("care_flags", [])),
        disposition=disposition,
        discharge_time=float(obj["discharge_time"]),
    )


def episode_metadata_dict(ep: Episode) -> dict:
    return {
        "episode_id": ep.episode_id,
        "patient_id": ep.patient_id,
        "age_at_admission": ep.age_at_admission,
        "sex": ep.sex,
        "diagnosis_tags": sorted(ep.diagnosis_tags),
        "care_flags": sorted(ep.care_flags),
        "disposition": ep.disposition,
        "discharge_time": ep.discharge_time,
    }


def assemble_episodes(
    records: list[ObservationRecord], metadata: list[dict | Episode]
) -> list[Episode]:
    """Group records into per-episode structures and extract support events.

    Support-state interventions (see SUPPORT_VARIABLES) become start/stop
    events; the records themselves are retained as regular inputs.
    """
    episodes: dict[str, Episode] = {}
    order = []
    for meta in metadata:
        ep = meta if isinstance(meta, Episode) else episode_from_metadata(meta)
        episodes[ep.episode_id] = ep
        order.append(ep.episode_id)

    for rec in records:
        ep = episodes.get(rec.episode_id)
        if ep is None:
            raise IngestError(f"record references unknown episode {rec.episode_id!r}")
        ep.records.append(rec)

    for ep in episodes.values():
        ep.records.sort(key=lambda r: r.time)
        events = []
        for rec in ep.records:
            modality = SUPPORT_VARIABLES.get(rec.variable)
            if modality is not None:
                action = "start" if rec.value > 0 else "stop"
                events.append(SupportEvent(rec.time, modality, action))
        events.sort(key=lambda e: e.time)
        _check_alternation(ep.episode_id, events)
        ep.support_events = events
    return [episodes[eid] for eid in order]


def _check_alternation(episode_id: str, events: list[SupportEvent]) -> None:
    active: dict[str, bool] = {}
    for ev in events:
        on = active.get(ev.modality, False)
        if ev.action == "start" and on:
            raise IngestError(
                f"episode {episode_id}: {ev.modality} start at t={ev.time:g} "
                "while already active"
            )
        if ev.action == "stop" and not on:
            raise IngestError(
                f"episode {episode_id}: {ev.modality} stop at t={ev.time:g} "
                "without prior start"
            )
        active[ev.modality] = ev.action == "start"


def records_to_csv(records: list[ObservationRecord]) -> str:
    lines = ["episode_id,time_min,variable,value"]
    for r in records:
        lines.append(f"{r.episode_id},{r.time:g},{r.variable},{r.value:g}")
    return "\n".join(lines) + "\n"
