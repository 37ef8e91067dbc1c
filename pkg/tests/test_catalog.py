import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfnckit.catalog import (
    Diagnostic,
    Episode,
    IngestError,
    ObservationRecord,
    VariableSpec,
    assemble_episodes,
    catalog_from_json,
    catalog_to_json,
    parse_observation_stream,
    records_to_csv,
    validate_catalog,
)


CATALOG = [
    VariableSpec("heart_rate", "physiologic", "bpm", 20, 400),
    VariableSpec("hfnc", "intervention", "", 0, 1, therapy_max=1),
    VariableSpec("bipap", "intervention", "", 0, 1, therapy_max=1),
]


def meta(episode_id="ep1", **kw):
    defaults = dict(
        patient_id="p1", age_at_admission=2.0, sex="F", discharge_time=5000.0
    )
    defaults.update(kw)
    return Episode(episode_id=episode_id, **defaults)


class TestParse:
    def test_empty_stream(self):
        records, diags = parse_observation_stream("", CATALOG)
        assert records == [] and diags == []

    def test_single_line(self):
        records, diags = parse_observation_stream(
            "ep1,120,heart_rate,140\n", CATALOG
        )
        assert diags == []
        assert records == [ObservationRecord("ep1", 120.0, "heart_rate", 140.0)]

    def test_header_skipped(self):
        records, _ = parse_observation_stream(
            "episode_id,time_min,variable,value\nep1,1,heart_rate,99\n", CATALOG
        )
        assert len(records) == 1

    def test_unknown_variable_gets_line_number(self):
        text = "ep1,120,heart_rate,140\nep1,130,bogus,1\n"
        records, diags = parse_observation_stream(text, CATALOG)
        assert len(records) == 1
        assert diags == [Diagnostic(2, "unknown variable 'bogus'")]

    def test_non_numeric_value_rejected(self):
        _, diags = parse_observation_stream("ep1,120,heart_rate,abc\n", CATALOG)
        assert len(diags) == 1 and diags[0].line == 1

    def test_jsonl_input(self):
        line = '{"episode_id": "e", "time_min": 5, "variable": "heart_rate", "value": 100}'
        records, diags = parse_observation_stream(line, CATALOG)
        assert records[0].time == 5.0 and not diags

    def test_bytes_and_file_sources(self):
        data = b"ep1,1,heart_rate,99\n"
        assert parse_observation_stream(data, CATALOG)[0]
        assert parse_observation_stream(io.BytesIO(data), CATALOG)[0]

    def test_unreadable_source(self):
        with pytest.raises(IngestError):
            parse_observation_stream(12345, CATALOG)

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0, max_value=1e6, allow_nan=False),
                st.floats(min_value=-1e9, max_value=1e9, allow_nan=False),
            ),
            max_size=20,
        )
    )
    def test_roundtrip_lossless(self, rows):
        records = [
            ObservationRecord("ep1", t, "heart_rate", v) for t, v in rows
        ]
        reparsed, diags = parse_observation_stream(
            records_to_csv(records), CATALOG
        )
        assert not diags
        assert [(r.time, r.value) for r in reparsed] == [
            (float(f"{t:g}"), float(f"{v:g}")) for t, v in rows
        ]


class TestAssemble:
    def test_empty_records(self):
        eps = assemble_episodes([], [meta()])
        assert len(eps) == 1 and eps[0].records == []

    def test_support_events_extracted(self):
        records = [
            ObservationRecord("ep1", 60, "hfnc", 1),
            ObservationRecord("ep1", 180, "hfnc", 0),
        ]
        (ep,) = assemble_episodes(records, [meta()])
        assert [(e.time, e.modality, e.action) for e in ep.support_events] == [
            (60, "HFNC", "start"),
            (180, "HFNC", "stop"),
        ]

    def test_stop_without_start_is_fatal(self):
        records = [ObservationRecord("ep1", 50, "hfnc", 0)]
        with pytest.raises(IngestError, match="t=50"):
            assemble_episodes(records, [meta()])

    def test_unknown_episode_is_fatal(self):
        with pytest.raises(IngestError, match="ghost"):
            assemble_episodes(
                [ObservationRecord("ghost", 0, "heart_rate", 1)], [meta()]
            )

    def test_flatten_returns_input_multiset(self):
        records = [
            ObservationRecord("ep1", 9, "heart_rate", 1),
            ObservationRecord("ep2", 3, "heart_rate", 2),
            ObservationRecord("ep1", 3, "heart_rate", 3),
        ]
        eps = assemble_episodes(records, [meta("ep1"), meta("ep2")])
        flat = [r for ep in eps for r in ep.records]
        assert sorted(flat, key=lambda r: (r.episode_id, r.time)) == sorted(
            records, key=lambda r: (r.episode_id, r.time)
        )


class TestValidateCatalog:
    def drug(self, name="drugx"):
        return VariableSpec(name, "drug", "mg", 0, 10, therapy_max=10)

    def test_rare_therapy_removed(self):
        kept, removed, errors = validate_catalog(
            CATALOG + [self.drug()], {"drugx": 0.005, "hfnc": 0.9, "bipap": 0.2}
        )
        assert removed == ["drugx"] and not errors
        assert "drugx" not in [v.name for v in kept]

    def test_one_percent_boundary_retained(self):
        kept, removed, _ = validate_catalog(
            CATALOG + [self.drug()], {"drugx": 0.01, "hfnc": 0.9, "bipap": 0.2}
        )
        assert removed == []
        assert "drugx" in [v.name for v in kept]

    def test_inverted_range_is_error(self):
        bad = [VariableSpec("x", "lab", "", 10, 5)]
        _, _, errors = validate_catalog(bad)
        assert errors and "x" in errors[0]

    def test_duplicate_names(self):
        _, _, errors = validate_catalog([CATALOG[0], CATALOG[0]])
        assert any("duplicate" in e for e in errors)

    def test_idempotent(self):
        prev = {"hfnc": 0.9, "bipap": 0.2, "drugx": 0.5}
        once, _, _ = validate_catalog(CATALOG + [self.drug()], prev)
        twice, removed, _ = validate_catalog(once, prev)
        assert twice == once and removed == []

    def test_json_roundtrip(self):
        assert catalog_from_json(catalog_to_json(CATALOG)) == CATALOG
