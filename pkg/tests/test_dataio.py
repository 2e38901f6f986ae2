"""CSV ingestion, report emission, and round-trip fidelity."""

import json

import pytest

from iblcast import CohortSpec, ConfigurationError, IngestionError, generate_cohort
from iblcast.dataio import (
    TRAJECTORY_HEADER,
    emit_report,
    parse_trajectory_csv,
    write_trajectory_csv,
)

VALID = """beneficiary_id,week,engagement,intervention
a,1,0.500000,0
a,2,0.600000,1
a,3,0.400000,0
b,1,0.100000,0
b,2,0.200000,0
b,3,0.300000,1
"""


class TestParse:
    def test_two_beneficiaries_three_weeks(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(VALID)
        trajs = parse_trajectory_csv(path)
        assert [t.beneficiary_id for t in trajs] == ["a", "b"]
        assert all(len(t) == 3 for t in trajs)
        assert trajs[0].engagement == [0.5, 0.6, 0.4]
        assert trajs[0].intervention == [False, True, False]

    def test_out_of_range_engagement_cites_row(self, tmp_path):
        rows = VALID.splitlines()
        rows[6] = "b,3,1.200000,1"  # physical line 7
        path = tmp_path / "bad.csv"
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(IngestionError, match="row 7"):
            parse_trajectory_csv(path)

    def test_missing_week_is_contiguity_error(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text(
            "beneficiary_id,week,engagement,intervention\n"
            "a,1,0.5,0\n"
            "a,3,0.5,0\n"
        )
        with pytest.raises(IngestionError, match="expected week 2"):
            parse_trajectory_csv(path)

    def test_duplicate_week_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text(
            "beneficiary_id,week,engagement,intervention\n"
            "a,1,0.5,0\n"
            "a,1,0.5,0\n"
        )
        with pytest.raises(IngestionError):
            parse_trajectory_csv(path)

    def test_split_group_rejected(self, tmp_path):
        path = tmp_path / "split.csv"
        path.write_text(
            "beneficiary_id,week,engagement,intervention\n"
            "a,1,0.5,0\n"
            "b,1,0.5,0\n"
            "a,2,0.5,0\n"
        )
        with pytest.raises(IngestionError, match="two separate groups"):
            parse_trajectory_csv(path)

    def test_bad_intervention_flag(self, tmp_path):
        path = tmp_path / "flag.csv"
        path.write_text(
            "beneficiary_id,week,engagement,intervention\n" "a,1,0.5,2\n"
        )
        with pytest.raises(IngestionError, match="intervention"):
            parse_trajectory_csv(path)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("id,week,value,flag\na,1,0.5,0\n")
        with pytest.raises(IngestionError, match="header"):
            parse_trajectory_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(IngestionError):
            parse_trajectory_csv(path)


class TestRoundTrip:
    def test_synthetic_cohort_round_trips_identically(self, tmp_path):
        cohort = generate_cohort(CohortSpec(n=12), seed=17)
        path = tmp_path / "cohort.csv"
        write_trajectory_csv(cohort.trajectories, path)
        parsed = parse_trajectory_csv(path)
        assert len(parsed) == len(cohort.trajectories)
        for original, loaded in zip(cohort.trajectories, parsed):
            assert loaded.beneficiary_id == original.beneficiary_id
            assert loaded.engagement == original.engagement
            assert loaded.intervention == original.intervention

    def test_emit_is_byte_stable(self, tmp_path):
        cohort = generate_cohort(CohortSpec(n=5), seed=18)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trajectory_csv(cohort.trajectories, p1)
        write_trajectory_csv(cohort.trajectories, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestEmitReport:
    def test_fixed_decimal_formatting(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_report([{"x": 0.5, "name": "n"}], path, fieldnames=["x", "name"])
        assert path.read_text() == "x,name\n0.500000,n\n"

    def test_empty_records_header_only(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_report([], path, fieldnames=["a", "b"])
        assert path.read_text() == "a,b\n"

    def test_empty_without_fieldnames_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_report([], tmp_path / "r.csv")

    def test_lf_line_endings(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_report([{"a": 1}, {"a": 2}], path, fieldnames=["a"])
        assert b"\r" not in path.read_bytes()

    def test_json_mirrors_fields(self, tmp_path):
        path = tmp_path / "r.json"
        emit_report(
            [{"x": 0.123456789, "name": "n"}],
            path,
            fieldnames=["x", "name"],
            fmt="json",
        )
        data = json.loads(path.read_text())
        assert data == [{"x": 0.123457, "name": "n"}]

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_report([{"a": 1}], tmp_path / "r.x", fieldnames=["a"], fmt="xml")

    def test_booleans_emitted_as_bits(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_report(
            [{"f": True}, {"f": False}], path, fieldnames=["f"]
        )
        assert path.read_text() == "f\n1\n0\n"

    def test_header_matches_contract(self):
        assert TRAJECTORY_HEADER == [
            "beneficiary_id", "week", "engagement", "intervention",
        ]
