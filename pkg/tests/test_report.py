import json

import pandas as pd
import pytest

from services.attack_service import AttackRow
from services.metrics_service import MetricReport
from services.report_service import REPORT_COLUMNS, ReportDocument, merge_reports, write_merged_csv
from utils.error_handling import DataFormatError, MissingDataError, RunLockError
from utils.run_utils import canonical_json, config_digest, run_lock, sha256_path, utc_timestamp


def _document(command="retrieve", task="ego2exo"):
    document = ReportDocument(command, {"task": task, "k": [1, 5], "inputs": {"data": "abc"}},
                              timestamps={"created": None})
    document.add_metrics([MetricReport(f"{task}/HR@1", 2 / 3, 3, 1, {"k": 1}),
                          MetricReport(f"{task}/HR@5", 1.0, 3, 1, {"k": 5})])
    return document


class TestReportDocument:
    def test_json_round_trip(self, tmp_path):
        document = _document()
        document.add_attack_rows([AttackRow("gender", "1+3", "Ego", 3, "soft", "uniform", 0.61, 0.05, 20)])
        document.write(tmp_path / "r.json")
        loaded = ReportDocument.read(tmp_path / "r.json")
        assert loaded.to_dict() == document.to_dict()
        assert loaded.metrics[0]["value"] == 0.6667

    def test_serialization_is_canonical(self, tmp_path):
        text = _document().to_json()
        assert text.endswith("\n")
        assert text == canonical_json(json.loads(text))

    def test_run_id_is_the_config_digest(self):
        document = _document()
        assert document.run_id == config_digest({"command": "retrieve", **document.config})
        assert len(document.run_id) == 12
        assert _document(task="moment").run_id != document.run_id

    def test_tampered_run_id(self, tmp_path):
        payload = _document().to_dict()
        payload["run_id"] = "000000000000"
        (tmp_path / "r.json").write_text(json.dumps(payload))
        with pytest.raises(DataFormatError, match="run_id"):
            ReportDocument.read(tmp_path / "r.json")

    def test_missing_report(self, tmp_path):
        with pytest.raises(MissingDataError):
            ReportDocument.read(tmp_path / "absent.json")

    def test_timestamp_is_pinned_by_source_date_epoch(self, monkeypatch):
        monkeypatch.setattr("config.Config.SOURCE_DATE_EPOCH", None)
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
        assert ReportDocument("x", {}).timestamps == {"created": "1970-01-02T00:00:00Z"}


class TestMerge:
    def _write_pair(self, tmp_path):
        first = _document()
        second = ReportDocument("attack", {"attribute": "gender", "inputs": {}}, timestamps={"created": None})
        second.add_metrics([MetricReport("prior", 0.5, 20, parameters={"majority": "Female",
                                                                         "attribute": "gender"})])
        second.add_attack_rows([
            AttackRow("gender", "1+3", "Ego", 3, "soft", "uniform", 0.61, 0.05, 20),
            AttackRow("gender", "1+3", "Ego", 0, "soft", "uniform", 0.56, 0.0, 20),
        ])
        first.write(tmp_path / "a.json")
        second.write(tmp_path / "b.json")
        return tmp_path / "a.json", tmp_path / "b.json"

    def test_order_of_inputs_does_not_matter(self, tmp_path):
        a, b = self._write_pair(tmp_path)
        write_merged_csv([a, b], tmp_path / "ab.csv")
        write_merged_csv([b, a], tmp_path / "ba.csv")
        assert (tmp_path / "ab.csv").read_bytes() == (tmp_path / "ba.csv").read_bytes()

    def test_rows_and_columns(self, tmp_path):
        a, b = self._write_pair(tmp_path)
        frame = merge_reports([a, b, a])
        assert list(frame.columns) == REPORT_COLUMNS
        assert len(frame) == 5
        attack = frame[frame["kind"] == "attack"]
        assert list(attack["M"]) == [0, 3]
        assert attack["delta"].tolist() == [0.0, 0.05]
        prior = frame[frame["metric"] == "prior"].iloc[0]
        assert prior["attribute"] == "gender"
        assert pd.isna(prior["M"])

    def test_attack_row_without_columns(self, tmp_path):
        document = ReportDocument("attack", {}, attack_rows=[{"attribute": "gender"}])
        document.write(tmp_path / "bad.json")
        with pytest.raises(DataFormatError):
            merge_reports([tmp_path / "bad.json"])


class TestRunUtils:
    def test_lock_is_exclusive_and_released(self, tmp_path):
        with run_lock(tmp_path):
            with pytest.raises(RunLockError):
                with run_lock(tmp_path):
                    pass
        assert not (tmp_path / ".lock").exists()

    def test_directory_digest_ignores_hidden_files(self, tmp_path):
        (tmp_path / "a.txt").write_text("x")
        before = sha256_path(tmp_path)
        (tmp_path / ".lock").write_text("123")
        assert sha256_path(tmp_path) == before

    def test_unpinned_timestamp_without_epoch(self, monkeypatch):
        monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
        monkeypatch.setattr("config.Config.SOURCE_DATE_EPOCH", None)
        assert utc_timestamp(pinned=True) is None
        assert utc_timestamp().endswith("Z")
