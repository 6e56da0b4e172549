"""
Report documents and plot-ready merged CSVs.

This module handles run reporting including:
- ReportDocument: run id, config echo, metric rows, attack rows,
  timestamps and toolkit version
- Canonical JSON serialization with lossless round trips
- Merging many reports into one stably sorted CSV

Author: EgoLeak Team
Version: 1.0.0
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Union

import pandas as pd

from config import Config
from utils.error_handling import DataFormatError, MissingDataError, validate_required_fields
from utils.run_utils import canonical_json, config_digest, utc_timestamp
from .attack_service import ATTACK_COLUMNS, AttackRow
from .metrics_service import MetricReport

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["run_id", "command", "kind", "metric", "attribute", "capability", "view", "M",
                  "aggregator", "weight_scheme", "value", "delta", "n"]
_SORT_KEYS = ["run_id", "command", "kind", "metric", "attribute", "capability", "view", "M",
              "aggregator", "weight_scheme"]


@dataclass
class ReportDocument:
    """
    Everything one run reports.

    Metric and attack rows are held in their serialized (rounded) form so
    that a document read back from JSON equals the one written.
    """
    command: str
    config: Dict[str, Any]
    metrics: List[Dict[str, Any]] = field(default_factory=list)
    attack_rows: List[Dict[str, Any]] = field(default_factory=list)
    timestamps: Dict[str, Any] = field(default_factory=lambda: {"created": utc_timestamp(pinned=True)})
    version: str = Config.APP_VERSION

    @property
    def run_id(self) -> str:
        return config_digest({"command": self.command, **self.config})

    def add_metrics(self, reports: Sequence[MetricReport]) -> None:
        self.metrics.extend(report.to_dict() for report in reports)

    def add_attack_rows(self, rows: Sequence[AttackRow]) -> None:
        self.attack_rows.extend(row.to_dict() for row in rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "metrics": self.metrics,
            "attack_rows": self.attack_rows,
            "timestamps": self.timestamps,
            "version": self.version,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ReportDocument":
        validate_required_fields(payload, ("command", "config"), context="report")
        document = cls(
            command=payload["command"],
            config=dict(payload["config"]),
            metrics=list(payload.get("metrics", [])),
            attack_rows=list(payload.get("attack_rows", [])),
            timestamps=dict(payload.get("timestamps", {})),
            version=payload.get("version", Config.APP_VERSION),
        )
        if "run_id" in payload and payload["run_id"] != document.run_id:
            raise DataFormatError(f"report run_id {payload['run_id']} does not match its config echo")
        return document

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def read(cls, path: Union[str, Path]) -> "ReportDocument":
        path = Path(path)
        if not path.exists():
            raise MissingDataError(f"report not found: {path}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"malformed report {path}: {e}")
        return cls.from_dict(payload)


def report_rows(document: ReportDocument) -> List[Dict[str, Any]]:
    """Long-format rows of one report, one per metric or attack row."""
    rows = []
    for metric in document.metrics:
        parameters = metric.get("parameters", {})
        rows.append({
            "run_id": document.run_id, "command": document.command, "kind": "metric",
            "metric": metric["metric_name"], "attribute": parameters.get("attribute"),
            "value": metric["value"], "n": metric["n_evaluated"],
        })
    for attack in document.attack_rows:
        missing = [column for column in ATTACK_COLUMNS if column not in attack]
        if missing:
            raise DataFormatError(f"attack row in {document.run_id} lacks {', '.join(missing)}")
        rows.append({
            "run_id": document.run_id, "command": document.command, "kind": "attack", "metric": "accuracy",
            **{column: attack[column] for column in ATTACK_COLUMNS if column != "accuracy"},
            "value": attack["accuracy"],
        })
    return rows


def merge_reports(paths: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """
    Merge reports into one plot-ready table.

    Rows are sorted by their key columns and exact duplicates dropped, so the
    result does not depend on the order of ``paths``.
    """
    rows = [row for path in paths for row in report_rows(ReportDocument.read(path))]
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    frame["M"] = frame["M"].astype("Int64")
    frame["n"] = frame["n"].astype("Int64")
    frame = frame.sort_values(_SORT_KEYS, kind="mergesort", na_position="first").drop_duplicates()
    logger.info(f"Merged {len(paths)} reports into {len(frame)} rows")
    return frame.reset_index(drop=True)


def write_merged_csv(paths: Sequence[Union[str, Path]], out_path: Union[str, Path]) -> pd.DataFrame:
    frame = merge_reports(paths)
    frame.to_csv(out_path, index=False)
    return frame
