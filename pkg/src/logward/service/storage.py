"""Durable state for the service: append-only journals plus flat files.

Journals (batches, alerts, models) are replayed into in-memory indexes at
startup; the journal append is always the commit point, so a crash between
file writes and the append leaves only unreferenced files behind.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from .. import jsonl
from ..continual import FeedbackStore
from ..features import FeatureBundle
from ..parsing import ParsedEvent, QuarantinedLine, RawLogLine

OPEN = "open"
ALERT_STATUSES = (OPEN, "false_positive", "confirmed")


class StorageError(ValueError):
    pass


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


@dataclass
class IngestBatch:
    batch_id: str
    source: str
    raw_count: int
    quarantine_count: int
    path: str
    created_at: str

    def __post_init__(self):
        if self.raw_count < 0 or self.quarantine_count < 0:
            raise StorageError("batch counts must be >= 0")
        if self.quarantine_count > self.raw_count:
            raise StorageError("quarantined lines cannot exceed raw lines")

    @property
    def valid_count(self) -> int:
        return self.raw_count - self.quarantine_count

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IngestBatch":
        return cls(
            batch_id=d["batch_id"],
            source=d["source"],
            raw_count=int(d["raw_count"]),
            quarantine_count=int(d["quarantine_count"]),
            path=d["path"],
            created_at=d["created_at"],
        )


@dataclass
class AlertRecord:
    alert_id: str
    batch_id: str
    line_id: int
    event_id: int
    event_template: str
    parameter_list: list[str]
    p1: float
    p2: float
    fused: float
    y_hat: int
    version: int
    created_at: str
    status: str = OPEN
    verdict_by: str = ""
    verdict_at: str | None = None

    def __post_init__(self):
        if self.y_hat != 1:
            raise StorageError("only anomaly decisions become alerts")
        if self.status not in ALERT_STATUSES:
            raise StorageError(f"status must be one of {ALERT_STATUSES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AlertRecord":
        return cls(
            alert_id=d["alert_id"],
            batch_id=d["batch_id"],
            line_id=int(d["line_id"]),
            event_id=int(d["event_id"]),
            event_template=d["event_template"],
            parameter_list=list(d["parameter_list"]),
            p1=float(d["p1"]),
            p2=float(d["p2"]),
            fused=float(d["fused"]),
            y_hat=int(d["y_hat"]),
            version=int(d["version"]),
            created_at=d["created_at"],
            status=d.get("status", OPEN),
            verdict_by=d.get("verdict_by", ""),
            verdict_at=d.get("verdict_at"),
        )


@dataclass
class ModelRow:
    version: int
    path: str
    created_at: str
    meta: dict = field(default_factory=dict)


def _write_jsonl_atomic(path: str, records: list[dict]) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class Storage:
    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self._lock = threading.Lock()
        self.batches_path = os.path.join(data_dir, "batches.jsonl")
        self.alerts_path = os.path.join(data_dir, "alerts.jsonl")
        self.models_path = os.path.join(data_dir, "models.jsonl")
        self.feedback = FeedbackStore(os.path.join(data_dir, "feedback.jsonl"))
        self.batches: dict[str, IngestBatch] = {}
        self.alerts: dict[str, AlertRecord] = {}
        self.models: dict[int, ModelRow] = {}
        self._activations: list[dict] = []
        self._replay()

    # -- journal replay -------------------------------------------------

    def _replay(self) -> None:
        for record in jsonl.iter_records(self.batches_path):
            batch = IngestBatch.from_dict(record)
            self.batches[batch.batch_id] = batch
        for record in jsonl.iter_records(self.alerts_path):
            if record.get("type") == "verdict":
                alert = self.alerts[record["alert_id"]]
                alert.status = record["verdict"]
                alert.verdict_by = record["analyst"]
                alert.verdict_at = record["at"]
            else:
                alert = AlertRecord.from_dict(record)
                self.alerts[alert.alert_id] = alert
        for record in jsonl.iter_records(self.models_path):
            if record.get("type") == "activate":
                self._activations.append(record)
            else:
                row = ModelRow(
                    version=int(record["version"]),
                    path=record["path"],
                    created_at=record["created_at"],
                    meta=dict(record.get("meta", {})),
                )
                self.models[row.version] = row

    # -- batches ---------------------------------------------------------

    def raw_path(self, batch_id: str) -> str:
        return os.path.join(self.data_dir, "raw", f"{batch_id}.jsonl")

    def quarantine_path(self, batch_id: str) -> str:
        return os.path.join(self.data_dir, "quarantine", f"{batch_id}.jsonl")

    def events_path(self, batch_id: str) -> str:
        return os.path.join(self.data_dir, "events", f"{batch_id}.jsonl")

    def run_journal_path(self, run_id: str) -> str:
        return os.path.join(self.data_dir, "runs", f"{run_id}.jsonl")

    def add_batch(
        self,
        batch: IngestBatch,
        lines: list[RawLogLine],
        quarantined: list[QuarantinedLine],
    ) -> None:
        with self._lock:
            if batch.batch_id in self.batches:
                raise StorageError(f"batch already exists: {batch.batch_id}")
            _write_jsonl_atomic(self.raw_path(batch.batch_id), [asdict(l) for l in lines])
            if quarantined:
                _write_jsonl_atomic(
                    self.quarantine_path(batch.batch_id), [asdict(q) for q in quarantined]
                )
            jsonl.append_record(self.batches_path, batch.to_dict())
            self.batches[batch.batch_id] = batch

    def get_batch(self, batch_id: str) -> IngestBatch:
        try:
            return self.batches[batch_id]
        except KeyError:
            raise KeyError(f"unknown batch: {batch_id}") from None

    def read_raw(self, batch_id: str) -> list[RawLogLine]:
        self.get_batch(batch_id)
        return [RawLogLine(**r) for r in jsonl.iter_records(self.raw_path(batch_id))]

    def append_quarantine(self, batch_id: str, quarantined: list[QuarantinedLine]) -> None:
        if quarantined:
            jsonl.append_records(self.quarantine_path(batch_id), [asdict(q) for q in quarantined])

    def write_events(self, batch_id: str, events: list[ParsedEvent]) -> None:
        _write_jsonl_atomic(self.events_path(batch_id), [e.to_dict() for e in events])

    def read_events(self, batch_id: str) -> list[ParsedEvent]:
        path = self.events_path(batch_id)
        if not os.path.exists(path):
            raise KeyError(f"no parsed events stored for batch: {batch_id}")
        return [ParsedEvent.from_dict(r) for r in jsonl.iter_records(path)]

    # -- alerts ----------------------------------------------------------

    def add_alerts(self, alerts: list[AlertRecord]) -> None:
        with self._lock:
            jsonl.append_records(self.alerts_path, [a.to_dict() for a in alerts])
            for alert in alerts:
                self.alerts[alert.alert_id] = alert

    def get_alert(self, alert_id: str) -> AlertRecord:
        try:
            return self.alerts[alert_id]
        except KeyError:
            raise KeyError(f"unknown alert: {alert_id}") from None

    def set_verdict(self, alert_id: str, verdict: str, analyst: str, at: str) -> AlertRecord:
        with self._lock:
            alert = self.get_alert(alert_id)
            if alert.status != OPEN:
                raise StorageError(f"alert {alert_id} already closed as {alert.status}")
            if verdict not in ALERT_STATUSES or verdict == OPEN:
                raise StorageError(f"verdict must be one of {ALERT_STATUSES[1:]}")
            jsonl.append_record(
                self.alerts_path,
                {"type": "verdict", "alert_id": alert_id, "verdict": verdict, "analyst": analyst, "at": at},
            )
            alert.status = verdict
            alert.verdict_by = analyst
            alert.verdict_at = at
            return alert

    def list_alerts(
        self,
        status: str | None = None,
        since: str | None = None,
        page: int = 1,
        page_size: int = 50,
    ) -> tuple[list[AlertRecord], int]:
        if status is not None and status not in ALERT_STATUSES:
            raise StorageError(f"status filter must be one of {ALERT_STATUSES}")
        if page < 1:
            raise StorageError("page must be >= 1")
        if not 1 <= page_size <= 500:
            raise StorageError("page_size must be in [1, 500]")
        rows = [
            a
            for a in self.alerts.values()
            if (status is None or a.status == status)
            and (since is None or a.created_at > since)
        ]
        rows.sort(key=lambda a: (a.created_at, a.alert_id), reverse=True)
        start = (page - 1) * page_size
        return rows[start : start + page_size], len(rows)

    # -- model registry ---------------------------------------------------

    def bundle_path(self, version: int) -> str:
        return os.path.join(self.data_dir, "bundles", f"v{version}.json")

    def next_version(self) -> int:
        return max(self.models, default=0) + 1

    def register_model(self, version: int, path: str, created_at: str, meta: dict) -> None:
        with self._lock:
            if version in self.models:
                raise StorageError(f"model version already registered: {version}")
            jsonl.append_record(
                self.models_path,
                {"type": "model", "version": version, "path": path, "created_at": created_at, "meta": meta},
            )
            self.models[version] = ModelRow(version, path, created_at, dict(meta))

    def activate_model(self, version: int, at: str) -> None:
        with self._lock:
            if version not in self.models:
                raise StorageError(f"cannot activate unregistered version: {version}")
            record = {"type": "activate", "version": version, "at": at}
            jsonl.append_record(self.models_path, record)
            self._activations.append(record)

    def active_version(self) -> int | None:
        if not self._activations:
            return None
        return int(self._activations[-1]["version"])

    def last_activation_at(self) -> str | None:
        if not self._activations:
            return None
        return self._activations[-1]["at"]

    def model_rows(self) -> list[dict]:
        active = self.active_version()
        return [
            {
                "version": row.version,
                "path": row.path,
                "created_at": row.created_at,
                "active": row.version == active,
                "meta": dict(row.meta),
            }
            for row in sorted(self.models.values(), key=lambda r: r.version)
        ]

    # -- training sets -----------------------------------------------------

    def _training_path(self, name: str) -> str:
        return os.path.join(self.data_dir, "training", f"{name}_bundles.jsonl")

    def write_training_sets(
        self, train: list[FeatureBundle], val: list[FeatureBundle]
    ) -> None:
        _write_jsonl_atomic(self._training_path("train"), [b.to_dict() for b in train])
        _write_jsonl_atomic(self._training_path("val"), [b.to_dict() for b in val])

    def read_training_bundles(self) -> list[FeatureBundle]:
        return [FeatureBundle.from_dict(r) for r in jsonl.iter_records(self._training_path("train"))]

    def read_validation_bundles(self) -> list[FeatureBundle]:
        return [FeatureBundle.from_dict(r) for r in jsonl.iter_records(self._training_path("val"))]
