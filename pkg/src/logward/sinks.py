"""Alert sinks: where fused anomaly decisions get forwarded.

The journal is the system of record; sinks are best-effort fan-out, so
callers catch SinkError and keep going.
"""

from __future__ import annotations

import os

from . import jsonl


class SinkError(RuntimeError):
    pass


class AlertSink:
    def emit(self, record: dict) -> None:
        raise NotImplementedError


class NullSink(AlertSink):
    def emit(self, record: dict) -> None:
        pass


class FileSink(AlertSink):
    def __init__(self, path: str):
        self.path = path

    def emit(self, record: dict) -> None:
        try:
            jsonl.append_record(self.path, record)
        except OSError as exc:
            raise SinkError(f"sink file write failed: {exc}") from exc


class WebhookSink(AlertSink):
    """POSTs each record as JSON; any transport error or non-2xx is a
    SinkError. A preconfigured client can be injected for tests."""

    def __init__(self, url: str, timeout: float = 5.0, client=None):
        if not url:
            raise ValueError("webhook sink needs a url")
        self.url = url
        self.timeout = timeout
        self._client = client

    def emit(self, record: dict) -> None:
        import httpx

        try:
            if self._client is not None:
                response = self._client.post(self.url, json=record, timeout=self.timeout)
            else:
                response = httpx.post(self.url, json=record, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise SinkError(f"webhook post failed: {exc}") from exc
        if response.status_code < 200 or response.status_code >= 300:
            raise SinkError(f"webhook returned status {response.status_code}")


def build_sink(settings: dict, data_dir: str) -> AlertSink:
    kind = settings.get("type", "file")
    if kind == "null":
        return NullSink()
    if kind == "file":
        path = settings.get("path") or os.path.join(data_dir, "outbox.jsonl")
        return FileSink(path)
    if kind == "webhook":
        url = settings.get("url", "")
        return WebhookSink(url, timeout=float(settings.get("timeout", 5.0)))
    raise ValueError(f"unknown sink type {kind!r}")
