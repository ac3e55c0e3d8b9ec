"""Append-only JSON Lines files, the storage primitive for journals."""

from __future__ import annotations

import json
import os
from typing import Iterable, Iterator


def append_record(path: str, record: dict) -> None:
    append_records(path, [record])


def append_records(path: str, records: Iterable[dict]) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        fh.flush()


def iter_records(path: str) -> Iterator[dict]:
    if not os.path.exists(path):
        return
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_records(path: str) -> list[dict]:
    return list(iter_records(path))
