"""Interval scheduling of DAG runs against an injectable clock.

Runs fire synchronously inside ``poll``, so two runs of the same DAG can
never overlap; a run that outlasts its interval simply delays the missed
fires, which then execute back to back.
"""

from __future__ import annotations

import threading
import time
from typing import Callable, Iterable

from .dag import TaskDag


class _Entry:
    __slots__ = ("dag", "interval", "next_fire")

    def __init__(self, dag: TaskDag, interval: float, first_fire: float):
        self.dag = dag
        self.interval = interval
        self.next_fire = first_fire


class ScheduleLoop:
    def __init__(self, dags: Iterable[TaskDag], run_fn: Callable[[TaskDag], object], clock=time.monotonic):
        self.run_fn = run_fn
        self.clock = clock
        self.fired: list[tuple[str, float]] = []
        start = clock()
        self.entries = [
            _Entry(dag, dag.schedule_seconds, start + dag.schedule_seconds)
            for dag in dags
            if dag.schedule_seconds is not None
        ]

    def poll(self) -> int:
        """Fire every run that was due when the poll started; returns how
        many runs executed. The due time is snapshotted once, so a run that
        outlasts its own interval leaves its missed fires for the next poll
        instead of looping on them forever."""
        fired = 0
        now = self.clock()
        for entry in self.entries:
            while entry.next_fire <= now:
                self.fired.append((entry.dag.dag_id, entry.next_fire))
                entry.next_fire += entry.interval
                self.run_fn(entry.dag)
                fired += 1
        return fired

    def run_forever(self, stop: threading.Event, idle_sleep: float = 0.2) -> None:
        while not stop.is_set():
            self.poll()
            stop.wait(idle_sleep)
