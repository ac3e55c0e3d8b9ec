"""DAG execution on a thread worker pool with a durable status journal.

The scheduler owns all DAG state and is the only writer of scheduling
decisions; workers only execute payloads and report attempt outcomes.
Every state change is appended to the journal before the queue item is
acknowledged, so a complete run can be reconstructed from the journal
alone. Workers that die mid-task (simulated crashes included) are detected
by liveness polling: their task is re-enqueued until the attempt limit,
then failed, and a replacement worker is spawned.

Task payloads must be idempotent: delivery is at-least-once under crash
recovery, exactly-once per attempt.
"""

from __future__ import annotations

import queue
import threading
import time
import uuid
from dataclasses import dataclass

from ..jsonl import append_record
from .dag import TaskDag, resolve_task

QUEUED = "queued"
RUNNING = "running"
SUCCESS = "success"
FAILED = "failed"
SKIPPED = "skipped"
TERMINAL = {SUCCESS, FAILED, SKIPPED}

DEFAULT_ATTEMPT_LIMIT = 2


class WorkerCrash(BaseException):
    """Raised by a payload to simulate a worker dying mid-task: the worker
    thread exits without reporting or acknowledging anything."""


@dataclass
class TaskRun:
    run_id: str
    dag_id: str
    task: str
    state: str
    attempt: int
    worker_id: str | None = None
    started_at: float | None = None
    finished_at: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "dag_id": self.dag_id,
            "task": self.task,
            "state": self.state,
            "attempt": self.attempt,
            "worker_id": self.worker_id,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "error": self.error,
        }


@dataclass
class RunReport:
    run_id: str
    dag_id: str
    states: dict[str, str]
    runs: list[TaskRun]
    started_at: float
    finished_at: float

    @property
    def ok(self) -> bool:
        return all(s == SUCCESS for s in self.states.values())

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "dag_id": self.dag_id,
            "ok": self.ok,
            "states": dict(self.states),
            "runs": [r.to_dict() for r in self.runs],
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


class _Journal:
    """Serialized appender; optionally file-backed."""

    def __init__(self, path: str | None):
        self.path = path
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    def write(self, entry: dict) -> None:
        with self._lock:
            if self.path is not None:
                append_record(self.path, entry)
            self.entries.append(entry)


class WorkerPool:
    """Fixed-size pool of worker threads consuming one shared queue.

    ``taken`` tracks the attempt each worker currently holds; a dead thread
    with a held attempt is how the scheduler recognizes a crash.
    """

    def __init__(self, n_workers: int = 2):
        if n_workers < 1:
            raise ValueError("n_workers must be >= 1")
        self.n_workers = n_workers
        self.queue: "queue.Queue" = queue.Queue()
        self.threads: dict[str, threading.Thread] = {}
        self.taken: dict[str, tuple] = {}
        self._seq = 0
        self._lock = threading.Lock()

    def spawn(self, target) -> str:
        with self._lock:
            self._seq += 1
            worker_id = f"w{self._seq}"
        thread = threading.Thread(target=target, args=(worker_id,), daemon=True)
        self.threads[worker_id] = thread
        thread.start()
        return worker_id

    def start(self, target) -> None:
        for _ in range(self.n_workers):
            self.spawn(target)

    def stop(self) -> None:
        for _ in self.threads:
            self.queue.put(None)
        for thread in self.threads.values():
            thread.join(timeout=5)


class Scheduler:
    def __init__(
        self,
        pool: WorkerPool | None = None,
        journal_path: str | None = None,
        attempt_limit: int = DEFAULT_ATTEMPT_LIMIT,
        clock=time.time,
    ):
        self.pool = pool or WorkerPool()
        self.journal = _Journal(journal_path)
        self.attempt_limit = attempt_limit
        self.clock = clock
        self._cond = threading.Condition()
        self._runs: list[TaskRun] = []
        self._state: dict[str, str] = {}
        self._attempts: dict[str, int] = {}
        self._outcomes: list[tuple] = []

    # -- worker side -------------------------------------------------------

    def _worker(self, worker_id: str) -> None:
        while True:
            item = self.pool.queue.get()
            if item is None:
                return
            task_name, attempt, fn, params = item
            self.pool.taken[worker_id] = (task_name, attempt)
            started = self.clock()
            self._report(task_name, RUNNING, attempt, worker_id, started_at=started)
            try:
                fn(**params)
            except WorkerCrash:
                # die without reporting or acknowledging; `taken` keeps the
                # evidence so the scheduler's liveness check can recover
                return
            except Exception as exc:
                finished = self.clock()
                self._report(
                    task_name,
                    FAILED,
                    attempt,
                    worker_id,
                    started_at=started,
                    finished_at=finished,
                    error=f"{type(exc).__name__}: {exc}",
                )
            else:
                finished = self.clock()
                self._report(
                    task_name, SUCCESS, attempt, worker_id,
                    started_at=started, finished_at=finished,
                )
            del self.pool.taken[worker_id]

    def _report(self, task, state, attempt, worker_id, started_at=None, finished_at=None, error=None):
        entry = {
            "run_id": self._run_id,
            "dag_id": self._dag_id,
            "task": task,
            "state": state,
            "attempt": attempt,
            "worker_id": worker_id,
            "started_at": started_at,
            "finished_at": finished_at,
            "error": error,
            "ts": self.clock(),
        }
        self.journal.write(entry)  # persist before acknowledging
        with self._cond:
            self._outcomes.append(entry)
            self._cond.notify_all()

    # -- scheduler side ------------------------------------------------------

    def run(self, dag: TaskDag) -> RunReport:
        self._run_id = uuid.uuid4().hex[:12]
        self._dag_id = dag.dag_id
        self._runs = []
        self._state = {name: None for name in dag.task_names}
        self._attempts = {name: 0 for name in dag.task_names}
        self._outcomes = []
        started_at = self.clock()
        self.journal.write(
            {"run_id": self._run_id, "dag_id": dag.dag_id, "event": "run_started", "ts": started_at}
        )

        upstreams = dag.upstreams()
        order_index = {name: i for i, name in enumerate(dag.task_names)}
        self.pool.start(self._worker)
        try:
            while True:
                self._schedule_ready(dag, upstreams, order_index)
                if all(s in TERMINAL for s in self._state.values()):
                    break
                with self._cond:
                    if not self._outcomes:
                        self._cond.wait(timeout=0.05)
                    outcomes, self._outcomes = self._outcomes, []
                for entry in outcomes:
                    self._absorb(dag, entry)
                self._check_for_dead_workers(dag)
        finally:
            self.pool.stop()

        finished_at = self.clock()
        self.journal.write(
            {
                "run_id": self._run_id,
                "dag_id": dag.dag_id,
                "event": "run_finished",
                "states": dict(self._state),
                "ts": finished_at,
            }
        )
        return RunReport(
            run_id=self._run_id,
            dag_id=dag.dag_id,
            states=dict(self._state),
            runs=list(self._runs),
            started_at=started_at,
            finished_at=finished_at,
        )

    def _schedule_ready(self, dag: TaskDag, upstreams, order_index) -> None:
        for name in sorted(dag.task_names, key=order_index.get):
            if self._state[name] is not None:
                continue
            deps = upstreams[name]
            if any(self._state[d] in (FAILED, SKIPPED) for d in deps):
                self._set_state(dag, name, SKIPPED, self._attempts[name])
                continue
            if all(self._state[d] == SUCCESS for d in deps):
                self._enqueue(dag, name)

    def _enqueue(self, dag: TaskDag, name: str) -> None:
        spec = dag.task(name)
        fn = resolve_task(spec.payload)
        self._attempts[name] += 1
        attempt = self._attempts[name]
        self._set_state(dag, name, QUEUED, attempt)
        self.pool.queue.put((name, attempt, fn, dict(spec.params)))

    def _set_state(
        self, dag: TaskDag, name: str, state: str, attempt: int, journal: bool = True, **extra
    ) -> None:
        self._state[name] = state
        if journal:
            # scheduler-originated transitions; worker outcomes were already
            # journaled by the worker before acknowledgment
            self.journal.write(
                {
                    "run_id": self._run_id,
                    "dag_id": dag.dag_id,
                    "task": name,
                    "state": state,
                    "attempt": attempt,
                    "worker_id": extra.get("worker_id"),
                    "started_at": extra.get("started_at"),
                    "finished_at": extra.get("finished_at"),
                    "error": extra.get("error"),
                    "ts": self.clock(),
                }
            )
        if state in TERMINAL:
            self._runs.append(
                TaskRun(
                    run_id=self._run_id,
                    dag_id=dag.dag_id,
                    task=name,
                    state=state,
                    attempt=attempt,
                    worker_id=extra.get("worker_id"),
                    started_at=extra.get("started_at"),
                    finished_at=extra.get("finished_at"),
                    error=extra.get("error"),
                )
            )

    def _absorb(self, dag: TaskDag, entry: dict) -> None:
        name = entry["task"]
        state = entry["state"]
        if state == RUNNING:
            if self._state[name] == QUEUED:
                self._state[name] = RUNNING
            return
        if state == FAILED and self._attempts[name] < self.attempt_limit:
            # ordinary failure before the limit: give it another attempt
            self._state[name] = None
            self._enqueue_retry(dag, name)
            return
        self._set_state(
            dag,
            name,
            state,
            entry["attempt"],
            journal=False,
            worker_id=entry.get("worker_id"),
            started_at=entry.get("started_at"),
            finished_at=entry.get("finished_at"),
            error=entry.get("error"),
        )

    def _enqueue_retry(self, dag: TaskDag, name: str) -> None:
        self._enqueue(dag, name)

    def _check_for_dead_workers(self, dag: TaskDag) -> None:
        for worker_id, thread in list(self.pool.threads.items()):
            if thread.is_alive():
                continue
            held = self.pool.taken.pop(worker_id, None)
            del self.pool.threads[worker_id]
            if held is not None:
                name, attempt = held
                if self._state[name] in TERMINAL or self._state[name] is None:
                    continue
                if attempt < self.attempt_limit:
                    self._state[name] = None
                    self._enqueue(dag, name)
                else:
                    self._set_state(
                        dag, name, FAILED, attempt,
                        worker_id=worker_id, error="worker crashed",
                    )
            self.pool.spawn(self._worker)


def run_dag(
    dag: TaskDag,
    n_workers: int = 2,
    journal_path: str | None = None,
    attempt_limit: int = DEFAULT_ATTEMPT_LIMIT,
) -> RunReport:
    scheduler = Scheduler(
        pool=WorkerPool(n_workers), journal_path=journal_path, attempt_limit=attempt_limit
    )
    return scheduler.run(dag)
