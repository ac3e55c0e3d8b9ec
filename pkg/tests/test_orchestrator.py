import json
import random
import threading
import time
from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logward.jsonl import read_records
from logward.orchestrator import (
    DagValidationError,
    PartitionError,
    ScheduleLoop,
    TaskSpec,
    WorkerCrash,
    define_dag,
    dag_from_dict,
    load_dag,
    map_partitions,
    register_task,
    resolve_task,
    run_dag,
    split_partitions,
)

# -- test payloads -----------------------------------------------------------

_LOCK = threading.Lock()
_COUNTS: dict[str, int] = {}


@register_task("t.noop")
def _noop(**_):
    pass


@register_task("t.fail")
def _fail(**_):
    raise RuntimeError("boom")


@register_task("t.sleep")
def _sleep(seconds=0.05, **_):
    time.sleep(seconds)


@register_task("t.crash_times")
def _crash_times(key="k", times=1, **_):
    with _LOCK:
        n = _COUNTS[key] = _COUNTS.get(key, 0) + 1
    if n <= times:
        raise WorkerCrash()


def _fresh_key() -> str:
    return f"k{random.getrandbits(48):x}"


# -- DAG definition ----------------------------------------------------------


class TestDefineDag:
    def test_valid_chain(self):
        dag = define_dag(
            "chain",
            [TaskSpec("a", "t.noop"), TaskSpec("b", "t.noop"), TaskSpec("c", "t.noop")],
            [("a", "b"), ("b", "c")],
        )
        assert dag.task_names == ["a", "b", "c"]

    def test_cycle_is_named(self):
        with pytest.raises(DagValidationError) as err:
            define_dag(
                "bad",
                [TaskSpec("a", "t.noop"), TaskSpec("b", "t.noop")],
                [("a", "b"), ("b", "a")],
            )
        assert "a -> b -> a" in str(err.value) or "b -> a -> b" in str(err.value)

    def test_self_loop(self):
        with pytest.raises(DagValidationError) as err:
            define_dag("bad", [TaskSpec("a", "t.noop")], [("a", "a")])
        assert "a -> a" in str(err.value)

    def test_duplicate_names(self):
        with pytest.raises(DagValidationError):
            define_dag("bad", [TaskSpec("a", "t.noop"), TaskSpec("a", "t.noop")], [])

    def test_unknown_edge_endpoint(self):
        with pytest.raises(DagValidationError):
            define_dag("bad", [TaskSpec("a", "t.noop")], [("a", "ghost")])

    def test_diamond_topological_order(self):
        dag = define_dag(
            "diamond",
            [TaskSpec(n, "t.noop") for n in ("a", "b", "c", "d")],
            [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        )
        order = dag.topological_order()
        # independent oracle: order must be a permutation that respects edges
        assert sorted(order) == ["a", "b", "c", "d"]
        pos = {n: i for i, n in enumerate(order)}
        for up, down in dag.edges:
            assert pos[up] < pos[down]

    def test_json_roundtrip(self, tmp_path):
        dag = define_dag(
            "roundtrip",
            [TaskSpec("a", "t.noop", {"x": 1}), TaskSpec("b", "t.noop")],
            [("a", "b")],
            schedule_seconds=30,
        )
        path = tmp_path / "dag.json"
        path.write_text(json.dumps(dag.to_dict()))
        loaded = load_dag(str(path))
        assert loaded.to_dict() == dag.to_dict()

    def test_registry_resolution(self):
        assert resolve_task("t.noop") is _noop
        with pytest.raises(KeyError):
            resolve_task("t.unregistered")


# -- execution ---------------------------------------------------------------


class TestRunDag:
    def test_empty_dag(self):
        report = run_dag(define_dag("empty", [], []))
        assert report.ok
        assert report.states == {}
        assert report.runs == []

    def test_chain_failure_skips_downstream(self):
        dag = define_dag(
            "chain",
            [TaskSpec("a", "t.noop"), TaskSpec("b", "t.fail"), TaskSpec("c", "t.noop")],
            [("a", "b"), ("b", "c")],
        )
        report = run_dag(dag)
        assert report.states == {"a": "success", "b": "failed", "c": "skipped"}
        assert not report.ok

    def test_failed_task_used_both_attempts(self):
        dag = define_dag("retry", [TaskSpec("a", "t.fail")], [])
        report = run_dag(dag, attempt_limit=2)
        assert report.states == {"a": "failed"}
        assert report.runs[0].attempt == 2

    def test_independent_tasks_overlap(self):
        dag = define_dag(
            "par",
            [TaskSpec("a", "t.sleep", {"seconds": 0.15}), TaskSpec("b", "t.sleep", {"seconds": 0.15})],
            [],
        )
        report = run_dag(dag, n_workers=2)
        assert report.ok
        runs = {r.task: r for r in report.runs}
        a, b = runs["a"], runs["b"]
        assert a.started_at < b.finished_at and b.started_at < a.finished_at

    def test_diamond_waits_for_both_branches(self):
        dag = define_dag(
            "diamond",
            [
                TaskSpec("a", "t.noop"),
                TaskSpec("b", "t.sleep", {"seconds": 0.05}),
                TaskSpec("c", "t.sleep", {"seconds": 0.05}),
                TaskSpec("d", "t.noop"),
            ],
            [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        )
        report = run_dag(dag, n_workers=2)
        assert report.ok
        runs = {r.task: r for r in report.runs}
        assert runs["d"].started_at >= runs["b"].finished_at
        assert runs["d"].started_at >= runs["c"].finished_at

    def test_journal_is_persisted_before_completion(self, tmp_path):
        journal = tmp_path / "runs.jsonl"
        dag = define_dag("j", [TaskSpec("a", "t.noop")], [])
        report = run_dag(dag, journal_path=str(journal))
        entries = read_records(str(journal))
        states = [e.get("state") for e in entries if e.get("task") == "a"]
        assert states == ["queued", "running", "success"]
        assert entries[0]["event"] == "run_started"
        assert entries[-1]["event"] == "run_finished"
        assert entries[-1]["states"] == report.states

    def test_crash_is_retried_then_succeeds(self, tmp_path):
        journal = tmp_path / "runs.jsonl"
        key = _fresh_key()
        dag = define_dag(
            "crashy",
            [
                TaskSpec("a", "t.noop"),
                TaskSpec("b", "t.crash_times", {"key": key, "times": 1}),
                TaskSpec("c", "t.noop"),
            ],
            [("a", "b"), ("b", "c")],
        )
        report = run_dag(dag, journal_path=str(journal))
        assert report.states == {"a": "success", "b": "success", "c": "success"}
        entries = [e for e in read_records(str(journal)) if e.get("task") == "b"]
        attempts = defaultdict(list)
        for e in entries:
            attempts[e["attempt"]].append(e["state"])
        # first attempt died after `running` with no terminal entry of its own
        assert attempts[1] == ["queued", "running"]
        assert attempts[2] == ["queued", "running", "success"]

    def test_crash_beyond_limit_fails_and_skips(self):
        key = _fresh_key()
        dag = define_dag(
            "crashy2",
            [
                TaskSpec("b", "t.crash_times", {"key": key, "times": 5}),
                TaskSpec("c", "t.noop"),
            ],
            [("b", "c")],
        )
        report = run_dag(dag, attempt_limit=2)
        assert report.states == {"b": "failed", "c": "skipped"}

    def test_exactly_one_running_record_per_attempt(self, tmp_path):
        journal = tmp_path / "runs.jsonl"
        dag = define_dag(
            "wide",
            [TaskSpec(f"t{i}", "t.noop") for i in range(8)],
            [(f"t{i}", f"t{i+1}") for i in range(0, 6, 2)],
        )
        run_dag(dag, n_workers=3, journal_path=str(journal))
        seen = defaultdict(int)
        for e in read_records(str(journal)):
            if e.get("state") == "running":
                seen[(e["task"], e["attempt"])] += 1
        assert all(v == 1 for v in seen.values())


def _random_dag_case(rng: random.Random, max_tasks: int = 10):
    n = rng.randint(1, max_tasks)
    names = [f"t{i}" for i in range(n)]
    edges = []
    for j in range(1, n):
        for i in range(j):
            if rng.random() < 0.3:
                edges.append((names[i], names[j]))
    failing = {name for name in names if rng.random() < 0.25}
    tasks = [TaskSpec(name, "t.fail" if name in failing else "t.noop") for name in names]
    return define_dag(f"rand{rng.getrandbits(32):x}", tasks, edges), failing


def _propagation_oracle(dag, failing):
    """Walk in topological order with the documented rules."""
    states = {}
    ups = dag.upstreams()
    for name in dag.topological_order():
        if any(states[u] in ("failed", "skipped") for u in ups[name]):
            states[name] = "skipped"
        elif name in failing:
            states[name] = "failed"
        else:
            states[name] = "success"
    return states


def test_failure_propagation_matches_reachability_oracle():
    rng = random.Random(20240817)
    for _ in range(25):
        dag, failing = _random_dag_case(rng)
        report = run_dag(dag, n_workers=2, attempt_limit=1)
        assert report.states == _propagation_oracle(dag, failing)
        # skipped == transitive closure of the failed set's downstreams
        failed = {t for t, s in report.states.items() if s == "failed"}
        skipped = {t for t, s in report.states.items() if s == "skipped"}
        assert skipped == dag.transitive_downstreams(failed) - failed


# -- map_partitions ----------------------------------------------------------


def _double(chunk):
    return [x * 2 for x in chunk]


def _fail_on_seven(chunk):
    if 7 in chunk:
        raise ValueError("seven")
    return chunk


class TestMapPartitions:
    def test_single_partition_identity(self):
        assert map_partitions([1, 2, 3], _double, partitions=1) == [[2, 4, 6]]

    def test_more_partitions_than_records(self):
        out = map_partitions([1, 2], _double, partitions=5, backend="serial")
        assert out == [[2], [4], [], [], []]

    def test_failure_carries_partition_index(self):
        for backend in ("serial", "thread"):
            with pytest.raises(PartitionError) as err:
                map_partitions(list(range(10)), _fail_on_seven, partitions=3, backend=backend)
            assert err.value.partition_index == 2

    def test_process_backend(self):
        out = map_partitions(list(range(20)), _double, partitions=2, backend="process")
        assert [x for chunk in out for x in chunk] == [x * 2 for x in range(20)]

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            map_partitions([1], _double, partitions=1, backend="rocket")

    def test_split_sizes_differ_by_at_most_one(self):
        chunks = split_partitions(list(range(11)), 4)
        assert [len(c) for c in chunks] == [3, 3, 3, 2]
        assert [x for c in chunks for x in c] == list(range(11))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(), max_size=50), st.integers(min_value=1, max_value=8))
def test_map_partitions_equals_sequential_map(data, n):
    for backend in ("serial", "thread"):
        out = map_partitions(data, _double, partitions=n, backend=backend)
        assert [x for chunk in out for x in chunk] == _double(data)


# -- schedule loop -----------------------------------------------------------


class _FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def advance(self, dt):
        self.now += dt


class TestScheduleLoop:
    def _dag(self, dag_id, interval):
        return define_dag(dag_id, [TaskSpec("a", "t.noop")], [], schedule_seconds=interval)

    def test_floor_of_elapsed_over_interval(self):
        clock = _FakeClock()
        ran = []
        loop = ScheduleLoop([self._dag("d", 10)], run_fn=lambda dag: ran.append(dag.dag_id), clock=clock)
        clock.advance(35)
        assert loop.poll() == 3
        assert ran == ["d", "d", "d"]
        clock.advance(4)  # at t=39, nothing new due
        assert loop.poll() == 0

    def test_unscheduled_dag_never_fires(self):
        clock = _FakeClock()
        ran = []
        unscheduled = define_dag("u", [TaskSpec("a", "t.noop")], [])
        loop = ScheduleLoop([unscheduled], run_fn=lambda dag: ran.append(dag.dag_id), clock=clock)
        clock.advance(1000)
        assert loop.poll() == 0
        assert ran == []

    def test_long_run_queues_instead_of_overlapping(self):
        clock = _FakeClock()
        active = 0
        seen = []

        def slow_run(dag):
            nonlocal active
            active += 1
            assert active == 1  # never concurrent with itself
            seen.append(clock())
            clock.advance(25)  # run takes 2.5 intervals
            active -= 1

        loop = ScheduleLoop([self._dag("d", 10)], run_fn=slow_run, clock=clock)
        clock.advance(10)
        assert loop.poll() == 1  # only the fire due at poll entry runs
        assert seen == [10.0]
        # the run ended at t=35; the missed fires catch up on the next poll
        assert loop.poll() == 2
        assert seen == [10.0, 35.0, 60.0]
        assert loop.fired[:3] == [("d", 10.0), ("d", 20.0), ("d", 30.0)]

    def test_two_dags_independent_intervals(self):
        clock = _FakeClock()
        ran = []
        loop = ScheduleLoop(
            [self._dag("fast", 5), self._dag("slow", 20)],
            run_fn=lambda dag: ran.append(dag.dag_id),
            clock=clock,
        )
        clock.advance(20)
        loop.poll()
        assert ran.count("fast") == 4
        assert ran.count("slow") == 1
