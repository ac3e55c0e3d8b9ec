"""Task DAG definition: named tasks, dependency edges, optional schedule.

Payloads are registry keys (string to callable), so a DAG serializes as
plain JSON and the executable side stays importable code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence


class DagValidationError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    payload: str
    params: dict = field(default_factory=dict)


@dataclass
class TaskDag:
    dag_id: str
    tasks: list[TaskSpec]
    edges: list[tuple[str, str]]
    schedule_seconds: float | None = None

    @property
    def task_names(self) -> list[str]:
        return [t.name for t in self.tasks]

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def upstreams(self) -> dict[str, set[str]]:
        up: dict[str, set[str]] = {t.name: set() for t in self.tasks}
        for a, b in self.edges:
            up[b].add(a)
        return up

    def downstreams(self) -> dict[str, set[str]]:
        down: dict[str, set[str]] = {t.name: set() for t in self.tasks}
        for a, b in self.edges:
            down[a].add(b)
        return down

    def transitive_downstreams(self, roots: Iterable[str]) -> set[str]:
        """Every task reachable from ``roots`` along dependency edges,
        excluding the roots themselves."""
        down = self.downstreams()
        seen: set[str] = set()
        stack = [n for root in roots for n in down[root]]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(down[node])
        return seen

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; ties broken by task declaration order."""
        order_index = {t.name: i for i, t in enumerate(self.tasks)}
        up = self.upstreams()
        remaining = {name: set(deps) for name, deps in up.items()}
        ready = sorted((n for n, deps in remaining.items() if not deps), key=order_index.get)
        down = self.downstreams()
        out: list[str] = []
        while ready:
            node = ready.pop(0)
            out.append(node)
            for nxt in sorted(down[node], key=order_index.get):
                remaining[nxt].discard(node)
                if not remaining[nxt]:
                    ready.append(nxt)
            ready.sort(key=order_index.get)
        return out

    def to_dict(self) -> dict:
        return {
            "dag_id": self.dag_id,
            "tasks": [
                {"name": t.name, "payload": t.payload, "params": dict(t.params)}
                for t in self.tasks
            ],
            "edges": [[a, b] for a, b in self.edges],
            "schedule_seconds": self.schedule_seconds,
        }


def _find_cycle(names: Sequence[str], down: dict[str, set[str]]) -> list[str] | None:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in names}
    parent: dict[str, str] = {}

    for start in names:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(sorted(down[start])))]
        color[start] = GRAY
        while stack:
            node, children = stack[-1]
            advanced = False
            for child in children:
                if color[child] == GRAY:
                    # walk parents back from node to child to name the loop
                    chain = [node]
                    cur = node
                    while cur != child:
                        cur = parent[cur]
                        chain.append(cur)
                    chain.reverse()
                    return chain + [child]
                if color[child] == WHITE:
                    color[child] = GRAY
                    parent[child] = node
                    stack.append((child, iter(sorted(down[child]))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def define_dag(
    dag_id: str,
    tasks: Sequence[TaskSpec | dict],
    edges: Sequence[Sequence[str]],
    schedule_seconds: float | None = None,
) -> TaskDag:
    """Validate and build a DAG: unique task names, known edge endpoints,
    no cycles. A cycle error names one offending cycle."""
    specs: list[TaskSpec] = []
    for t in tasks:
        if isinstance(t, dict):
            specs.append(TaskSpec(t["name"], t["payload"], dict(t.get("params", {}))))
        else:
            specs.append(t)
    names = [t.name for t in specs]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise DagValidationError(f"duplicate task names: {sorted(dupes)}")
    name_set = set(names)
    pairs: list[tuple[str, str]] = []
    for edge in edges:
        a, b = edge
        if a not in name_set or b not in name_set:
            raise DagValidationError(f"edge ({a}, {b}) references an unknown task")
        pairs.append((a, b))
    dag = TaskDag(dag_id=dag_id, tasks=specs, edges=pairs, schedule_seconds=schedule_seconds)
    cycle = _find_cycle(names, dag.downstreams())
    if cycle:
        raise DagValidationError("cycle detected: " + " -> ".join(cycle))
    if schedule_seconds is not None and schedule_seconds <= 0:
        raise DagValidationError("schedule_seconds must be positive")
    return dag


def dag_from_dict(d: dict) -> TaskDag:
    return define_dag(
        dag_id=d["dag_id"],
        tasks=d.get("tasks", []),
        edges=d.get("edges", []),
        schedule_seconds=d.get("schedule_seconds"),
    )


def load_dag(path: str) -> TaskDag:
    with open(path, "r", encoding="utf-8") as fh:
        return dag_from_dict(json.load(fh))


# -- task payload registry ---------------------------------------------------

_REGISTRY: dict[str, Callable] = {}


def register_task(name: str, fn: Callable | None = None):
    """Register a callable under a payload name. Usable as a decorator."""

    def _register(f: Callable) -> Callable:
        if name in _REGISTRY and _REGISTRY[name] is not f:
            raise ValueError(f"payload name already registered: {name!r}")
        _REGISTRY[name] = f
        return f

    if fn is not None:
        return _register(fn)
    return _register


def resolve_task(name: str) -> Callable:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown task payload {name!r}; registered: {sorted(_REGISTRY)}") from None


def registered_tasks() -> list[str]:
    return sorted(_REGISTRY)
