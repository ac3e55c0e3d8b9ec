from .dag import (
    DagValidationError,
    TaskDag,
    TaskSpec,
    dag_from_dict,
    define_dag,
    load_dag,
    register_task,
    registered_tasks,
    resolve_task,
)
from .partitions import PartitionError, map_partitions, split_partitions
from .runner import RunReport, Scheduler, TaskRun, WorkerCrash, WorkerPool, run_dag
from .schedule import ScheduleLoop

__all__ = [
    "DagValidationError",
    "PartitionError",
    "RunReport",
    "ScheduleLoop",
    "Scheduler",
    "TaskDag",
    "TaskRun",
    "TaskSpec",
    "WorkerCrash",
    "WorkerPool",
    "dag_from_dict",
    "define_dag",
    "load_dag",
    "map_partitions",
    "register_task",
    "registered_tasks",
    "resolve_task",
    "run_dag",
    "split_partitions",
]
