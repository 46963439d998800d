"""Dependency-graph execution on a thread pool.

Tasks are callables ``fn(inputs, cancel)`` where ``inputs`` maps each
dependency name to its result and ``cancel`` is a shared token that
long-running tasks may poll.  Ready tasks are submitted in insertion
order; a failure cancels every transitive dependent and trips the token
so cooperative tasks can stop early, while independent tasks run to
completion.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable


class CancelToken:
    def __init__(self):
        self._event = threading.Event()

    def cancel(self) -> None:
        self._event.set()

    def cancelled(self) -> bool:
        return self._event.is_set()


@dataclass(frozen=True)
class Task:
    name: str
    fn: Callable[[dict, CancelToken], Any]
    deps: tuple[str, ...] = ()


@dataclass
class TaskRecord:
    name: str
    status: str = "pending"      # pending | running | done | failed | cancelled
    error: BaseException | None = None
    started: float | None = None
    finished: float | None = None


class TaskGraph:
    def __init__(self):
        self._tasks: dict[str, Task] = {}

    def add(self, name: str, fn, deps=()) -> None:
        if name in self._tasks:
            raise ValueError(f"duplicate task {name!r}")
        deps = tuple(deps)
        for d in deps:
            if d not in self._tasks:
                raise ValueError(f"task {name!r} depends on unknown task {d!r}")
        self._tasks[name] = Task(name, fn, deps)

    @property
    def tasks(self) -> dict:
        return dict(self._tasks)

    def dependents(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {name: [] for name in self._tasks}
        for task in self._tasks.values():
            for d in task.deps:
                out[d].append(task.name)
        return out

    def __len__(self) -> int:
        return len(self._tasks)


@dataclass
class GraphRun:
    results: dict[str, Any]
    records: dict[str, TaskRecord]
    seconds: float
    failed: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.failed


def execute_graph(graph: TaskGraph, workers: int = 1, cancel: CancelToken | None = None) -> GraphRun:
    """Run every task, honoring dependencies.  Insertion order breaks ties."""
    if workers < 1:
        raise ValueError("workers must be at least 1")
    tasks = graph.tasks
    dependents = graph.dependents()
    records = {name: TaskRecord(name) for name in tasks}
    results: dict[str, Any] = {}
    cancel = cancel or CancelToken()
    t0 = time.perf_counter()

    remaining = {name: len(t.deps) for name, t in tasks.items()}
    ready = deque(name for name, t in tasks.items() if not t.deps)
    scheduled = set(ready)
    failed: list[str] = []

    def mark_cancelled(root: str) -> None:
        stack = list(dependents[root])
        while stack:
            name = stack.pop()
            if records[name].status == "pending":
                records[name].status = "cancelled"
                stack.extend(dependents[name])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        running = {}
        while ready or running:
            while ready:
                name = ready.popleft()
                if records[name].status != "pending":
                    continue
                records[name].status = "running"
                records[name].started = time.perf_counter() - t0
                inputs = {d: results[d] for d in tasks[name].deps}
                running[pool.submit(tasks[name].fn, inputs, cancel)] = name
            if not running:
                break
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in done:
                name = running.pop(fut)
                rec = records[name]
                rec.finished = time.perf_counter() - t0
                err = fut.exception()
                if err is not None:
                    rec.status = "failed"
                    rec.error = err
                    failed.append(name)
                    cancel.cancel()
                    mark_cancelled(name)
                    continue
                rec.status = "done"
                results[name] = fut.result()
                for dep_name in dependents[name]:
                    remaining[dep_name] -= 1
                    if remaining[dep_name] == 0 and dep_name not in scheduled:
                        if records[dep_name].status == "pending":
                            ready.append(dep_name)
                            scheduled.add(dep_name)

    for rec in records.values():
        if rec.status == "pending":   # unreachable: a dependency never completed
            rec.status = "cancelled"
    return GraphRun(results, records, time.perf_counter() - t0, tuple(failed))
