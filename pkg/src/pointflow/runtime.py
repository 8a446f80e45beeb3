"""Execution plumbing shared by the expansion engine and the pipeline scheduler.

Both drive work through an executor with the same two calls: ``submit`` a unit
and ``wait`` for the next batch of completions. :class:`LogicalExecutor` runs
the unit immediately and files its completion at ``now + duration`` on a
simulated clock; :class:`WallExecutor` runs units on a thread pool and stamps
real elapsed seconds.
"""

from __future__ import annotations

import heapq
import itertools
import json
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor
from concurrent.futures import wait as wait_futures
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .dag import ResourceClass
from .errors import ConfigError

Work = Callable[[], tuple[Any, float]]


@dataclass(frozen=True)
class Capacities:
    search: int = 1
    compute: int = 2
    bandwidth: int = 4

    def __post_init__(self):
        for name in ("search", "compute", "bandwidth"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"capacity {name} must be a positive integer, got {v!r}")

    def of(self, cls: ResourceClass) -> int:
        return {ResourceClass.SEARCH: self.search, ResourceClass.COMPUTE: self.compute,
                ResourceClass.BANDWIDTH: self.bandwidth}[cls]

    @property
    def total(self) -> int:
        return self.search + self.compute + self.bandwidth


@dataclass(frozen=True)
class TimelineEvent:
    stage: str
    start: float
    end: float
    resource: ResourceClass
    job: int | None = None

    def to_json(self) -> dict:
        row = {"stage": self.stage, "start": self.start, "end": self.end, "class": self.resource.value}
        if self.job is not None:
            row["job"] = self.job
        return row

    @classmethod
    def from_json(cls, row: dict) -> TimelineEvent:
        return cls(row["stage"], row["start"], row["end"], ResourceClass(row["class"]), row.get("job"))


@dataclass
class JobTimeline:
    events: list[TimelineEvent] = field(default_factory=list)

    def add(self, event: TimelineEvent) -> None:
        if event.end < event.start:
            raise ValueError(f"event {event.stage} ends before it starts")
        self.events.append(event)

    def get(self, stage: str, job: int | None = None) -> TimelineEvent:
        for e in self.events:
            if e.stage == stage and (job is None or e.job == job):
                return e
        raise KeyError(stage)

    def for_job(self, job: int) -> JobTimeline:
        return JobTimeline([e for e in self.events if e.job == job])

    @property
    def start(self) -> float:
        return min((e.start for e in self.events), default=0.0)

    @property
    def end(self) -> float:
        return max((e.end for e in self.events), default=0.0)

    @property
    def makespan(self) -> float:
        return self.end - self.start

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json()) + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> JobTimeline:
        return cls([TimelineEvent.from_json(json.loads(line)) for line in text.splitlines() if line.strip()])

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def overlap(a: TimelineEvent, b: TimelineEvent) -> float:
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


def max_concurrency(events: Iterable[TimelineEvent]) -> int:
    """Peak number of simultaneously open events; intervals are half-open."""
    points = []
    for e in events:
        if e.end > e.start:
            points.append((e.start, 1))
            points.append((e.end, -1))
    # ends sort before starts at the same instant
    points.sort(key=lambda p: (p[0], p[1]))
    peak = cur = 0
    for _, d in points:
        cur += d
        peak = max(peak, cur)
    return peak


@dataclass
class Completion:
    key: Any
    start: float
    end: float
    value: Any = None
    error: BaseException | None = None


class LogicalExecutor:
    clock = "logical"

    def __init__(self, start: float = 0.0):
        self.now = start
        self._heap: list[tuple[float, int, Completion]] = []
        self._seq = itertools.count()

    @property
    def running(self) -> int:
        return len(self._heap)

    def submit(self, key: Any, work: Work) -> None:
        start = self.now
        try:
            value, duration = work()
            error = None
        except Exception as exc:  # surfaced through the completion
            value, duration, error = None, 0.0, exc
        end = start + duration
        heapq.heappush(self._heap, (end, next(self._seq), Completion(key, start, end, value, error)))

    def wait(self, timeout: float | None = None) -> list[Completion]:
        if not self._heap:
            return []
        t = self._heap[0][0]
        batch = []
        while self._heap and self._heap[0][0] == t:
            batch.append(heapq.heappop(self._heap)[2])
        self.now = t
        return batch

    def close(self) -> None:
        self._heap.clear()


class WallExecutor:
    clock = "wall"

    def __init__(self, max_workers: int):
        self._pool = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="pointflow")
        self._t0 = time.monotonic()
        self._pending: dict = {}
        self._seq = itertools.count()
        self._lock = threading.Lock()

    @property
    def now(self) -> float:
        return time.monotonic() - self._t0

    @property
    def running(self) -> int:
        return len(self._pending)

    def submit(self, key: Any, work: Work) -> None:
        start = self.now

        def run():
            try:
                value, _ = work()
                return value, None, self.now
            except Exception as exc:
                return None, exc, self.now

        fut = self._pool.submit(run)
        with self._lock:
            self._pending[fut] = (key, start, next(self._seq))

    def wait(self, timeout: float | None = None) -> list[Completion]:
        with self._lock:
            futures = list(self._pending)
        if not futures:
            return []
        done, _ = wait_futures(futures, timeout=timeout, return_when=FIRST_COMPLETED)
        batch = []
        with self._lock:
            for fut in done:
                key, start, seq = self._pending.pop(fut)
                value, error, end = fut.result()
                batch.append((end, seq, Completion(key, start, end, value, error)))
        return [c for _, _, c in sorted(batch, key=lambda b: (b[0], b[1]))]

    def close(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)


def executor_for(backend, max_workers: int):
    if getattr(backend, "clock", "logical") == "wall":
        return WallExecutor(max_workers)
    return LogicalExecutor()
