"""Cross-query pipelining over search, compute and bandwidth resource classes.

Each query moves through Searching -> Generating -> Expanding -> Done. Every
sub-unit carries one resource class (search, prefill -> compute, decode ->
bandwidth) and the scheduler fills free slots per class, earliest job first.
While one query decodes its points, the next can already search and prefill
its key point prompt.
"""

from __future__ import annotations

import enum
import itertools
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .backends.base import PREFILL, Backend, GenerationRequest
from .dag import PointDag, ResourceClass, StageNode, build_point_dag
from .errors import CycleDetected, PointflowError, QueueFull
from .expansion import (
    DEFAULT_ANSWER_TOKENS,
    DEFAULT_POINT_TOKENS,
    DEPEXP,
    EXPANSION_MODES,
    NORMAL,
    ExpansionRun,
    baseline_request,
)
from .keypoints import KeyPointRecord, ParserState, feed, finalize, to_domain
from .prompts import PromptTemplate, assemble_generation_prompt, load_expansion_preset, load_template
from .retrieval import DEFAULT_K, VectorIndex, top_k
from .runtime import Capacities, Completion, JobTimeline, TimelineEvent, executor_for

log = logging.getLogger(__name__)

SEARCH, PRE_KP, DEC_KP, PRE_ANSWER, DEC_ANSWER = "Search", "Pre:kp", "Dec:kp", "Pre:answer", "Dec:answer"
_UNIT_CLASS = {
    SEARCH: ResourceClass.SEARCH,
    PRE_KP: ResourceClass.COMPUTE,
    PRE_ANSWER: ResourceClass.COMPUTE,
    DEC_KP: ResourceClass.BANDWIDTH,
    DEC_ANSWER: ResourceClass.BANDWIDTH,
}
DEFAULT_KEYPOINT_TOKENS = 1024


class JobPhase(enum.Enum):
    SEARCHING = "searching"
    GENERATING = "generating"
    EXPANDING = "expanding"
    DONE = "done"
    FAILED = "failed"

    @property
    def finished(self) -> bool:
        return self in (JobPhase.DONE, JobPhase.FAILED)


def unit_class(unit) -> ResourceClass:
    if isinstance(unit, StageNode):
        return unit.resource_class
    return _UNIT_CLASS[unit]


@dataclass(frozen=True)
class Assignment:
    job_id: int
    unit: object
    resource: ResourceClass


@dataclass
class QueryJob:
    id: int
    query: str
    mode: str = DEPEXP
    phase: JobPhase = JobPhase.SEARCHING
    submitted_at: float = 0.0
    timeline: JobTimeline = field(default_factory=JobTimeline)
    retrieved: list = field(default_factory=list)
    records: list[KeyPointRecord] = field(default_factory=list)
    # (record id, number of decoded fragments seen when the record was emitted)
    emissions: list[tuple[int, int]] = field(default_factory=list)
    dag: PointDag | None = None
    run: ExpansionRun | None = None
    answer: str | None = None
    error: BaseException | None = None
    warnings: list[str] = field(default_factory=list)
    tokens: int = 0
    fallback: bool = False
    _next: str | None = None
    _next_running: bool = False
    _prefilled: object = None
    _inflight: int = 0

    @property
    def started(self) -> float:
        return self.timeline.start if self.timeline.events else self.submitted_at

    @property
    def finished_at(self) -> float:
        return self.timeline.end if self.timeline.events else self.submitted_at

    @property
    def elapsed(self) -> float:
        return self.finished_at - self.started

    @property
    def generation_elapsed(self) -> float:
        """Elapsed time excluding retrieval."""
        searches = [e for e in self.timeline.events if e.stage == SEARCH]
        start = searches[0].end if searches else self.started
        return self.finished_at - start

    def ready_units(self) -> list:
        if self.phase.finished:
            return []
        if self.phase is JobPhase.EXPANDING:
            return self.run.ready()
        if self._next is not None and not self._next_running:
            return [self._next]
        return []

    def summary(self) -> dict:
        return {
            "job_id": self.id,
            "status": self.phase.value,
            "tokens": self.tokens,
            "elapsed": self.elapsed,
            "generation_elapsed": self.generation_elapsed,
            "answer": self.answer,
            "error": None if self.error is None else str(self.error),
            "fallback": self.fallback,
        }


class PipelineScheduler:
    """Owns every job's state. ``submit`` is safe from any thread; ``tick``,
    ``advance`` and ``drain`` must be called from the single owner thread."""

    def __init__(self, backend: Backend, caps: Capacities | None = None, *,
                 index: VectorIndex | None = None, template: PromptTemplate | None = None,
                 preset: str | None = None, mode: str = DEPEXP, pipelined: bool = True,
                 queue_limit: int | None = None, seed: int = 0, k: int = DEFAULT_K,
                 max_prompt_chars: int | None = None, keypoint_tokens: int = DEFAULT_KEYPOINT_TOKENS,
                 point_tokens: int = DEFAULT_POINT_TOKENS, answer_tokens: int = DEFAULT_ANSWER_TOKENS,
                 fallback_on_cycle: bool = True, retain_finished: bool = True):
        if mode not in (*EXPANSION_MODES, NORMAL):
            raise ValueError(f"unknown mode {mode!r}")
        self.backend = backend
        self.caps = caps or Capacities()
        self.index = index
        self.template = template or load_template()
        self.preset = preset if preset is not None else load_expansion_preset()
        self.mode = mode
        self.pipelined = pipelined
        self.queue_limit = queue_limit
        self.seed = seed
        self.k = k
        self.max_prompt_chars = max_prompt_chars
        self.keypoint_tokens = keypoint_tokens
        self.point_tokens = point_tokens
        self.answer_tokens = answer_tokens
        self.fallback_on_cycle = fallback_on_cycle
        self.retain_finished = retain_finished

        self.executor = executor_for(backend, self.caps.total)
        self.timeline = JobTimeline()
        self.jobs: dict[int, QueryJob] = {}
        self.on_finish: list[Callable[[QueryJob], None]] = []
        self._ids = itertools.count(1)
        self._inbox: deque[QueryJob] = deque()
        self._active: list[QueryJob] = []
        self._outstanding = 0
        self._lock = threading.Lock()
        self.wakeup = threading.Condition(self._lock)
        self._busy = {cls: 0 for cls in ResourceClass}

    # -- submission ---------------------------------------------------------

    def submit(self, query: str, mode: str | None = None) -> int:
        with self._lock:
            if self.queue_limit is not None and self._outstanding >= self.queue_limit:
                raise QueueFull(f"{self._outstanding} queries in flight (limit {self.queue_limit})")
            job = QueryJob(next(self._ids), query, mode or self.mode)
            self._outstanding += 1
            self.jobs[job.id] = job
            self._inbox.append(job)
            self.wakeup.notify_all()
        return job.id

    @property
    def outstanding(self) -> int:
        with self._lock:
            return self._outstanding

    def has_inbox(self) -> bool:
        with self._lock:
            return bool(self._inbox)

    def _admit(self) -> None:
        with self._lock:
            while self._inbox:
                job = self._inbox.popleft()
                job.submitted_at = self.executor.now
                if job.mode == NORMAL:
                    job.phase = JobPhase.GENERATING
                    job._next = PRE_ANSWER
                else:
                    job._next = SEARCH
                self._active.append(job)

    # -- unit execution -----------------------------------------------------

    def _work(self, job: QueryJob, unit):
        backend = self.backend
        if isinstance(unit, StageNode):
            return job.run.start(unit)
        job._next_running = True
        if unit == SEARCH:
            index, query, k = self.index, job.query, self.k

            def work():
                hits = top_k(index, query, k) if index is not None and len(index) else []
                return hits, backend.search_duration(len(hits))
            return work
        if unit in (PRE_KP, PRE_ANSWER):
            if unit == PRE_KP:
                prompt = assemble_generation_prompt(job.query, job.retrieved, self.template,
                                                    self.max_prompt_chars)
                request = GenerationRequest(prompt, self.keypoint_tokens, PREFILL, seed=self.seed,
                                            role="keypoints", key=job.query)
            else:
                request = baseline_request(job.query, self.seed, self.answer_tokens)

            def work():
                pre = backend.prefill(request)
                return pre, pre.duration
            return work
        pre = job._prefilled
        if unit == DEC_ANSWER:
            def work():
                res = backend.decode(pre)
                return res, res.decode_duration
            return work

        # Dec:kp streams into the incremental parser
        def work():
            state = ParserState()
            records, emissions, seen = [], [], [0]

            def sink(piece: str):
                seen[0] += 1
                for r in feed(state, piece):
                    records.append(r)
                    emissions.append((r.id, seen[0]))

            res = backend.decode(pre, sink)
            finalize(state)
            return (res, records, emissions, list(state.warnings)), res.decode_duration
        return work

    def _fail(self, job: QueryJob, error: BaseException) -> None:
        log.warning("query %d failed: %s", job.id, error)
        job.error = error
        self._finish(job, JobPhase.FAILED)

    def _finish(self, job: QueryJob, phase: JobPhase) -> None:
        job.phase = phase
        job._next = None
        with self._lock:
            self._outstanding -= 1
        for cb in self.on_finish:
            cb(job)

    def _complete(self, job: QueryJob, unit, done: Completion) -> None:
        event = TimelineEvent(str(unit), done.start, done.end, unit_class(unit), job.id)
        self.timeline.add(event)
        job.timeline.add(event)
        if job.phase.finished:
            return
        if isinstance(unit, StageNode):
            job.run.finish(unit, done)
            if job.run.failure is not None:
                self._fail(job, job.run.failure)
            elif job.run.done:
                job.tokens += job.run.output_tokens
                job.answer = job.run.answer()
                self._finish(job, JobPhase.DONE)
            return
        job._next_running = False
        if done.error is not None:
            self._fail(job, done.error)
            return
        if unit == SEARCH:
            job.retrieved = done.value
            job.phase = JobPhase.GENERATING
            job._next = PRE_KP
        elif unit in (PRE_KP, PRE_ANSWER):
            job._prefilled = done.value
            job._next = DEC_KP if unit == PRE_KP else DEC_ANSWER
        elif unit == DEC_ANSWER:
            job.tokens += done.value.output_tokens
            job.answer = done.value.text
            self._finish(job, JobPhase.DONE)
        else:
            self._start_expansion(job, done.value)

    def _start_expansion(self, job: QueryJob, value) -> None:
        res, records, emissions, warnings = value
        job.tokens += res.output_tokens
        job.records, job.emissions = records, emissions
        job.warnings.extend(warnings)
        job._next = None
        try:
            points, relations = to_domain(records)
            if not points:
                raise PointflowError("model produced no key points")
            job.dag = build_point_dag(points, relations)
        except CycleDetected as exc:
            if not self.fallback_on_cycle:
                self._fail(job, exc)
                return
            msg = f"{exc}; falling back to sequential generation"
            log.warning("query %d: %s", job.id, msg)
            job.warnings.append(msg)
            job.fallback = True
            job._next = PRE_ANSWER
            return
        except (PointflowError, ValueError) as exc:
            self._fail(job, exc)
            return
        job.run = ExpansionRun(job.dag, self.backend, self.preset, job.mode, self.seed,
                               self.point_tokens, job=job.id)
        job.phase = JobPhase.EXPANDING

    # -- scheduling loop ----------------------------------------------------

    def _eligible(self) -> list[QueryJob]:
        self._active = [j for j in self._active if not j.phase.finished]
        if self.pipelined:
            return self._active
        return self._active[:1]

    def tick(self) -> list[Assignment]:
        """Admit new jobs and fill free slots; returns the units dispatched."""
        self._admit()
        assignments = []
        for job in self._eligible():
            for unit in job.ready_units():
                cls = unit_class(unit)
                if self._busy[cls] >= self.caps.of(cls):
                    continue
                self.executor.submit((job.id, unit), self._work(job, unit))
                self._busy[cls] += 1
                job._inflight += 1
                assignments.append(Assignment(job.id, unit, cls))
        return assignments

    def advance(self, timeout: float | None = None) -> list[Completion]:
        """Wait for the next completions and fold them into job state."""
        batch = self.executor.wait(timeout)
        for done in batch:
            job_id, unit = done.key
            self._busy[unit_class(unit)] -= 1
            job = self.jobs[job_id]
            job._inflight -= 1
            self._complete(job, unit, done)
            if not self.retain_finished and job.phase.finished and job._inflight == 0:
                del self.jobs[job_id]
        return batch

    def wait_for_submission(self, timeout: float | None = None) -> bool:
        """Block until the inbox is non-empty (or timeout); True if work arrived."""
        with self.wakeup:
            if not self._inbox:
                self.wakeup.wait(timeout)
            return bool(self._inbox)

    @property
    def idle(self) -> bool:
        return self.executor.running == 0 and not self._active and not self.has_inbox()

    def drain(self) -> None:
        """Run until every submitted job has finished."""
        while True:
            self.tick()
            if self.executor.running == 0:
                if not self._eligible() and not self.has_inbox():
                    return
                if not self.has_inbox():
                    raise RuntimeError("scheduler stalled: jobs pending but nothing runnable")
                continue
            self.advance()

    def close(self) -> None:
        self.executor.close()


@dataclass
class BatchResult:
    jobs: list[QueryJob]
    timeline: JobTimeline

    @property
    def answers(self) -> list[str | None]:
        return [j.answer for j in self.jobs]

    @property
    def makespan(self) -> float:
        return self.timeline.makespan


def run_batch(queries: list[str], backend: Backend, caps: Capacities | None = None,
              **options) -> BatchResult:
    """Submit every query at time zero and run the pipeline until all finish."""
    if not queries:
        raise ValueError("run_batch needs at least one query")
    scheduler = PipelineScheduler(backend, caps, **options)
    try:
        ids = [scheduler.submit(q) for q in queries]
        scheduler.drain()
    finally:
        scheduler.close()
    return BatchResult([scheduler.jobs[i] for i in ids], scheduler.timeline)


def run_query(query: str, backend: Backend, caps: Capacities | None = None, **options) -> QueryJob:
    """Full single-query flow: search, key point generation, expansion."""
    return run_batch([query], backend, caps, **options).jobs[0]
