"""DAG-guided parallel expansion of one query's key points."""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

from .backends.base import PREFILL, WHOLE, Backend, GenerationRequest, GenerationResult, Prefilled
from .dag import KeyPoint, Phase, PointDag, ResourceClass, StageNode, expand_to_stage_graph, ready_set
from .errors import BackendFailure, MissingOutput
from .prompts import ExpansionInput, assemble_expansion_input
from .runtime import Capacities, Completion, JobTimeline, TimelineEvent, executor_for

log = logging.getLogger(__name__)

PAREXP, DEPEXP, NORMAL = "parexp", "depexp", "normal"
EXPANSION_MODES = (PAREXP, DEPEXP)

PENDING, RUNNING, DONE = "pending", "running", "done"

DEFAULT_POINT_TOKENS = 512
DEFAULT_ANSWER_TOKENS = 4096


def merge_outputs(outputs: Mapping[int, str], points: Sequence[KeyPoint]) -> str:
    """Join point outputs in ascending id order, each under its title."""
    sections = []
    for p in sorted(points, key=lambda p: p.id):
        if p.id not in outputs:
            raise MissingOutput(p.id)
        sections.append(f"## {p.title}\n\n{outputs[p.id].strip()}")
    return "\n\n".join(sections) + "\n"


class ExpansionRun:
    """Mutable run state over an immutable stage graph.

    Only the dispatcher calls :meth:`start` and :meth:`finish`; the work
    callables returned by :meth:`start` touch nothing but the backend.
    """

    def __init__(self, dag: PointDag, backend: Backend, preset: str, mode: str = DEPEXP,
                 seed: int = 0, max_tokens: int = DEFAULT_POINT_TOKENS, job: int | None = None):
        if mode not in EXPANSION_MODES:
            raise ValueError(f"unknown expansion mode {mode!r}")
        self.dag = dag
        self.mode = mode
        # ParExp drops every edge: all points are roots for scheduling and for inputs
        self.effective_dag = dag if mode == DEPEXP else dag.without_edges()
        self.graph = expand_to_stage_graph(self.effective_dag)
        self.backend = backend
        self.preset = preset
        self.seed = seed
        self.max_tokens = max_tokens
        self.job = job
        self.status = {s: PENDING for s in self.graph.stages}
        self.completed: set[StageNode] = set()
        self.outputs: dict[int, str] = {}
        self.inputs: dict[int, ExpansionInput] = {}
        self.results: dict[int, GenerationResult] = {}
        self._prefilled: dict[int, Prefilled] = {}
        self.timeline = JobTimeline()
        self.failure: BackendFailure | None = None

    @property
    def done(self) -> bool:
        return len(self.completed) == len(self.graph.stages)

    @property
    def output_tokens(self) -> int:
        return sum(r.output_tokens for r in self.results.values())

    def ready(self) -> list[StageNode]:
        return sorted(s for s in ready_set(self.graph, self.completed) if self.status[s] == PENDING)

    def start(self, stage: StageNode):
        if self.status[stage] != PENDING or not self.graph.predecessors(stage) <= self.completed:
            raise RuntimeError(f"{stage} dispatched before it was ready")
        self.status[stage] = RUNNING
        j = stage.point_id
        backend = self.backend
        if stage.phase is Phase.PREFILL:
            inp = assemble_expansion_input(j, self.effective_dag, self.outputs, self.preset)
            self.inputs[j] = inp
            request = GenerationRequest(inp.render(), self.max_tokens, PREFILL, seed=self.seed,
                                        role="point", key=self.dag.point(j).instruction)

            def work():
                pre = backend.prefill(request)
                return pre, pre.duration
        else:
            pre = self._prefilled.pop(j)

            def work():
                res = backend.decode(pre)
                return res, res.decode_duration
        return work

    def finish(self, stage: StageNode, done: Completion) -> None:
        self.timeline.add(TimelineEvent(str(stage), done.start, done.end, stage.resource_class, self.job))
        if done.error is not None:
            self.failure = BackendFailure(stage.point_id, stage.phase.short, done.error, self.timeline)
            return
        self.status[stage] = DONE
        self.completed.add(stage)
        if stage.phase is Phase.PREFILL:
            self._prefilled[stage.point_id] = done.value
        else:
            self.results[stage.point_id] = done.value
            self.outputs[stage.point_id] = done.value.text

    def answer(self) -> str:
        return merge_outputs(self.outputs, list(self.dag.points.values()))


def execute_expansion(dag: PointDag, backend: Backend, caps: Capacities | None = None,
                      preset: str = "", mode: str = DEPEXP, seed: int = 0,
                      max_tokens: int = DEFAULT_POINT_TOKENS) -> ExpansionRun:
    """Run every stage of ``dag`` to completion and return the finished run."""
    caps = caps or Capacities()
    run = ExpansionRun(dag, backend, preset, mode, seed, max_tokens)
    executor = executor_for(backend, caps.compute + caps.bandwidth)
    busy = {ResourceClass.COMPUTE: 0, ResourceClass.BANDWIDTH: 0}
    try:
        while not run.done:
            for stage in run.ready():
                cls = stage.resource_class
                if busy[cls] < caps.of(cls):
                    executor.submit(stage, run.start(stage))
                    busy[cls] += 1
            batch = executor.wait()
            if not batch:
                raise RuntimeError("expansion stalled with no running stages")
            for done in batch:
                busy[done.key.resource_class] -= 1
                run.finish(done.key, done)
            if run.failure is not None:
                raise run.failure
    finally:
        executor.close()
    return run


def run_expansion(dag: PointDag, backend: Backend, caps: Capacities | None = None,
                  preset: str = "", mode: str = DEPEXP, seed: int = 0,
                  max_tokens: int = DEFAULT_POINT_TOKENS) -> tuple[str, JobTimeline]:
    run = execute_expansion(dag, backend, caps, preset, mode, seed, max_tokens)
    return run.answer(), run.timeline


def baseline_request(query: str, seed: int = 0, max_tokens: int = DEFAULT_ANSWER_TOKENS) -> GenerationRequest:
    return GenerationRequest(query, max_tokens, WHOLE, seed=seed, role="answer", key=query)


def run_sequential_baseline(query: str, backend: Backend, seed: int = 0,
                            max_tokens: int = DEFAULT_ANSWER_TOKENS) -> tuple[str, JobTimeline]:
    """Feed the query straight to the model: one prefill, one decode."""
    request = baseline_request(query, seed, max_tokens)
    executor = executor_for(backend, 1)
    timeline = JobTimeline()
    try:
        executor.submit("Pre:answer", lambda: (lambda p: (p, p.duration))(backend.prefill(request)))
        (pre,) = executor.wait()
        timeline.add(TimelineEvent("Pre:answer", pre.start, pre.end, ResourceClass.COMPUTE))
        if pre.error is not None:
            raise BackendFailure(None, "Pre", pre.error, timeline)
        executor.submit("Dec:answer", lambda: (lambda r: (r, r.decode_duration))(backend.decode(pre.value)))
        (dec,) = executor.wait()
        timeline.add(TimelineEvent("Dec:answer", dec.start, dec.end, ResourceClass.BANDWIDTH))
        if dec.error is not None:
            raise BackendFailure(None, "Dec", dec.error, timeline)
    finally:
        executor.close()
    return dec.value.text, timeline
