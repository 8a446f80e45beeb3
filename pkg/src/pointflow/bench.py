"""Efficiency metrics and the four-mode ablation.

Modes:

``normal``  the query is fed straight to the model, queries run one at a time
``parexp``  key points expanded in parallel with every relation ignored
``depexp``  dependency-aware expansion, queries run one at a time
``pipsch``  dependency-aware expansion with cross-query pipelining

Token generation rate is ``total output tokens / makespan``; the speed-up of a
mode is its rate divided by the Normal rate. Token counts are whatever the
backend reported.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .backends.base import Backend
from .errors import DivisionByZeroBaseline, PointflowError
from .expansion import DEPEXP, NORMAL, PAREXP
from .pipeline import QueryJob, run_batch
from .runtime import Capacities, JobTimeline

PIPSCH = "pipsch"
MODES = (NORMAL, PAREXP, DEPEXP, PIPSCH)
CSV_COLUMNS = ("mode", "query_id", "tokens", "elapsed", "makespan", "speedup")

# mode -> (per-query strategy, cross-query pipelining)
_MODE_PLAN = {
    NORMAL: (NORMAL, False),
    PAREXP: (PAREXP, False),
    DEPEXP: (DEPEXP, False),
    PIPSCH: (DEPEXP, True),
}


@dataclass(frozen=True)
class QueryStat:
    query_id: int
    tokens: int
    elapsed: float
    generation_elapsed: float
    answer: str
    status: str = "done"

    @property
    def answer_bytes(self) -> int:
        return len(self.answer.encode("utf-8"))

    @property
    def rate(self) -> float:
        return self.tokens / self.elapsed if self.elapsed > 0 else 0.0


@dataclass
class RunReport:
    mode: str
    queries: list[QueryStat]
    makespan: float
    timeline: JobTimeline = field(default_factory=JobTimeline)
    workload: str = ""
    speedup_vs_normal: float | None = None

    @property
    def tokens(self) -> int:
        return sum(q.tokens for q in self.queries)

    @property
    def tokens_per_time(self) -> float:
        return self.tokens / self.makespan if self.makespan > 0 else 0.0

    def aggregate(self) -> dict:
        return {
            "mode": self.mode,
            "workload": self.workload,
            "queries": len(self.queries),
            "tokens": self.tokens,
            "makespan": self.makespan,
            "tokens_per_time": self.tokens_per_time,
            "speedup_vs_normal": self.speedup_vs_normal,
        }


def report_from_jobs(mode: str, jobs: Sequence[QueryJob], timeline: JobTimeline,
                     workload: str = "") -> RunReport:
    stats = [
        QueryStat(j.id, j.tokens, j.elapsed, j.generation_elapsed, j.answer or "", j.phase.value)
        for j in jobs
    ]
    return RunReport(mode, stats, timeline.makespan, timeline, workload)


def report_from_timeline(mode: str, tokens: int, answer: str, timeline: JobTimeline,
                         workload: str = "") -> RunReport:
    """Single-query report for runs made outside the scheduler."""
    stat = QueryStat(1, tokens, timeline.makespan, timeline.makespan, answer)
    return RunReport(mode, [stat], timeline.makespan, timeline, workload)


def speedup_ratio(run: RunReport, baseline: RunReport) -> float:
    base = baseline.tokens_per_time
    if base <= 0:
        raise DivisionByZeroBaseline(f"baseline {baseline.mode!r} generated no tokens per time unit")
    return run.tokens_per_time / base


def run_mode(mode: str, queries: Sequence[str], backend: Backend, caps: Capacities | None = None,
             workload: str = "", **options) -> RunReport:
    if mode not in _MODE_PLAN:
        raise PointflowError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    strategy, pipelined = _MODE_PLAN[mode]
    batch = run_batch(list(queries), backend, caps, mode=strategy, pipelined=pipelined, **options)
    return report_from_jobs(mode, batch.jobs, batch.timeline, workload)


def run_ablation(modes: Sequence[str], queries: Sequence[str], backend_factory: Callable[[], Backend],
                 caps: Capacities | None = None, workload: str = "", **options) -> list[RunReport]:
    """Run each mode on a fresh backend and fill in speed-ups against Normal."""
    reports = [run_mode(m, queries, backend_factory(), caps, workload, **options) for m in modes]
    normal = next((r for r in reports if r.mode == NORMAL), None)
    if normal is not None:
        for r in reports:
            r.speedup_vs_normal = speedup_ratio(r, normal)
    return reports


def latency_report(runs: Sequence[RunReport], baseline: str | None = None) -> list[dict]:
    """Makespan per (workload, mode) with the latency reduction against a baseline mode.

    The baseline defaults to Normal when present, else the first run of each workload.
    """
    if not runs:
        raise PointflowError("latency report needs at least one run")
    rows = []
    workloads = list(dict.fromkeys(r.workload for r in runs))
    for w in workloads:
        group = [r for r in runs if r.workload == w]
        ref = next((r for r in group if r.mode == (baseline or NORMAL)), None) or group[0]
        for r in group:
            ratio = ref.makespan / r.makespan if r.makespan > 0 else float("inf")
            rows.append({"workload": w, "mode": r.mode, "makespan": r.makespan, "ratio": ratio})
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def summary_csv(reports: Sequence[RunReport]) -> str:
    normal = next((r for r in reports if r.mode == NORMAL), None)
    normal_rates = {q.query_id: q.rate for q in normal.queries} if normal else {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        for q in r.queries:
            base = normal_rates.get(q.query_id)
            speedup = q.rate / base if base else None
            writer.writerow([r.mode, q.query_id, q.tokens, _fmt(q.elapsed), _fmt(r.makespan), _fmt(speedup)])
    return buf.getvalue()


def emit_reports(reports: Sequence[RunReport], directory: str | Path) -> list[Path]:
    """Write summary.csv, report.json and per-mode timeline/answer JSONL files."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def write(name: str, text: str):
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    write("summary.csv", summary_csv(reports))
    for r in reports:
        write(f"timeline_{r.mode}.jsonl", r.timeline.to_jsonl())
        write(f"answers_{r.mode}.jsonl", "".join(
            json.dumps({"query_id": q.query_id, "status": q.status, "answer": q.answer},
                       ensure_ascii=False) + "\n"
            for q in r.queries
        ))
    detail = {
        "modes": [
            {**r.aggregate(),
             "per_query": [
                 {"query_id": q.query_id, "tokens": q.tokens, "elapsed": q.elapsed,
                  "generation_elapsed": q.generation_elapsed, "answer_bytes": q.answer_bytes}
                 for q in r.queries
             ]}
            for r in reports
        ],
        "latency": latency_report(reports),
    }
    write("report.json", json.dumps(detail, indent=2) + "\n")
    return written
