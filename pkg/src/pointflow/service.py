"""HTTP front end for a running pipeline scheduler.

Handlers only enqueue and read. A single owner thread drives the scheduler;
finished jobs land in a bounded LRU store, optionally spilling evicted results
to disk.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import OrderedDict
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .errors import QueueFull
from .pipeline import PipelineScheduler, QueryJob
from .runtime import TimelineEvent

log = logging.getLogger(__name__)


def count_cross_query_overlaps(events: list[TimelineEvent]) -> int:
    """Pairs of events from different jobs whose intervals overlap."""
    ordered = sorted(events, key=lambda e: (e.start, e.end))
    active: list[TimelineEvent] = []
    pairs = 0
    for e in ordered:
        active = [a for a in active if a.end > e.start]
        pairs += sum(1 for a in active if a.job != e.job and e.end > e.start)
        active.append(e)
    return pairs


class JobStore:
    def __init__(self, capacity: int = 256, spill_dir: str | Path | None = None):
        self.capacity = capacity
        self.spill_dir = Path(spill_dir) if spill_dir else None
        if self.spill_dir is not None:
            self.spill_dir.mkdir(parents=True, exist_ok=True)
        self._items: OrderedDict[int, dict] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, job_id: int, record: dict) -> None:
        with self._lock:
            self._items[job_id] = record
            self._items.move_to_end(job_id)
            while len(self._items) > self.capacity:
                old_id, old = self._items.popitem(last=False)
                if self.spill_dir is not None:
                    (self.spill_dir / f"{old_id}.json").write_text(json.dumps(old), encoding="utf-8")

    def get(self, job_id: int) -> dict | None:
        with self._lock:
            if job_id in self._items:
                self._items.move_to_end(job_id)
                return self._items[job_id]
        if self.spill_dir is not None:
            path = self.spill_dir / f"{job_id}.json"
            if path.is_file():
                return json.loads(path.read_text(encoding="utf-8"))
        return None


class QueryService:
    def __init__(self, scheduler: PipelineScheduler, lru_size: int = 256,
                 spill_dir: str | Path | None = None, gather_window: float = 0.05):
        scheduler.retain_finished = False
        self.scheduler = scheduler
        self.store = JobStore(lru_size, spill_dir)
        self.gather_window = gather_window
        self._totals = {"completed": 0, "failed": 0, "tokens": 0, "elapsed": 0.0}
        self._totals_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        scheduler.on_finish.append(self._record)

    def _record(self, job: QueryJob) -> None:
        record = job.summary()
        record["timeline"] = [e.to_json() for e in job.timeline.events]
        self.store.put(job.id, record)
        with self._totals_lock:
            if job.error is None:
                self._totals["completed"] += 1
                self._totals["tokens"] += job.tokens
                self._totals["elapsed"] += job.elapsed
            else:
                self._totals["failed"] += 1

    def _loop(self) -> None:
        sched = self.scheduler
        while not self._stop.is_set():
            if sched.idle:
                if not sched.wait_for_submission(timeout=0.1):
                    continue
                # let concurrent submitters land in the same admission round
                time.sleep(self.gather_window)
            try:
                sched.tick()
                if sched.executor.running:
                    sched.advance(timeout=0.05)
            except Exception:  # keep serving; the failure is logged per job
                log.exception("scheduler loop error")

    def start(self) -> QueryService:
        if self._thread is None:
            self._thread = threading.Thread(target=self._loop, name="pointflow-owner", daemon=True)
            self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None
        self.scheduler.close()

    def submit(self, query: str) -> int:
        return self.scheduler.submit(query)

    def status(self, job_id: int) -> dict | None:
        record = self.store.get(job_id)
        if record is not None:
            return record
        job = self.scheduler.jobs.get(job_id)
        if job is None:
            return None
        return {"job_id": job_id, "status": job.phase.value}

    def metrics(self) -> dict:
        timeline = self.scheduler.timeline
        with self._totals_lock:
            totals = dict(self._totals)
        makespan = timeline.makespan
        return {
            "mode": self.scheduler.mode + ("+pipeline" if self.scheduler.pipelined else ""),
            "completed": totals["completed"],
            "failed": totals["failed"],
            "tokens": totals["tokens"],
            "elapsed_total": totals["elapsed"],
            "makespan": makespan,
            "tokens_per_time": totals["tokens"] / makespan if makespan > 0 else 0.0,
            "cross_query_overlaps": count_cross_query_overlaps(list(timeline.events)),
        }


def create_app(service: QueryService) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_app):
        service.start()
        try:
            yield
        finally:
            service.stop()

    app = FastAPI(title="pointflow", lifespan=lifespan)

    @app.post("/v1/query")
    async def post_query(request: Request):
        try:
            body = await request.json()
        except ValueError:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        query = body.get("query") if isinstance(body, dict) else None
        if not isinstance(query, str) or not query.strip():
            return JSONResponse({"error": "field 'query' must be a non-empty string"}, status_code=400)
        try:
            job_id = service.submit(query)
        except QueueFull as exc:
            return JSONResponse({"error": str(exc)}, status_code=503)
        return {"job_id": job_id}

    @app.get("/v1/query/{job_id}")
    def get_query(job_id: str):
        try:
            record = service.status(int(job_id))
        except ValueError:
            record = None
        if record is None:
            return JSONResponse({"error": f"unknown job {job_id}"}, status_code=404)
        return record

    @app.get("/v1/metrics")
    def get_metrics():
        return service.metrics()

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    return app
