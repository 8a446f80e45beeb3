from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from pointflow.backends import SimBackend
from pointflow.pipeline import PipelineScheduler, run_query
from pointflow.runtime import Capacities, TimelineEvent
from pointflow.service import JobStore, QueryService, count_cross_query_overlaps, create_app
from pointflow.workloads import synthetic_workload


def make_service(queue_limit=None, **kw):
    wl = synthetic_workload("sugres", 8)
    backend = SimBackend(scripts=wl.scripts())
    sched = PipelineScheduler(backend, Capacities(1, 2, 4), queue_limit=queue_limit)
    return wl, QueryService(sched, **kw)


def wait_done(client, job_id, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = client.get(f"/v1/query/{job_id}").json()
        if body["status"] in ("done", "failed"):
            return body
        time.sleep(0.01)
    raise AssertionError(f"job {job_id} did not finish")


def test_lifecycle_and_errors():
    wl, svc = make_service()
    with TestClient(create_app(svc)) as client:
        assert client.get("/healthz").text == "ok"
        job_id = client.post("/v1/query", json={"query": wl.texts[0]}).json()["job_id"]
        body = wait_done(client, job_id)
        assert body["answer"] == wl.queries[0].answer
        assert body["timeline"][0]["stage"] == "Search"
        assert client.get("/v1/query/999").status_code == 404
        assert client.get("/v1/query/abc").status_code == 404
        assert client.post("/v1/query", content=b"not json").status_code == 400
        assert client.post("/v1/query", json={"q": "x"}).status_code == 400
        assert client.post("/v1/query", json=["x"]).status_code == 400


def test_queue_full_returns_503():
    _, svc = make_service(queue_limit=1)
    client = TestClient(create_app(svc))      # no lifespan: the owner never drains
    assert client.post("/v1/query", json={"query": "a"}).status_code == 200
    assert client.post("/v1/query", json={"query": "b"}).status_code == 503
    svc.scheduler.close()


def test_two_posts_overlap_and_metrics_sum():
    wl, svc = make_service(gather_window=0.1)
    with TestClient(create_app(svc)) as client:
        with ThreadPoolExecutor(2) as pool:
            ids = list(pool.map(lambda q: client.post("/v1/query", json={"query": q}).json()["job_id"], wl.texts[:2]))
        bodies = [wait_done(client, i) for i in ids]
        m = client.get("/v1/metrics").json()
    assert m["cross_query_overlaps"] > 0
    assert m["completed"] == 2 and m["tokens"] == sum(b["tokens"] for b in bodies)


def test_service_answer_matches_direct_run():
    wl, svc = make_service()
    direct = run_query(wl.texts[3], SimBackend(scripts=wl.scripts()), Capacities(1, 2, 4))
    with TestClient(create_app(svc)) as client:
        job_id = client.post("/v1/query", json={"query": wl.texts[3]}).json()["job_id"]
        assert wait_done(client, job_id)["answer"] == direct.answer


def test_lru_spill(tmp_path):
    store = JobStore(capacity=2, spill_dir=tmp_path)
    for i in (1, 2, 3):
        store.put(i, {"job_id": i})
    assert (tmp_path / "1.json").exists()
    assert store.get(1) == {"job_id": 1}
    assert store.get(3) == {"job_id": 3}
    assert JobStore(capacity=1).get(42) is None


def test_finished_jobs_leave_scheduler_memory():
    wl, svc = make_service(lru_size=2)
    with TestClient(create_app(svc)) as client:
        ids = [client.post("/v1/query", json={"query": q}).json()["job_id"] for q in wl.texts[:4]]
        for i in ids[-2:]:
            wait_done(client, i)
        time.sleep(0.05)
        assert not svc.scheduler.jobs
        assert client.get(f"/v1/query/{ids[0]}").status_code == 404


@pytest.mark.parametrize("events,expected", [
    ([], 0),
    ([TimelineEvent("a", 0, 2, "compute", 1), TimelineEvent("b", 1, 3, "compute", 2)], 1),
    ([TimelineEvent("a", 0, 2, "compute", 1), TimelineEvent("b", 2, 3, "compute", 2)], 0),
    ([TimelineEvent("a", 0, 2, "compute", 1), TimelineEvent("b", 1, 3, "compute", 1)], 0),
])
def test_overlap_counter(events, expected):
    assert count_cross_query_overlaps(events) == expected
