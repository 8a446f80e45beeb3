from __future__ import annotations

import csv
import io

import pytest

from pointflow.backends import SimBackend
from pointflow.bench import (
    CSV_COLUMNS,
    PIPSCH,
    QueryStat,
    RunReport,
    emit_reports,
    latency_report,
    run_ablation,
    run_mode,
    speedup_ratio,
    summary_csv,
)
from pointflow.errors import ConfigError, DivisionByZeroBaseline, PointflowError
from pointflow.expansion import DEPEXP, NORMAL, PAREXP
from pointflow.runtime import Capacities
from pointflow.workloads import load_workload, synthetic_workload


def _report(mode, tokens, makespan, workload=""):
    return RunReport(mode, [QueryStat(1, tokens, makespan, makespan, "x")], makespan, workload=workload)


def test_speedup_ratio_trivia():
    base = _report(NORMAL, 100, 10.0)
    assert speedup_ratio(base, base) == 1.0
    assert speedup_ratio(_report(DEPEXP, 200, 10.0), base) == 2.0
    with pytest.raises(DivisionByZeroBaseline):
        speedup_ratio(base, _report(NORMAL, 0, 10.0))


def test_latency_report():
    rows = latency_report([_report(DEPEXP, 1, 4.0)])
    assert [r["ratio"] for r in rows] == [1.0]
    rows = latency_report([_report(NORMAL, 1, 8.0), _report(PIPSCH, 1, 4.0)])
    assert [r["ratio"] for r in rows] == [1.0, 2.0]
    with pytest.raises(PointflowError):
        latency_report([])


def test_pipsch_vs_serialized_latency_ratio():
    wl = synthetic_workload("sugres", 2)
    make = lambda: SimBackend(scripts=wl.scripts())  # noqa: E731
    runs = [run_mode(DEPEXP, wl.texts, make(), Capacities(1, 1, 1)),
            run_mode(PIPSCH, wl.texts, make(), Capacities(1, 1, 1))]
    ratio = latency_report(runs, baseline=DEPEXP)[1]["ratio"]
    assert 1.0 < ratio <= 2.0


def test_unknown_mode():
    with pytest.raises(PointflowError):
        run_mode("warp", ["q"], SimBackend())


def test_ablation_csv_and_in_memory_speedups_agree(tmp_path):
    wl = synthetic_workload("texseq", 3)
    reports = run_ablation([NORMAL, PAREXP, DEPEXP, PIPSCH], wl.texts,
                           lambda: SimBackend(scripts=wl.scripts()), Capacities(1, 2, 4), wl.name)
    assert reports[0].speedup_vs_normal == 1.0
    rows = list(csv.DictReader(io.StringIO(summary_csv(reports))))
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert len(rows) == 4 * 3
    for r in reports:
        for q in r.queries:
            row = next(x for x in rows if x["mode"] == r.mode and int(x["query_id"]) == q.query_id)
            base = next(b for b in reports[0].queries if b.query_id == q.query_id)
            assert abs(float(row["speedup"]) - q.rate / base.rate) < 1e-9
            assert float(row["makespan"]) == r.makespan


def test_emit_reports_files_and_idempotence(tmp_path):
    wl = synthetic_workload("sugres", 2)
    reports = run_ablation([NORMAL, DEPEXP], wl.texts, lambda: SimBackend(scripts=wl.scripts()))
    files = emit_reports(reports, tmp_path)
    names = sorted(p.name for p in files)
    assert names == sorted(["summary.csv", "report.json", "timeline_normal.jsonl", "timeline_depexp.jsonl",
                            "answers_normal.jsonl", "answers_depexp.jsonl"])
    first = {p.name: p.read_bytes() for p in files}
    emit_reports(reports, tmp_path)
    assert {p.name: p.read_bytes() for p in files} == first


def test_comlog_depexp_equals_normal_and_parexp_lacks_results():
    wl = synthetic_workload("comlog", 2)
    make = lambda: SimBackend(scripts=wl.scripts())  # noqa: E731
    from pointflow.pipeline import run_batch
    normal = run_batch(wl.texts, make(), mode=NORMAL)
    dep = run_batch(wl.texts, make(), mode=DEPEXP)
    par = run_batch(wl.texts, make(), mode=PAREXP)
    assert [j.answer.encode() for j in dep.jobs] == [j.answer.encode() for j in normal.jobs]
    for job in par.jobs:
        assert not any("Result of point" in inp.render() for inp in job.run.inputs.values())
    for job in dep.jobs:
        assert any("Result of point" in inp.render() for inp in job.run.inputs.values())


def test_workload_round_trip(tmp_path):
    wl = synthetic_workload("comlog", 2, 3, 10)
    path = tmp_path / "w.jsonl"
    wl.save(path)
    back = load_workload(path)
    assert back.texts == wl.texts
    assert back.scripts() == wl.scripts()
    with pytest.raises(ConfigError):
        synthetic_workload("nope")
    (tmp_path / "bad.jsonl").write_text("{not json}\n")
    with pytest.raises(ConfigError):
        load_workload(tmp_path / "bad.jsonl")
