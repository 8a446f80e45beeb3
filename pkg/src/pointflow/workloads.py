"""Synthetic and file-based workloads with simulator scripts.

Three synthetic families differ only in how their key points relate:

``sugres``  independent points (no relations)
``texseq``  a chain where each point needs the previous one as context
``comlog``  a chain where each point needs the previous one's full result

The scripts make the Normal baseline answer byte-identical to the merged
expansion answer, so modes can be compared on identical token counts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .backends.sim import ScriptBook
from .dag import KeyPoint
from .errors import ConfigError
from .expansion import merge_outputs
from .keypoints import Dependency, KeyPointRecord, _record_from_obj, dumps_records, title_of

FAMILIES = ("sugres", "texseq", "comlog")

_VOCAB = (
    "value total step rate sum factor result check plan item cost term share "
    "part order list table note case rule test input output point level range"
).split()


@dataclass
class WorkloadQuery:
    query: str
    records: list[KeyPointRecord] = field(default_factory=list)
    outputs: dict[int, str] = field(default_factory=dict)
    answer: str | None = None

    def to_json(self) -> dict:
        row: dict = {"query": self.query}
        if self.records:
            row["keypoints"] = [r.to_wire() for r in self.records]
        if self.outputs:
            row["outputs"] = {str(k): v for k, v in sorted(self.outputs.items())}
        if self.answer is not None:
            row["answer"] = self.answer
        return row


@dataclass
class Workload:
    name: str
    queries: list[WorkloadQuery]

    @property
    def texts(self) -> list[str]:
        return [q.query for q in self.queries]

    def scripts(self) -> ScriptBook:
        book = ScriptBook()
        for q in self.queries:
            if q.records:
                book.keypoints[q.query] = dumps_records(q.records)
            by_id = {r.id: r for r in q.records}
            for pid, text in q.outputs.items():
                if pid in by_id:
                    book.points[by_id[pid].point.strip()] = text
            if q.answer is not None:
                book.answers[q.query] = q.answer
        return book

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for q in self.queries:
                fh.write(json.dumps(q.to_json(), ensure_ascii=False) + "\n")


def load_workload(path: str | Path) -> Workload:
    """Read a JSONL workload; only ``query`` is required on each line."""
    p = Path(path)
    queries = []
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            records = [_record_from_obj(r, 0) for r in row.get("keypoints", [])]
            outputs = {int(k): v for k, v in row.get("outputs", {}).items()}
            queries.append(WorkloadQuery(row["query"], records, outputs, row.get("answer")))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{p}:{n}: bad workload line: {exc}") from exc
    if not queries:
        raise ConfigError(f"{p}: workload is empty")
    return Workload(p.stem, queries)


def _words(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_VOCAB) for _ in range(n))


def synthetic_workload(family: str, n_queries: int = 4, n_points: int = 4,
                       tokens_per_point: int = 100, seed: int = 0) -> Workload:
    if family not in FAMILIES:
        raise ConfigError(f"unknown workload family {family!r}; choose from {', '.join(FAMILIES)}")
    if n_queries < 1 or n_points < 1 or tokens_per_point < 1:
        raise ConfigError("workload sizes must be positive")
    queries = []
    for qi in range(1, n_queries + 1):
        rng = random.Random(f"{family}:{seed}:{qi}")
        records, outputs = [], {}
        for pi in range(1, n_points + 1):
            deps: tuple[Dependency, ...] = ()
            if pi > 1 and family == "texseq":
                deps = (Dependency(pi - 1, "contextual"),)
            elif pi > 1 and family == "comlog":
                deps = (Dependency(pi - 1, "dependent"),)
            records.append(KeyPointRecord(pi, f"{family} query {qi} step {pi}: {_words(rng, 4)}", deps))
            outputs[pi] = _words(rng, tokens_per_point)
        points = [KeyPoint(r.id, title_of(r.point), r.point) for r in records]
        query = f"{family} query {qi}: {_words(rng, 8)}?"
        queries.append(WorkloadQuery(query, records, outputs, merge_outputs(outputs, points)))
    return Workload(f"{family}", queries)
