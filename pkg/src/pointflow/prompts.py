"""Prompt construction for key point generation and per-point expansion."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .dag import EdgeKind, KeyPoint, PointDag
from .errors import ConfigError, MissingDependentOutput
from .keypoints import KeyPointRecord, _record_from_obj, dumps_records
from .retrieval import Chunk

log = logging.getLogger(__name__)

GENERATION_PRESET = "generation_preset.txt"
FORMAT_CONTRACT = "format_contract.txt"
EXPANSION_PRESET = "expansion_preset.txt"
EXEMPLARS = "exemplars.jsonl"


@dataclass(frozen=True)
class PromptTemplate:
    preset: str
    exemplars: tuple[tuple[str, tuple[KeyPointRecord, ...]], ...]
    format_contract: str

    def __post_init__(self):
        if not self.exemplars:
            raise ConfigError("the generation prompt needs at least one exemplar")


@dataclass(frozen=True)
class AggregatedParent:
    parent_id: int
    text: str
    kind: EdgeKind


@dataclass(frozen=True)
class ExpansionInput:
    preset: str
    parents: tuple[AggregatedParent, ...]
    point: KeyPoint

    def render(self) -> str:
        parts = [self.preset.strip()]
        for p in self.parents:
            if p.kind is EdgeKind.CONTEXTUAL:
                parts.append(f"Context from point {p.parent_id}: {p.text}")
            else:
                parts.append(f"Result of point {p.parent_id}:\n{p.text}")
        parts.append(f"Point {self.point.id}: {self.point.instruction}")
        return "\n\n".join(parts) + "\n"


def _read_prompt_file(directory: Path | None, name: str) -> str:
    if directory is not None and (directory / name).is_file():
        return (directory / name).read_text(encoding="utf-8")
    return resources.files("pointflow").joinpath("prompts", name).read_text(encoding="utf-8")


def _parse_exemplars(text: str) -> tuple:
    exemplars = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            records = tuple(_record_from_obj(r, 0) for r in row["keypoints"])
            exemplars.append((row["query"], records))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad exemplar on line {n}: {exc}") from exc
    return tuple(exemplars)


def load_template(directory: str | Path | None = None) -> PromptTemplate:
    """Load the generation template; files missing from ``directory`` fall back to the defaults."""
    d = Path(directory) if directory is not None else None
    return PromptTemplate(
        preset=_read_prompt_file(d, GENERATION_PRESET).strip(),
        exemplars=_parse_exemplars(_read_prompt_file(d, EXEMPLARS)),
        format_contract=_read_prompt_file(d, FORMAT_CONTRACT).strip(),
    )


def load_expansion_preset(directory: str | Path | None = None) -> str:
    d = Path(directory) if directory is not None else None
    return _read_prompt_file(d, EXPANSION_PRESET).strip()


def _retrieval_section(retrieved: Sequence[tuple[Chunk, float]]) -> str:
    lines = ["### Reference material"]
    for rank, (chunk, _score) in enumerate(retrieved, 1):
        lines.append(f"[{rank}] ({chunk.doc_id}#{chunk.seq})\n{chunk.text}")
    return "\n\n".join(lines)


def assemble_generation_prompt(query: str, retrieved: Sequence[tuple[Chunk, float]],
                               template: PromptTemplate, max_chars: int | None = None) -> str:
    """Preset, exemplars, retrieved chunks (rank order), query, format contract."""
    examples = ["### Examples"]
    for q, records in template.exemplars:
        examples.append(f"Query: {q}\nKey points: {dumps_records(records)}")

    def build(chunks) -> str:
        sections = [template.preset, "\n\n".join(examples)]
        if chunks:
            sections.append(_retrieval_section(chunks))
        sections.append(f"### Query\n{query}")
        sections.append(f"### Output format\n{template.format_contract}")
        return "\n\n".join(sections) + "\n"

    chunks = list(retrieved)
    prompt = build(chunks)
    if max_chars is not None and len(prompt) > max_chars:
        while chunks and len(prompt) > max_chars:
            chunks.pop()
            prompt = build(chunks)
        log.warning("generation prompt over %d chars; kept %d of %d retrieved chunks",
                    max_chars, len(chunks), len(retrieved))
        if len(prompt) > max_chars:
            log.warning("generation prompt still over budget; truncating hard")
            prompt = prompt[:max_chars]
    return prompt


def assemble_expansion_input(j: int, dag: PointDag, outputs: Mapping[int, str],
                             preset: str) -> ExpansionInput:
    parents = []
    for k, kind in dag.parents(j):
        if kind is EdgeKind.CONTEXTUAL:
            parents.append(AggregatedParent(k, dag.point(k).instruction, kind))
        elif kind is EdgeKind.DEPENDENT:
            if k not in outputs:
                raise MissingDependentOutput(j, k)
            parents.append(AggregatedParent(k, outputs[k], kind))
    return ExpansionInput(preset, tuple(parents), dag.point(j))
