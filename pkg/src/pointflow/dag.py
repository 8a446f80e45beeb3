"""Point-level dependency DAG and its prefill/decode stage rewrite.

A query decomposes into key points. Relations between points come in three
kinds; ``Null`` is never stored, so in-degree in the graph is exactly the
number of real dependencies. Every point is then split into a ``Prefill`` and a
``Decode`` stage:

* ``Contextual`` k -> j becomes ``Prefill(k) -> Prefill(j)``: the child only
  needs the parent's point text, which is consumed during the parent's prefill.
* ``Dependent`` k -> j becomes ``Decode(k) -> Prefill(j)``: the child needs the
  parent's complete expanded output.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from functools import cached_property

from .errors import CycleDetected, DuplicatePointId, UnknownPointReference


class EdgeKind(enum.Enum):
    NULL = "none"
    CONTEXTUAL = "contextual"
    DEPENDENT = "dependent"


class Phase(enum.IntEnum):
    # IntEnum so that (point_id, phase) sorts Prefill before Decode.
    PREFILL = 0
    DECODE = 1

    @property
    def short(self) -> str:
        return "Pre" if self is Phase.PREFILL else "Dec"


class ResourceClass(enum.Enum):
    SEARCH = "search"
    COMPUTE = "compute"
    BANDWIDTH = "bandwidth"


@dataclass(frozen=True)
class KeyPoint:
    id: int
    title: str
    instruction: str

    def __post_init__(self):
        if not isinstance(self.id, int) or isinstance(self.id, bool) or self.id < 1:
            raise ValueError(f"key point id must be a positive integer, got {self.id!r}")
        if not self.instruction or not self.instruction.strip():
            raise ValueError(f"key point {self.id} has an empty instruction")


@dataclass(frozen=True)
class Relation:
    source: int
    target: int
    kind: EdgeKind

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"self-relation on point {self.source}")

    def __str__(self) -> str:
        return f"{self.source}->{self.target} ({self.kind.value})"


@dataclass(frozen=True, order=True)
class StageNode:
    point_id: int
    phase: Phase

    @property
    def resource_class(self) -> ResourceClass:
        return ResourceClass.COMPUTE if self.phase is Phase.PREFILL else ResourceClass.BANDWIDTH

    def __str__(self) -> str:
        return f"{self.phase.short}:{self.point_id}"

    __repr__ = __str__


def Pre(i: int) -> StageNode:
    return StageNode(i, Phase.PREFILL)


def Dec(i: int) -> StageNode:
    return StageNode(i, Phase.DECODE)


class PointDag:
    """Immutable point DAG. Build it with :func:`build_point_dag`."""

    def __init__(self, points: Mapping[int, KeyPoint], edges: frozenset[tuple[int, int, EdgeKind]]):
        self._points = dict(sorted(points.items()))
        self._edges = edges
        parents: dict[int, list[tuple[int, EdgeKind]]] = {i: [] for i in self._points}
        for src, dst, kind in edges:
            parents[dst].append((src, kind))
        self._parents = {
            j: tuple(sorted(ps, key=lambda p: (p[0], p[1] is EdgeKind.DEPENDENT)))
            for j, ps in parents.items()
        }

    @property
    def points(self) -> dict[int, KeyPoint]:
        return dict(self._points)

    @property
    def ids(self) -> list[int]:
        return list(self._points)

    @property
    def edges(self) -> frozenset[tuple[int, int, EdgeKind]]:
        return self._edges

    def point(self, i: int) -> KeyPoint:
        return self._points[i]

    def parents(self, j: int) -> tuple[tuple[int, EdgeKind], ...]:
        """Parents of ``j`` as ``(parent_id, kind)``, ascending by parent id."""
        return self._parents[j]

    def parent_ids(self, j: int) -> set[int]:
        return {k for k, _ in self._parents[j]}

    def without_edges(self) -> PointDag:
        return PointDag(self._points, frozenset())

    def __len__(self) -> int:
        return len(self._points)

    def __repr__(self) -> str:
        edges = ", ".join(f"{s}->{d}:{k.value}" for s, d, k in sorted(self._edges, key=str))
        return f"PointDag(points={self.ids}, edges=[{edges}])"


def find_cycle(nodes: Iterable, successors: Mapping) -> list | None:
    """Return one cycle as a node list, or None. Iterative three-colour DFS."""
    white, grey, black = 0, 1, 2
    colour = {n: white for n in nodes}
    for root in colour:
        if colour[root] != white:
            continue
        stack = [(root, iter(sorted(successors.get(root, ()))))]
        path = [root]
        colour[root] = grey
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = black
                stack.pop()
                path.pop()
            elif colour[nxt] == grey:
                return path[path.index(nxt):]
            elif colour[nxt] == white:
                colour[nxt] = grey
                path.append(nxt)
                stack.append((nxt, iter(sorted(successors.get(nxt, ())))))
    return None


def build_point_dag(points: list[KeyPoint], relations: Iterable[Relation]) -> PointDag:
    if not points:
        raise ValueError("a point DAG needs at least one key point")
    by_id: dict[int, KeyPoint] = {}
    for p in points:
        if p.id in by_id:
            raise DuplicatePointId(p.id)
        by_id[p.id] = p

    edges: set[tuple[int, int, EdgeKind]] = set()
    for rel in relations:
        if rel.source not in by_id or rel.target not in by_id:
            raise UnknownPointReference(rel)
        if rel.kind is EdgeKind.NULL:
            continue
        edges.add((rel.source, rel.target, rel.kind))

    successors: dict[int, set[int]] = {i: set() for i in by_id}
    for src, dst, _ in edges:
        successors[src].add(dst)
    cycle = find_cycle(sorted(by_id), successors)
    if cycle is not None:
        raise CycleDetected(cycle)
    return PointDag(by_id, frozenset(edges))


class StageGraph:
    """Prefill/decode rewrite of a :class:`PointDag`; immutable."""

    def __init__(self, stages: frozenset[StageNode], edges: frozenset[tuple[StageNode, StageNode]]):
        self.stages = stages
        self.edges = edges
        preds: dict[StageNode, set[StageNode]] = {s: set() for s in stages}
        succs: dict[StageNode, set[StageNode]] = {s: set() for s in stages}
        for a, b in edges:
            preds[b].add(a)
            succs[a].add(b)
        self._preds = {s: frozenset(p) for s, p in preds.items()}
        self._succs = {s: frozenset(p) for s, p in succs.items()}

    def predecessors(self, stage: StageNode) -> frozenset[StageNode]:
        return self._preds[stage]

    def successors(self, stage: StageNode) -> frozenset[StageNode]:
        return self._succs[stage]

    @cached_property
    def point_ids(self) -> list[int]:
        return sorted({s.point_id for s in self.stages})

    def __len__(self) -> int:
        return len(self.stages)


def expand_to_stage_graph(dag: PointDag) -> StageGraph:
    stages: set[StageNode] = set()
    edges: set[tuple[StageNode, StageNode]] = set()
    for i in dag.ids:
        stages.update((Pre(i), Dec(i)))
        edges.add((Pre(i), Dec(i)))
    for src, dst, kind in dag.edges:
        if kind is EdgeKind.CONTEXTUAL:
            edges.add((Pre(src), Pre(dst)))
        elif kind is EdgeKind.DEPENDENT:
            edges.add((Dec(src), Pre(dst)))
    return StageGraph(frozenset(stages), frozenset(edges))


def ready_set(graph: StageGraph, completed: Iterable[StageNode]) -> set[StageNode]:
    """Stages not yet completed whose every predecessor is completed."""
    done = set(completed)
    return {s for s in graph.stages if s not in done and graph.predecessors(s) <= done}


def topological_wavefronts(graph: StageGraph) -> list[set[StageNode]]:
    """Longest-path layering: wavefront ``d`` holds stages at depth ``d``."""
    indegree = {s: len(graph.predecessors(s)) for s in graph.stages}
    front = {s for s, d in indegree.items() if d == 0}
    waves = []
    while front:
        waves.append(front)
        nxt = set()
        for s in front:
            for t in graph.successors(s):
                indegree[t] -= 1
                if indegree[t] == 0:
                    nxt.add(t)
        front = nxt
    if sum(len(w) for w in waves) != len(graph.stages):
        raise ValueError("stage graph contains a cycle")
    return waves
