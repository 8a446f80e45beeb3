from __future__ import annotations

import random

import pytest
from conftest import CTX, DEP, two_chain_parts
from oracles import brute_ready, has_cycle, random_dag, stage_edges_by_rule

from pointflow.dag import (
    Dec,
    EdgeKind,
    KeyPoint,
    Pre,
    Relation,
    ResourceClass,
    build_point_dag,
    expand_to_stage_graph,
    ready_set,
    topological_wavefronts,
)
from pointflow.errors import CycleDetected, DuplicatePointId, UnknownPointReference


def _edge_strings(graph):
    return {(str(a), str(b)) for a, b in graph.edges}


def test_diamond_dag_parents(diamond_dag):
    assert diamond_dag.parent_ids(4) == {2, 3}
    assert diamond_dag.parents(2) == ((1, CTX),)


def test_single_point_dag():
    dag = build_point_dag([KeyPoint(1, "a", "a")], [])
    assert dag.ids == [1] and not dag.edges
    assert _edge_strings(expand_to_stage_graph(dag)) == {("Pre:1", "Dec:1")}


def test_two_cycle_rejected():
    pts = [KeyPoint(1, "a", "a"), KeyPoint(2, "b", "b")]
    with pytest.raises(CycleDetected) as info:
        build_point_dag(pts, [Relation(1, 2, DEP), Relation(2, 1, CTX)])
    assert set(info.value.cycle) == {1, 2}


def test_dangling_and_duplicate():
    pts = [KeyPoint(1, "a", "a")]
    with pytest.raises(UnknownPointReference):
        build_point_dag(pts, [Relation(1, 5, DEP)])
    with pytest.raises(DuplicatePointId):
        build_point_dag(pts + [KeyPoint(1, "b", "b")], [])


def test_null_relations_dropped():
    pts = [KeyPoint(1, "a", "a"), KeyPoint(2, "b", "b")]
    dag = build_point_dag(pts, [Relation(1, 2, EdgeKind.NULL)])
    assert not dag.edges


def test_self_relation_rejected():
    with pytest.raises(ValueError):
        Relation(1, 1, DEP)


def test_two_chain_stage_edges(two_chain_dag):
    assert _edge_strings(expand_to_stage_graph(two_chain_dag)) == {
        ("Pre:1", "Dec:1"), ("Pre:2", "Dec:2"), ("Pre:3", "Dec:3"), ("Pre:4", "Dec:4"),
        ("Pre:1", "Pre:2"), ("Dec:3", "Pre:4"),
    }


def test_dependent_chain_edges():
    pts = [KeyPoint(1, "a", "a"), KeyPoint(2, "b", "b")]
    edges = _edge_strings(expand_to_stage_graph(build_point_dag(pts, [Relation(1, 2, DEP)])))
    assert ("Dec:1", "Pre:2") in edges and ("Pre:1", "Pre:2") not in edges


def test_both_kinds_from_same_parent_keep_both_edges():
    pts = [KeyPoint(1, "a", "a"), KeyPoint(2, "b", "b")]
    dag = build_point_dag(pts, [Relation(1, 2, CTX), Relation(1, 2, DEP)])
    edges = _edge_strings(expand_to_stage_graph(dag))
    assert {("Pre:1", "Pre:2"), ("Dec:1", "Pre:2")} <= edges


def test_resource_class_follows_phase():
    assert Pre(3).resource_class is ResourceClass.COMPUTE
    assert Dec(3).resource_class is ResourceClass.BANDWIDTH
    assert sorted([Dec(1), Pre(2), Pre(1)]) == [Pre(1), Dec(1), Pre(2)]


def test_ready_set_examples(two_chain_dag):
    g = expand_to_stage_graph(two_chain_dag)
    assert ready_set(g, set()) == {Pre(1), Pre(3)}
    assert ready_set(g, {Pre(1)}) == {Dec(1), Pre(2), Pre(3)}
    assert ready_set(g, set(g.stages)) == set()


def test_wavefronts():
    g = expand_to_stage_graph(build_point_dag(*two_chain_parts()))
    assert topological_wavefronts(g) == [
        {Pre(1), Pre(3)}, {Dec(1), Pre(2), Dec(3)}, {Dec(2), Pre(4)}, {Dec(4)},
    ]
    two = build_point_dag([KeyPoint(1, "a", "a"), KeyPoint(2, "b", "b")], [])
    assert topological_wavefronts(expand_to_stage_graph(two)) == [{Pre(1), Pre(2)}, {Dec(1), Dec(2)}]
    chain = build_point_dag([KeyPoint(1, "a", "a"), KeyPoint(2, "b", "b")], [Relation(1, 2, DEP)])
    assert [len(w) for w in topological_wavefronts(expand_to_stage_graph(chain))] == [1, 1, 1, 1]


@pytest.mark.parametrize("seed", range(40))
def test_random_graphs_against_oracles(seed):
    rng = random.Random(seed)
    points, relations = random_dag(rng)
    dag = build_point_dag(points, relations)
    g = expand_to_stage_graph(dag)
    edges = _edge_strings(g)
    stages = {str(s) for s in g.stages}
    assert edges == stage_edges_by_rule([p.id for p in points], relations)
    assert not has_cycle(stages, edges)

    # repeated ready-set stepping visits each stage once, never before its predecessors
    completed, visited = set(), []
    while len(completed) < len(g.stages):
        ready = ready_set(g, completed)
        assert {str(s) for s in ready} == brute_ready(stages, edges, {str(s) for s in completed})
        pick = rng.choice(sorted(ready))
        for a, b in edges:
            if b == str(pick):
                assert a in {str(s) for s in completed}
        # monotonicity: everything ready now is ready or done after one more completion
        after = ready_set(g, completed | {pick})
        assert ready <= after | completed | {pick}
        completed.add(pick)
        visited.append(pick)
    assert len(visited) == len(set(visited)) == len(g.stages)

    order = [s for w in topological_wavefronts(g) for s in sorted(w)]
    pos = {str(s): i for i, s in enumerate(order)}
    assert all(pos[a] < pos[b] for a, b in edges)
    for front in topological_wavefronts(g):
        names = {str(s) for s in front}
        assert not any(a in names and b in names for a, b in edges)
