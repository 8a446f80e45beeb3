from __future__ import annotations

import pytest

from pointflow.dag import EdgeKind, KeyPoint, Relation, build_point_dag

CTX, DEP = EdgeKind.CONTEXTUAL, EdgeKind.DEPENDENT


def diamond_parts():
    points = [
        KeyPoint(1, "build", "build the equations"),
        KeyPoint(2, "solve x", "solve x"),
        KeyPoint(3, "solve y", "solve y"),
        KeyPoint(4, "check", "check"),
    ]
    relations = [Relation(1, 2, CTX), Relation(1, 3, CTX), Relation(2, 4, DEP), Relation(3, 4, DEP)]
    return points, relations


def two_chain_parts():
    points = [KeyPoint(i, f"point {i}", f"expand point {i}") for i in range(1, 5)]
    relations = [Relation(1, 2, CTX), Relation(3, 4, DEP)]
    return points, relations


@pytest.fixture
def diamond_dag():
    return build_point_dag(*diamond_parts())


@pytest.fixture
def two_chain_dag():
    return build_point_dag(*two_chain_parts())


# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
