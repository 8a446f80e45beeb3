"""Exception hierarchy.

The three top-level families map onto CLI exit codes: configuration (2),
backend (3) and parse (4).
"""

from __future__ import annotations


class PointflowError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PointflowError):
    pass


class ParseError(PointflowError):
    pass


class BackendError(PointflowError):
    pass


# dag


class DagError(ParseError):
    pass


class CycleDetected(DagError):
    def __init__(self, cycle: list[int]):
        self.cycle = cycle
        path = " -> ".join(str(i) for i in [*cycle, cycle[0]])
        super().__init__(f"dependency cycle among key points: {path}")


class UnknownPointReference(DagError):
    def __init__(self, relation):
        self.relation = relation
        super().__init__(f"relation references an unknown point: {relation}")


class DuplicatePointId(DagError):
    def __init__(self, point_id: int):
        self.point_id = point_id
        super().__init__(f"duplicate key point id {point_id}")


# keypoint stream


class MalformedRecord(ParseError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class TruncatedStream(ParseError):
    pass


class UnknownKindTag(ParseError):
    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"unknown dependency kind {tag!r}")


# retrieval


class InvalidChunkParams(ConfigError):
    pass


class EmptyIndex(PointflowError):
    pass


class EmbedderUnavailable(BackendError):
    pass


# prompts / expansion


class MissingDependentOutput(PointflowError):
    def __init__(self, point_id: int, parent_id: int):
        self.point_id = point_id
        self.parent_id = parent_id
        super().__init__(
            f"point {point_id} needs the output of point {parent_id}, which is not available"
        )


class MissingOutput(PointflowError):
    def __init__(self, point_id: int):
        self.point_id = point_id
        super().__init__(f"no output for point {point_id}")


# backends


class InvalidRequest(BackendError):
    pass


class UnscriptedPrompt(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class HttpError(BackendError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"endpoint returned HTTP {status}: {body[:200]}")


class StreamInterrupted(BackendError):
    pass


class BackendFailure(BackendError):
    """A stage failed while executing; carries the partial timeline."""

    def __init__(self, point_id, phase, cause: BaseException, timeline=None):
        self.point_id = point_id
        self.phase = phase
        self.cause = cause
        self.timeline = timeline
        super().__init__(f"backend failed on {phase} of point {point_id}: {cause}")


# scheduling / metrics


class QueueFull(PointflowError):
    pass


class DivisionByZeroBaseline(PointflowError):
    pass
