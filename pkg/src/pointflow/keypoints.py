"""Incremental parser for the key point stream.

The generation model is asked to answer with a JSON array of records::

    [{"id":1,"point":"build the equations","deps":[]},
     {"id":2,"point":"solve x","deps":[{"on":1,"kind":"contextual"}]}]

:func:`feed` hands back each record as soon as its closing brace arrives, so the
caller can act on points before decoding has finished. Text before the array
opener is skipped, unknown record fields are ignored.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .dag import EdgeKind, KeyPoint, Relation
from .errors import CycleDetected, MalformedRecord, TruncatedStream, UnknownKindTag

log = logging.getLogger(__name__)

KIND_TAGS = {k.value: k for k in EdgeKind}

SCANNING, INSIDE_ARRAY, INSIDE_RECORD, DONE = "scanning", "inside-array", "inside-record", "done"


@dataclass(frozen=True)
class Dependency:
    on: int
    kind: str


@dataclass(frozen=True)
class KeyPointRecord:
    id: int
    point: str
    deps: tuple[Dependency, ...] = ()

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "point": self.point,
            "deps": [{"on": d.on, "kind": d.kind} for d in self.deps],
        }


def dumps_records(records) -> str:
    """Serialize records in the canonical compact wire format."""
    return json.dumps([r.to_wire() for r in records], separators=(",", ":"), ensure_ascii=False)


@dataclass
class ParserState:
    buffer: str = ""
    emitted: int = 0
    mode: str = SCANNING
    warnings: list[str] = field(default_factory=list)
    # bytes of stream text already discarded from the front of ``buffer``
    _consumed_bytes: int = 0
    _pos: int = 0
    _record_start: int = 0
    _depth: int = 0
    _in_string: bool = False
    _escape: bool = False
    _seen_ids: set = field(default_factory=set)

    @property
    def done(self) -> bool:
        return self.mode == DONE

    def _byte_offset(self, index: int) -> int:
        return self._consumed_bytes + len(self.buffer[:index].encode("utf-8"))

    def _discard(self, upto: int) -> None:
        self._consumed_bytes += len(self.buffer[:upto].encode("utf-8"))
        self.buffer = self.buffer[upto:]
        self._pos -= upto
        self._record_start -= upto


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _record_from_obj(obj, offset: int) -> KeyPointRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not an object", offset)
    missing = [f for f in ("id", "point", "deps") if f not in obj]
    if missing:
        raise MalformedRecord(f"record lacks field(s) {', '.join(missing)}", offset)
    rid, point, deps = obj["id"], obj["point"], obj["deps"]
    if not _is_int(rid) or rid < 1:
        raise MalformedRecord(f"record id must be a positive integer, got {rid!r}", offset)
    if not isinstance(point, str) or not point.strip():
        raise MalformedRecord(f"record {rid} has an empty or non-text point", offset)
    if not isinstance(deps, list):
        raise MalformedRecord(f"record {rid} deps is not a list", offset)
    parsed = []
    for d in deps:
        if not isinstance(d, dict) or not _is_int(d.get("on")) or not isinstance(d.get("kind"), str):
            raise MalformedRecord(f"record {rid} has a malformed dependency {d!r}", offset)
        parsed.append(Dependency(d["on"], d["kind"]))
    return KeyPointRecord(rid, point, tuple(parsed))


def _find_opener(buf: str, start: int) -> tuple[int | None, bool]:
    """Locate an array opener: ``[`` whose next non-blank char is ``{`` or ``]``.

    Returns ``(index, need_more)``; ``need_more`` means the buffer ends before
    the lookahead could decide.
    """
    i = buf.find("[", start)
    while i != -1:
        j = i + 1
        while j < len(buf) and buf[j].isspace():
            j += 1
        if j == len(buf):
            return i, True
        if buf[j] in "{]":
            return i, False
        i = buf.find("[", i + 1)
    return None, False


def feed(state: ParserState, fragment: str) -> list[KeyPointRecord]:
    """Consume ``fragment``; return the records completed by it, in order."""
    if state.done:
        return []
    state.buffer += fragment
    out: list[KeyPointRecord] = []
    buf = state.buffer

    while state._pos < len(buf) and not state.done:
        if state.mode == SCANNING:
            idx, need_more = _find_opener(buf, state._pos)
            if idx is None:
                state._pos = len(buf)
                break
            if need_more:
                # a trailing '[' may still turn out to be the opener
                state._pos = idx
                break
            state.mode = INSIDE_ARRAY
            state._pos = idx + 1
            continue

        if state.mode == INSIDE_ARRAY:
            ch = buf[state._pos]
            if ch.isspace() or ch == ",":
                state._pos += 1
            elif ch == "{":
                state.mode = INSIDE_RECORD
                state._record_start = state._pos
                state._depth = 1
                state._in_string = False
                state._escape = False
                state._pos += 1
            elif ch == "]":
                state.mode = DONE
                state._pos += 1
            else:
                raise MalformedRecord(f"unexpected {ch!r} between records", state._byte_offset(state._pos))
            continue

        # INSIDE_RECORD: scan for the matching close brace, string-aware
        i = state._pos
        n = len(buf)
        depth, in_str, esc = state._depth, state._in_string, state._escape
        closed = -1
        while i < n:
            ch = buf[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch in "{[":
                depth += 1
            elif ch in "}]":
                depth -= 1
                if depth == 0:
                    closed = i
                    break
            i += 1
        state._depth, state._in_string, state._escape = depth, in_str, esc
        if closed < 0:
            state._pos = n
            break
        start = state._record_start
        text = buf[start:closed + 1]
        offset = state._byte_offset(start)
        if buf[closed] != "}":
            raise MalformedRecord("record closed with ']'", offset)
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid record syntax: {exc.msg}", offset) from None
        record = _record_from_obj(obj, offset)
        if record.id in state._seen_ids:
            msg = f"duplicate key point id {record.id}; the later record wins"
            state.warnings.append(msg)
            log.warning(msg)
        state._seen_ids.add(record.id)
        out.append(record)
        state.emitted += 1
        state.mode = INSIDE_ARRAY
        state._pos = closed + 1

    # drop everything before the current point of interest
    keep_from = state._record_start if state.mode == INSIDE_RECORD else state._pos
    if keep_from > 0:
        state._discard(keep_from)
    return out


def finalize(state: ParserState) -> list[KeyPointRecord]:
    """Close the stream. Records were already flushed by :func:`feed`."""
    if state.mode == INSIDE_RECORD:
        raise TruncatedStream(
            f"stream ended inside a record starting at byte {state._byte_offset(state._record_start)}"
        )
    if state.mode == SCANNING:
        raise TruncatedStream("stream ended before a key point array was opened")
    state.mode = DONE
    return []


def parse_keypoints(text: str) -> list[KeyPointRecord]:
    """One-shot parse of a complete stream."""
    state = ParserState()
    records = feed(state, text)
    records += finalize(state)
    return records


def canonical_kind(tag: str) -> EdgeKind:
    try:
        return KIND_TAGS[tag.strip().lower()]
    except KeyError:
        raise UnknownKindTag(tag) from None


def title_of(point_text: str, limit: int = 80) -> str:
    line = point_text.strip().splitlines()[0].strip()
    if len(line) <= limit:
        return line
    return line[: limit - 3].rstrip() + "..."


def to_domain(records: list[KeyPointRecord]) -> tuple[list[KeyPoint], list[Relation]]:
    """Convert records into key points and non-Null relations.

    A repeated id replaces the earlier record's content but keeps its position.
    """
    latest: dict[int, KeyPointRecord] = {}
    for r in records:
        if r.id in latest:
            log.warning("duplicate key point id %d; the later record wins", r.id)
        latest[r.id] = r

    points: list[KeyPoint] = []
    relations: list[Relation] = []
    for r in latest.values():
        points.append(KeyPoint(r.id, title_of(r.point), r.point.strip()))
        for d in r.deps:
            kind = canonical_kind(d.kind)
            if kind is EdgeKind.NULL:
                continue
            if d.on == r.id:
                raise CycleDetected([r.id])
            relations.append(Relation(d.on, r.id, kind))
    return points, relations
