"""Backend-neutral generation types.

A generation is split into two calls so the engine can schedule them on
different resource classes: :meth:`Backend.prefill` processes the prompt and
:meth:`Backend.decode` produces the output tokens. ``generate`` does both.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Callable, Optional, Protocol

from ..errors import InvalidRequest

PREFILL, DECODE, WHOLE = "prefill", "decode", "whole"

TokenSink = Callable[[str], None]

_TOKEN = re.compile(r"\S+")


def tokenize(text: str) -> list[str]:
    """Whitespace tokenizer used for all simulator token accounting."""
    return text.split()


def token_pieces(text: str) -> list[str]:
    """Split ``text`` into stream fragments, one token each, that concatenate back to ``text``."""
    pieces = []
    last = 0
    for m in _TOKEN.finditer(text):
        pieces.append(text[last:m.end()])
        last = m.end()
    if last < len(text):
        if pieces:
            pieces[-1] += text[last:]
        else:
            pieces.append(text[last:])
    return pieces


def truncate_tokens(text: str, max_tokens: int) -> str:
    matches = list(_TOKEN.finditer(text))
    if len(matches) <= max_tokens:
        return text
    return text[:matches[max_tokens - 1].end()]


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 512
    phase_hint: str = WHOLE
    stream: bool = False
    seed: int = 0
    # simulator scripting: which script table to consult and under which key
    role: Optional[str] = None
    key: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.prompt, str) or not self.prompt.strip():
            raise InvalidRequest("generation prompt must be non-empty")
        if self.max_tokens < 1:
            raise InvalidRequest("max_tokens must be at least 1")
        if self.phase_hint not in (PREFILL, DECODE, WHOLE):
            raise InvalidRequest(f"unknown phase hint {self.phase_hint!r}")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    prompt_tokens: int
    output_tokens: int
    prefill_duration: float
    decode_duration: float
    token_times: Optional[tuple[float, ...]] = None


@dataclass
class Prefilled:
    request: GenerationRequest
    prompt_tokens: int
    duration: float
    handle: Any = None


class Backend(Protocol):
    #: "logical" for simulated time units, "wall" for real seconds
    clock: str

    def prefill(self, request: GenerationRequest) -> Prefilled: ...

    def decode(self, prefilled: Prefilled, sink: TokenSink | None = None) -> GenerationResult: ...

    def generate(self, request: GenerationRequest, sink: TokenSink | None = None) -> GenerationResult: ...

    def search_duration(self, n_results: int) -> float: ...
