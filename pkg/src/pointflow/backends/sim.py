"""Deterministic cost-model simulator.

Durations are in logical time units::

    prefill = prefill_base + prefill_per_token * prompt_tokens
    decode  = decode_per_token * output_tokens

Output text comes from a :class:`ScriptBook` when one matches the request,
otherwise from a synthesizer seeded by ``(seed, prompt)``; the same request
therefore always produces the same text regardless of call order.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import UnscriptedPrompt
from .base import (
    GenerationRequest,
    GenerationResult,
    Prefilled,
    TokenSink,
    token_pieces,
    tokenize,
    truncate_tokens,
)

_WORDS = (
    "the system first gathers every relevant fact and then weighs each option "
    "against the goal so that a clear plan emerges step by step with checks "
    "along the way because small errors early compound later while careful "
    "notes keep the reasoning honest and easy to verify for any reader who "
    "wants to follow the argument from premise to final result"
).split()


def fingerprint(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SimCostModel:
    prefill_base: float = 2.0
    prefill_per_token: float = 0.01
    decode_per_token: float = 1.0
    search_cost: float = 5.0
    # synthesizer sizes used when no script matches
    default_output_tokens: int = 64
    default_points: int = 3

    def __post_init__(self):
        for name in ("prefill_base", "prefill_per_token", "decode_per_token", "search_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def prefill_time(self, prompt_tokens: int) -> float:
        return self.prefill_base + self.prefill_per_token * prompt_tokens

    def decode_time(self, output_tokens: int) -> float:
        return self.decode_per_token * output_tokens


@dataclass
class ScriptBook:
    """Scripted responses. ``prompts`` is keyed by prompt fingerprint, the
    others by the request key (query text or point instruction)."""

    prompts: dict[str, str] = field(default_factory=dict)
    keypoints: dict[str, str] = field(default_factory=dict)
    points: dict[str, str] = field(default_factory=dict)
    answers: dict[str, str] = field(default_factory=dict)

    def lookup(self, request: GenerationRequest) -> str | None:
        hit = self.prompts.get(fingerprint(request.prompt))
        if hit is not None:
            return hit
        table = {"keypoints": self.keypoints, "point": self.points, "answer": self.answers}.get(
            request.role or ""
        )
        if table is None or request.key is None:
            return None
        return table.get(request.key)

    def merge(self, other: ScriptBook) -> ScriptBook:
        return ScriptBook(
            {**self.prompts, **other.prompts},
            {**self.keypoints, **other.keypoints},
            {**self.points, **other.points},
            {**self.answers, **other.answers},
        )

    def to_json(self) -> dict:
        return {"prompts": self.prompts, "keypoints": self.keypoints,
                "points": self.points, "answers": self.answers}

    @classmethod
    def from_json(cls, data: dict) -> ScriptBook:
        return cls(*(dict(data.get(k, {})) for k in ("prompts", "keypoints", "points", "answers")))

    @classmethod
    def load(cls, path: str | Path) -> ScriptBook:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class SimBackend:
    clock = "logical"

    def __init__(self, cost: SimCostModel | None = None, scripts: ScriptBook | None = None,
                 strict: bool = False):
        self.cost = cost or SimCostModel()
        self.scripts = scripts or ScriptBook()
        self.strict = strict
        self._lock = threading.Lock()
        self.calls = {"prefill": 0, "decode": 0}

    def _rng(self, request: GenerationRequest) -> random.Random:
        digest = hashlib.sha256(f"{request.seed}\x00{request.prompt}".encode()).digest()
        return random.Random(int.from_bytes(digest[:8], "little"))

    def _synthesize(self, request: GenerationRequest) -> str:
        rng = self._rng(request)
        if request.role == "keypoints":
            topic = " ".join((request.key or request.prompt).split()[:12])
            records = [
                {"id": i, "point": f"Aspect {i} of: {topic}", "deps": []}
                for i in range(1, self.cost.default_points + 1)
            ]
            return json.dumps(records, separators=(",", ":"))
        n = self.cost.default_output_tokens
        if request.role == "answer":
            n *= self.cost.default_points
        return " ".join(rng.choice(_WORDS) for _ in range(n))

    def _output_for(self, request: GenerationRequest) -> str:
        text = self.scripts.lookup(request)
        if text is None:
            if self.strict:
                raise UnscriptedPrompt(
                    f"no script for {request.role or 'prompt'} {request.key or fingerprint(request.prompt)!r}"
                )
            text = self._synthesize(request)
        return truncate_tokens(text, request.max_tokens)

    def prefill(self, request: GenerationRequest) -> Prefilled:
        n = len(tokenize(request.prompt))
        with self._lock:
            self.calls["prefill"] += 1
        return Prefilled(request, n, self.cost.prefill_time(n))

    def decode(self, prefilled: Prefilled, sink: TokenSink | None = None) -> GenerationResult:
        text = self._output_for(prefilled.request)
        n_out = len(tokenize(text))
        with self._lock:
            self.calls["decode"] += 1
        if sink is not None:
            for piece in token_pieces(text):
                sink(piece)
        c = self.cost.decode_per_token
        return GenerationResult(
            text=text,
            prompt_tokens=prefilled.prompt_tokens,
            output_tokens=n_out,
            prefill_duration=prefilled.duration,
            decode_duration=self.cost.decode_time(n_out),
            token_times=tuple(c * (i + 1) for i in range(n_out)),
        )

    def generate(self, request: GenerationRequest, sink: TokenSink | None = None) -> GenerationResult:
        return self.decode(self.prefill(request), sink)

    def search_duration(self, n_results: int) -> float:
        return self.cost.search_cost
