"""Streaming client for chat-completions-compatible HTTP endpoints.

Prefill is measured as time to the first content delta; decode is the rest of
the stream. Token counts come from the endpoint's ``usage`` block when present.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import httpx

from ..errors import BackendTimeout, HttpError, StreamInterrupted
from .base import GenerationRequest, GenerationResult, Prefilled, TokenSink, tokenize

log = logging.getLogger(__name__)

DEFAULT_KEY_ENV = "POINTFLOW_API_KEY"
_RETRYABLE = {408, 429, 500, 502, 503, 504}


@dataclass
class _OpenStream:
    response: httpx.Response
    lines: object
    started: float
    first_piece: str = ""
    first_at: float = 0.0
    usage: dict = field(default_factory=dict)
    finished: bool = False

    def close(self):
        self.response.close()


def _parse_event(data: str, stream: _OpenStream) -> str | None:
    """Return the content delta carried by one SSE data payload, if any."""
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise StreamInterrupted(f"undecodable stream event: {data[:80]!r}") from exc
    if payload.get("usage"):
        stream.usage = payload["usage"]
    choices = payload.get("choices") or []
    if not choices:
        return None
    delta = choices[0].get("delta") or {}
    return delta.get("content") or None


class ChatCompletionsBackend:
    clock = "wall"

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 api_key_env: str = DEFAULT_KEY_ENV, timeout: float = 120.0, retries: int = 2,
                 backoff: float = 0.5, client: httpx.Client | None = None):
        self.url = url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def _body(self, request: GenerationRequest, stream: bool) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "stream": stream,
        }
        if stream:
            body["stream_options"] = {"include_usage": True}
        return body

    def _with_retries(self, send):
        attempt = 0
        while True:
            try:
                resp = send()
            except httpx.TimeoutException as exc:
                err = BackendTimeout(f"request timed out after {self.timeout}s")
                err.__cause__ = exc
            except httpx.TransportError as exc:
                err = StreamInterrupted(f"connection failed: {exc}")
                err.__cause__ = exc
            else:
                if resp.status_code < 400:
                    return resp
                resp.read()
                err = HttpError(resp.status_code, resp.text)
                resp.close()
                if resp.status_code not in _RETRYABLE:
                    raise err
            if attempt >= self.retries:
                raise err
            delay = self.backoff * (2 ** attempt)
            log.warning("endpoint call failed (%s); retrying in %.2fs", err, delay)
            time.sleep(delay)
            attempt += 1

    def _next_piece(self, stream: _OpenStream) -> str | None:
        """Read the stream up to the next content delta; None at ``[DONE]``."""
        try:
            for line in stream.lines:
                if not line or line.startswith(":"):
                    continue
                if not line.startswith("data:"):
                    continue
                data = line[5:].strip()
                if data == "[DONE]":
                    stream.finished = True
                    return None
                piece = _parse_event(data, stream)
                if piece:
                    return piece
        except httpx.TimeoutException as exc:
            stream.close()
            raise BackendTimeout("stream stalled past the read timeout") from exc
        except httpx.TransportError as exc:
            stream.close()
            raise StreamInterrupted(f"stream dropped: {exc}") from exc
        stream.close()
        raise StreamInterrupted("stream ended without [DONE]")

    def prefill(self, request: GenerationRequest) -> Prefilled:
        started = time.monotonic()

        def send():
            req = self._client.build_request("POST", f"{self.url}/chat/completions",
                                             json=self._body(request, True), headers=self._headers())
            return self._client.send(req, stream=True)

        resp = self._with_retries(send)
        stream = _OpenStream(resp, resp.iter_lines(), started)
        stream.first_piece = self._next_piece(stream) or ""
        stream.first_at = time.monotonic()
        return Prefilled(request, len(tokenize(request.prompt)), stream.first_at - started, stream)

    def decode(self, prefilled: Prefilled, sink: TokenSink | None = None) -> GenerationResult:
        stream: _OpenStream = prefilled.handle
        pieces, times = [], []
        piece = stream.first_piece
        while piece:
            pieces.append(piece)
            times.append(time.monotonic() - stream.first_at)
            if sink is not None:
                sink(piece)
            piece = self._next_piece(stream)
        stream.close()
        text = "".join(pieces)
        usage = stream.usage
        return GenerationResult(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", prefilled.prompt_tokens)),
            output_tokens=int(usage.get("completion_tokens", len(tokenize(text)))),
            prefill_duration=prefilled.duration,
            decode_duration=time.monotonic() - stream.first_at,
            token_times=tuple(times),
        )

    def generate(self, request: GenerationRequest, sink: TokenSink | None = None) -> GenerationResult:
        if request.stream:
            return self.decode(self.prefill(request), sink)
        started = time.monotonic()
        resp = self._with_retries(lambda: self._client.post(
            f"{self.url}/chat/completions", json=self._body(request, False), headers=self._headers()))
        elapsed = time.monotonic() - started
        payload = resp.json()
        text = payload["choices"][0]["message"]["content"] or ""
        usage = payload.get("usage") or {}
        if sink is not None and text:
            sink(text)
        return GenerationResult(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", len(tokenize(request.prompt)))),
            output_tokens=int(usage.get("completion_tokens", len(tokenize(text)))),
            prefill_duration=0.0,
            decode_duration=elapsed,
        )

    def search_duration(self, n_results: int) -> float:
        # wall-clock executors measure search time themselves
        return 0.0

    def close(self):
        self._client.close()
