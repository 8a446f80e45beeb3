"""Tiny chat-completions endpoint for contract tests (stdlib only)."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubState:
    def __init__(self):
        self.fail_first = 0        # answer this many requests with 503
        self.status = 200          # non-retryable status override when != 200
        self.drop_done = False     # end the stream without [DONE]
        self.calls = 0
        self.auth: list[str | None] = []
        self.lock = threading.Lock()


def reply_for(prompt: str) -> str:
    words = prompt.split()
    return "echo: " + " ".join(reversed(words[:20]))


def _handler(state: StubState):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            with state.lock:
                state.calls += 1
                state.auth.append(self.headers.get("Authorization"))
                failing = state.fail_first > 0
                if failing:
                    state.fail_first -= 1
            if failing or state.status != 200:
                code = 503 if failing else state.status
                payload = json.dumps({"error": "nope"}).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
                return
            prompt = body["messages"][-1]["content"]
            text = reply_for(prompt)
            usage = {"prompt_tokens": len(prompt.split()), "completion_tokens": len(text.split())}
            if not body.get("stream"):
                payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}],
                                      "usage": usage}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
                return
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Connection", "close")
            self.end_headers()
            pieces = [text[i:i + 4] for i in range(0, len(text), 4)]
            events = [{"choices": [{"delta": {"role": "assistant"}}]}]
            events += [{"choices": [{"delta": {"content": p}}]} for p in pieces]
            events.append({"choices": [], "usage": usage})
            for ev in events:
                self.wfile.write(f"data: {json.dumps(ev)}\n\n".encode())
                self.wfile.flush()
            if not state.drop_done:
                self.wfile.write(b"data: [DONE]\n\n")
            self.wfile.flush()
            self.close_connection = True

    return Handler


class StubServer:
    def __init__(self):
        self.state = StubState()
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _handler(self.state))
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> StubServer:
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
