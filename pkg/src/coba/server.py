"""In-repo HTTP fixture server: exposes any LmProvider over the wire
protocol, for exercising the remote client and conformance suite without a
real model behind it.
"""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterator

import numpy as np

from .lm import EMBEDDINGS_PATH, LOGPROBS_PATH, META_PATH, LmProvider

# Zero probabilities are clamped here so emitted logprobs stay finite; the
# induced normalization error is far below the protocol's 1e-4 slack.
_LOG_CLAMP = 1e-300


class _BadRequest(Exception):
    """Malformed body → HTTP 400."""


class _OutOfRange(Exception):
    """Structurally valid ids outside the vocabulary → HTTP 422."""


def _expect_id_list(body: dict, key: str, size: int, allow_missing: bool = False) -> list[int]:
    if key not in body:
        if allow_missing:
            return []
        raise _BadRequest(f"missing field {key!r}")
    value = body[key]
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
        raise _BadRequest(f"field {key!r} must be a list of integers")
    if any(v < 0 or v >= size for v in value):
        raise _OutOfRange(f"field {key!r} contains ids outside [0, {size})")
    return value


class _Handler(BaseHTTPRequestHandler):
    lm: LmProvider  # set by make_server on the subclass

    def log_message(self, *args):  # silence request logging in tests
        pass

    def _send(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except ValueError as exc:
            raise _BadRequest(f"body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise _BadRequest("body must be a JSON object")
        return body

    def do_GET(self) -> None:
        if self.path != META_PATH:
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        vocab = self.lm.vocabulary()
        self._send(
            200,
            {
                "vocab_size": vocab.size,
                "sos_id": vocab.sos_id,
                "eos_id": vocab.eos_id,
                "special_ids": sorted(vocab.special_ids),
                "embedding_dim": self.lm.embeddings().dim,
            },
        )

    def do_POST(self) -> None:
        try:
            if self.path == LOGPROBS_PATH:
                self._send(200, self._logprobs(self._read_body()))
            elif self.path == EMBEDDINGS_PATH:
                self._send(200, self._embeddings(self._read_body()))
            else:
                self._send(404, {"error": f"unknown path {self.path}"})
        except _BadRequest as exc:
            self._send(400, {"error": str(exc)})
        except _OutOfRange as exc:
            self._send(422, {"error": str(exc)})

    def _logprobs(self, body: dict) -> dict:
        size = self.lm.vocabulary().size
        context = _expect_id_list(body, "context", size)
        prefix = _expect_id_list(body, "prefix", size)
        conditioned = body.get("conditioned", True)
        if not isinstance(conditioned, bool):
            raise _BadRequest("field 'conditioned' must be a boolean")
        dist = self.lm.next_distribution(tuple(context), tuple(prefix), conditioned)
        logprobs = np.log(np.maximum(dist.probs, _LOG_CLAMP))
        return {"logprobs": [float(x) for x in logprobs]}

    def _embeddings(self, body: dict) -> dict:
        size = self.lm.vocabulary().size
        ids = _expect_id_list(body, "ids", size)
        table = self.lm.embeddings()
        return {"vectors": [[float(x) for x in table.vectors[i]] for i in ids]}


def make_server(lm: LmProvider, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Build (but do not start) a wire-protocol server around a provider."""
    handler = type("BoundHandler", (_Handler,), {"lm": lm})
    return ThreadingHTTPServer((host, port), handler)


@contextmanager
def serve_lm(lm: LmProvider, host: str = "127.0.0.1", port: int = 0) -> Iterator[str]:
    """Run a provider behind the wire protocol on a background thread and
    yield its base URL."""
    server = make_server(lm, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://{server.server_address[0]}:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)
