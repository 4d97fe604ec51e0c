"""Bundled mock servers implementing the remote wire schemas.

The video mock answers a generation request by holding the submitted first
frame for the requested frame count (optionally misbehaving on demand:
transient 5xx failures, truncated keypoint lists). The reasoner mock
returns a fixed verdict line. Both run threaded on an ephemeral port and
double as integration fixtures for the retry/parse paths.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class _MockHandler(BaseHTTPRequestHandler):
    server_version = "physagent-mock/1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._send(400, {"error": "bad json"})
            return
        self.server.mock.request_count += 1
        status, doc = self.server.mock.respond(payload)
        self._send(status, doc)

    def _send(self, status: int, doc: dict):
        body = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class _BaseMock:
    def __init__(self, port: int = 0):
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _MockHandler)
        self._server.mock = self
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self.request_count = 0

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def serve_forever(self):
        self._thread.start()
        self._thread.join()

    def respond(self, payload: dict):  # pragma: no cover - overridden
        raise NotImplementedError


class MockVideoServer(_BaseMock):
    """Echo-style video generator: repeats the first frame for every frame.

    fail_times answers that many initial requests with fail_status before
    succeeding; keypoint_count overrides the per-frame keypoint count to
    exercise schema validation; n_frames overrides the requested count.
    """

    def __init__(self, port: int = 0, fail_times: int = 0, fail_status: int = 503,
                 keypoint_count: int | None = None, n_frames: int | None = None,
                 generator_id: str = "mock-video-v1"):
        super().__init__(port)
        self.fail_times = fail_times
        self.fail_status = fail_status
        self.keypoint_count = keypoint_count
        self.n_frames = n_frames
        self.generator_id = generator_id

    def respond(self, payload: dict):
        if self.fail_times > 0:
            self.fail_times -= 1
            return self.fail_status, {"error": "transient failure"}
        first = payload.get("first_frame", {})
        keypoints = first.get("keypoints")
        if not isinstance(keypoints, list):
            return 400, {"error": "missing first_frame.keypoints"}
        fps = float(payload.get("fps", 8.0))
        duration = float(payload.get("duration_s", 5.0))
        count = self.n_frames if self.n_frames is not None else int(round(fps * duration))
        count = max(count, 2)
        frame = keypoints
        if self.keypoint_count is not None:
            frame = keypoints[: self.keypoint_count]
        return 200, {
            "generator_id": self.generator_id,
            "fps": fps,
            "frames": [frame for _ in range(count)],
        }


class MockVlmServer(_BaseMock):
    """Fixed-reply reasoner; set reply_text to steer the parsed verdict."""

    def __init__(self, port: int = 0, reply_text: str = "CONTINUE: mock approval"):
        super().__init__(port)
        self.reply_text = reply_text

    def respond(self, payload: dict):
        if "task" not in payload or "after_frame" not in payload:
            return 400, {"error": "missing task or after_frame"}
        return 200, {"verdict_text": self.reply_text}
