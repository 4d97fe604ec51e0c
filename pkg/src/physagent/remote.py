"""HTTP clients for the remote generation and reasoning contracts.

Wire schemas (JSON over HTTP POST):

* video generator: request ``{prompt, fps, duration_s, first_frame: {width,
  height, keypoints: [[u, v, visible] x 14], raster_png_base64?}}`` ->
  response ``{generator_id, fps, frames: [[[u, v, visible] x 14], ...]}``.
* vision-language reasoner: request ``{task, before_frame, after_frame,
  allowed_verdicts}`` -> response ``{verdict_text}`` parsed by the strict
  verdict protocol.

Both clients retry idempotently on transport faults (connection errors,
timeouts, 5xx) up to three attempts total; schema violations raise
MalformedResponse and non-transient statuses raise ServiceError.
"""

from __future__ import annotations

import base64
import io
import os

import requests

from .errors import MalformedResponse, RemoteTimeout, ServiceError
from .kinematics import KEYPOINT_COUNT, KeypointFrame
from .reasoner import Verdict, parse_verdict
from .world import Rollout, RolloutRequest

VIDEO_URL_ENV = "PHYSAGENT_VIDEO_URL"
VLM_URL_ENV = "PHYSAGENT_VLM_URL"
MAX_ATTEMPTS = 3


def frame_to_wire(frame: KeypointFrame) -> list:
    return [[float(u), float(v), bool(vis)] for u, v, vis in frame.points]


def wire_to_frame(entries) -> KeypointFrame:
    if not isinstance(entries, list) or len(entries) != KEYPOINT_COUNT:
        raise MalformedResponse(
            f"expected {KEYPOINT_COUNT} keypoints per frame, got "
            f"{len(entries) if isinstance(entries, list) else type(entries).__name__}")
    points = []
    for entry in entries:
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise MalformedResponse(f"keypoint entry {entry!r} is not [u, v, visible]")
        u, v, vis = entry
        if not isinstance(u, (int, float)) or not isinstance(v, (int, float)):
            raise MalformedResponse(f"non-numeric keypoint coordinates in {entry!r}")
        points.append((float(u), float(v), bool(vis)))
    return KeypointFrame(points=tuple(points))


def render_frame_png(frame: KeypointFrame, image_size: tuple[int, int]) -> bytes:
    """Rasterize visible keypoints to a small PNG (the one-way raster leg)."""
    from PIL import Image, ImageDraw

    img = Image.new("RGB", tuple(image_size), (16, 16, 16))
    draw = ImageDraw.Draw(img)
    for i, (u, v, vis) in enumerate(frame.points):
        if not vis:
            continue
        color = (240, 80, 60) if i < KEYPOINT_COUNT // 2 else (70, 130, 230)
        draw.ellipse([u - 4, v - 4, u + 4, v + 4], fill=color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _post_with_retries(url: str, payload: dict, timeout: float) -> dict:
    last_exc: Exception | None = None
    for _ in range(MAX_ATTEMPTS):
        try:
            response = requests.post(url, json=payload, timeout=timeout)
        except requests.Timeout as exc:
            last_exc = RemoteTimeout(f"no answer from {url} within {timeout}s")
            last_exc.__cause__ = exc
            continue
        except requests.ConnectionError as exc:
            last_exc = RemoteTimeout(f"connection to {url} failed: {exc}")
            last_exc.__cause__ = exc
            continue
        if 500 <= response.status_code < 600:
            last_exc = ServiceError(f"{url} answered {response.status_code}")
            continue
        if response.status_code < 200 or response.status_code >= 300:
            raise ServiceError(f"{url} answered {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedResponse(f"{url} returned non-JSON body") from exc
    raise last_exc if last_exc is not None else ServiceError(f"{url}: no attempts made")


def video_request_payload(request: RolloutRequest, include_raster: bool = True) -> dict:
    width, height = _frame_extent(request)
    first_frame = {
        "width": width,
        "height": height,
        "keypoints": frame_to_wire(request.initial.frame),
    }
    if include_raster:
        png = render_frame_png(request.initial.frame, (width, height))
        first_frame["raster_png_base64"] = base64.b64encode(png).decode("ascii")
    return {
        "prompt": request.prompt,
        "fps": request.fps,
        "duration_s": request.duration,
        "first_frame": first_frame,
    }


def _frame_extent(request: RolloutRequest) -> tuple[int, int]:
    # The observation does not carry the camera; bound the raster by the
    # visible keypoints with a margin, defaulting to VGA.
    us = [u for u, v, vis in request.initial.frame.points if vis]
    vs = [v for u, v, vis in request.initial.frame.points if vis]
    if not us:
        return (640, 480)
    return (max(640, int(max(us)) + 40), max(480, int(max(vs)) + 40))


def remote_generate(endpoint: str | None, request: RolloutRequest,
                    timeout: float = 60.0, include_raster: bool = True) -> Rollout:
    """Request a rollout from a remote image-to-video service."""
    url = endpoint or os.environ.get(VIDEO_URL_ENV)
    if not url:
        raise ServiceError(f"no video endpoint given and {VIDEO_URL_ENV} unset")
    doc = _post_with_retries(url, video_request_payload(request, include_raster), timeout)

    if not isinstance(doc, dict) or "frames" not in doc:
        raise MalformedResponse("response lacks a frames field")
    generator_id = doc.get("generator_id")
    if not isinstance(generator_id, str) or not generator_id:
        raise MalformedResponse("response lacks a generator_id")
    fps = doc.get("fps")
    if not isinstance(fps, (int, float)) or fps <= 0:
        raise MalformedResponse(f"bad fps in response: {fps!r}")
    frames = doc["frames"]
    if not isinstance(frames, list) or len(frames) < 2:
        raise MalformedResponse("response must carry at least 2 frames")
    parsed = tuple(wire_to_frame(f) for f in frames)
    return Rollout(frames=parsed, fps=float(fps), prompt=request.prompt,
                   generator_id=generator_id, seed=0)


def remote_verdict(endpoint: str | None, task: str, before: KeypointFrame,
                   after: KeypointFrame, timeout: float = 60.0) -> Verdict:
    """Ask a remote vision-language service to judge an execution outcome."""
    url = endpoint or os.environ.get(VLM_URL_ENV)
    if not url:
        raise ServiceError(f"no reasoner endpoint given and {VLM_URL_ENV} unset")
    payload = {
        "task": task,
        "before_frame": frame_to_wire(before),
        "after_frame": frame_to_wire(after),
        "allowed_verdicts": ["COMPLETE", "CONTINUE", "RETRY", "REPLAN", "IRRECOVERABLE"],
    }
    doc = _post_with_retries(url, payload, timeout)
    if not isinstance(doc, dict) or not isinstance(doc.get("verdict_text"), str):
        raise MalformedResponse("response lacks verdict_text")
    return parse_verdict(doc["verdict_text"])
