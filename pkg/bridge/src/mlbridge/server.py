"""TCP service wrapping a model adapter behind the detection protocol.

Request pipeline: decode the frame, ask the adapter for superset-class
proposals, crop each proposal with the configured margin (50 px default)
to give the verification stage context, then ask the adapter for a
verdict. Only verified proposals are returned. Adapter exceptions produce
an ErrorReply for that request only; the connection and the service stay
up.
"""
from __future__ import annotations

import math
import socketserver
import threading
import time

from . import wire


class BindFailure(Exception):
    pass


DEFAULT_MARGIN = 50.0


def crop_region(width, height, box, margin):
    """Margin-expanded, outward-rounded, frame-clamped crop rectangle.

    Returns (x0, y0, x1, y1) or None when the expanded box misses the frame.
    """
    x, y, w, h = box
    x0 = max(0, math.floor(x - margin))
    y0 = max(0, math.floor(y - margin))
    x1 = min(width, math.ceil(x + w + margin))
    y1 = min(height, math.ceil(y + h + margin))
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def extract_patch(pixels: bytes, width: int, region) -> dict:
    x0, y0, x1, y1 = region
    rows = [pixels[r * width + x0 : r * width + x1] for r in range(y0, y1)]
    return {
        "x0": x0, "y0": y0,
        "width": x1 - x0, "height": y1 - y0,
        "pixels": b"".join(rows),
    }


class BridgeService:
    def __init__(self, adapter, margin: float = DEFAULT_MARGIN):
        self.adapter = adapter
        self.margin = margin
        # Non-reentrant adapters get all stage calls serialized.
        self._lock = (
            threading.Lock() if not getattr(adapter, "reentrant", False) else None
        )

    def _call(self, fn, *args):
        if self._lock is None:
            return fn(*args)
        with self._lock:
            return fn(*args)

    def reply(self, message: dict) -> dict:
        if message["type"] == "ping":
            return {"type": "pong"}
        if message["type"] != "detect_request":
            return wire.error_reply(
                message.get("request_id", 0),
                "unexpected_message",
                f"cannot serve {message['type']!r}",
            )
        request_id = message["request_id"]
        try:
            return self._detect(message)
        except Exception as exc:
            return wire.error_reply(request_id, "backend_error", str(exc))

    def _detect(self, message: dict) -> dict:
        pixels, width, height = wire.decode_image(message)
        query = message["query"]

        t0 = time.perf_counter()
        proposals = self._call(
            self.adapter.propose,
            pixels, width, height, query["superset_class"], message["frame_index"],
        )
        propose_time = time.perf_counter() - t0

        detections = []
        verify_time = 0.0
        stage2_calls = 0
        for proposal in proposals:
            region = crop_region(width, height, proposal["box"], self.margin)
            if region is None:
                continue
            v0 = time.perf_counter()
            patch = extract_patch(pixels, width, region)
            verdict, justification = self._call(
                self.adapter.verify, patch, query, proposal.get("ref")
            )
            verify_time += time.perf_counter() - v0
            stage2_calls += 1
            if verdict:
                detections.append(
                    {
                        "box": proposal["box"],
                        "detector_score": proposal["detector_score"],
                        "verified": True,
                        "justification": justification,
                    }
                )
        return {
            "type": "detect_response",
            "request_id": message["request_id"],
            "detections": detections,
            "timings": {
                "t_f": propose_time + verify_time,
                "t_obj": (verify_time / stage2_calls) if stage2_calls else None,
                "propose_time": propose_time,
                "verify_time": verify_time,
                "stage2_calls": stage2_calls,
            },
        }


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        buf = bytearray()
        while True:
            try:
                message = wire.recv_message(self.request, buf)
            except wire.WireError as exc:
                self.request.sendall(
                    wire.encode(wire.error_reply(0, "bad_message", str(exc)))
                )
                continue
            if message is None:
                return
            self.request.sendall(wire.encode(self.server.service.reply(message)))


class BridgeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, port: int, service: BridgeService, host: str = "127.0.0.1"):
        self.service = service
        try:
            super().__init__((host, port), _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind port {port}: {exc}") from exc

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def bridge_serve(port: int, adapter, margin: float = DEFAULT_MARGIN,
                 host: str = "127.0.0.1") -> BridgeServer:
    """Bind and return a server; call serve_forever/serve_background on it."""
    return BridgeServer(port, BridgeService(adapter, margin), host=host)
