"""TCP back-end service speaking the length-prefixed wire protocol.

Oracle mode answers detection requests from an annotation source (a
tracking-sequence directory or a SARD-style JSON file), keyed by the
request's frame index. Proxy mode forwards raw frames to an upstream
back-end (e.g. the ml-bridge) unchanged.
"""
from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence as Seq

import numpy as np

from . import protocol
from .backend import OracleNoise, PersonAttrs, attrs_satisfying, detect
from .core import DEFAULT_CROP_MARGIN, Frame, SkytrackError
from .datasets import Sequence, load_sard_annotations, load_sequence
from .protocol import DetectRequest, DetectResponse, ErrorReply, Ping, Pong


class BindFailure(SkytrackError):
    pass


class BadAnnotations(SkytrackError):
    pass


class TruthSource:
    """Maps a request frame index to ground-truth person instances."""

    def __init__(self, path):
        path = Path(path)
        self._sequence: Optional[Sequence] = None
        self._images = None
        if path.is_dir():
            self._sequence = load_sequence(path)
            self._proto = attrs_satisfying(self._sequence.query.predicate)
        elif path.is_file():
            self._images = load_sard_annotations(path)
        else:
            raise BadAnnotations(f"{path}: not a sequence directory or annotation file")

    def persons_for(self, frame_index: int) -> list[PersonAttrs]:
        if self._sequence is not None:
            if not (0 <= frame_index < len(self._sequence)):
                raise BadAnnotations(f"frame index {frame_index} outside sequence")
            gt = self._sequence.ground_truth[frame_index]
            return [] if gt is None else [replace(self._proto, box=gt)]
        if not (0 <= frame_index < len(self._images)):
            raise BadAnnotations(f"frame index {frame_index} outside annotation file")
        return list(self._images[frame_index].persons)


def recv_framed(sock: socket.socket, buf: bytearray) -> Optional[bytes]:
    """Read one complete framed message from a socket; None on clean EOF."""
    while len(buf) < 4:
        chunk = sock.recv(65536)
        if not chunk:
            return None
        buf += chunk
    (n,) = struct.unpack(">I", bytes(buf[:4]))
    while len(buf) < 4 + n:
        chunk = sock.recv(65536)
        if not chunk:
            return None
        buf += chunk
    raw = bytes(buf[: 4 + n])
    del buf[: 4 + n]
    return raw


class OracleHandler(socketserver.BaseRequestHandler):
    def handle(self):
        buf = bytearray()
        while True:
            raw = recv_framed(self.request, buf)
            if raw is None:
                return
            try:
                msg = protocol.decode(raw)
            except protocol.ProtocolError as exc:
                reply = ErrorReply(request_id=0, code="bad_message", message=str(exc))
                self.request.sendall(protocol.encode(reply))
                continue
            self.request.sendall(protocol.encode(self.server.service.reply(msg)))


class OracleService:
    def __init__(
        self,
        truth: TruthSource,
        noise: OracleNoise = OracleNoise(),
        margin: float = DEFAULT_CROP_MARGIN,
    ):
        self.truth = truth
        self.noise = noise
        self.margin = margin

    def reply(self, msg) -> protocol.WireMessage:
        if isinstance(msg, Ping):
            return Pong()
        if not isinstance(msg, DetectRequest):
            return ErrorReply(
                request_id=getattr(msg, "request_id", 0),
                code="unexpected_message",
                message=f"cannot serve {type(msg).__name__}",
            )
        try:
            pixels = np.frombuffer(msg.image, dtype=np.uint8).reshape(
                msg.height, msg.width
            )
            frame = Frame(
                index=msg.frame_index,
                timestamp=0.0,
                width=msg.width,
                height=msg.height,
                pixels=pixels,
            )
            persons = self.truth.persons_for(msg.frame_index)
            detections, timings = detect(
                frame, msg.query, persons, self.noise, margin=self.margin
            )
            return DetectResponse(
                request_id=msg.request_id,
                detections=tuple(detections),
                timings=timings,
            )
        except Exception as exc:
            return ErrorReply(
                request_id=msg.request_id, code="backend_error", message=str(exc)
            )


class ProxyService:
    """Forwards every request to an upstream back-end over one connection."""

    def __init__(self, upstream_host: str, upstream_port: int):
        self.sock = socket.create_connection((upstream_host, upstream_port))
        self._buf = bytearray()
        self._lock = threading.Lock()

    def reply(self, msg) -> protocol.WireMessage:
        with self._lock:
            self.sock.sendall(protocol.encode(msg))
            raw = recv_framed(self.sock, self._buf)
        if raw is None:
            return ErrorReply(
                request_id=getattr(msg, "request_id", 0),
                code="upstream_closed",
                message="upstream back-end closed the connection",
            )
        return protocol.decode(raw)


class BackendServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, port: int, service, host: str = "127.0.0.1"):
        self.service = service
        try:
            super().__init__((host, port), OracleHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind port {port}: {exc}") from exc

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread
