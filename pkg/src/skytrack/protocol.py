"""Wire format between front-end and back-end, plus the link simulator.

Framing: 4-byte big-endian unsigned payload length, then a UTF-8 JSON
payload with lexicographically sorted keys and no insignificant
whitespace. Encoding is canonical: equal messages produce equal bytes.
The schema is documented in PROTOCOL.md and frozen by golden fixtures
under fixtures/protocol/.
"""
from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .backend import BackendTimings
from .core import BBox, Detection, SemanticQuery, SkytrackError

MAX_PAYLOAD = 2**32 - 1


class ProtocolError(SkytrackError):
    pass


class PayloadTooLarge(ProtocolError):
    pass


class BadFrame(ProtocolError):
    """Length prefix inconsistent with available bytes."""


class BadPayload(ProtocolError):
    """Malformed JSON or schema violation."""


class UnknownVariant(ProtocolError):
    pass


@dataclass(frozen=True)
class Ping:
    pass


@dataclass(frozen=True)
class Pong:
    pass


@dataclass(frozen=True)
class DetectRequest:
    request_id: int
    query: SemanticQuery
    frame_index: int
    width: int
    height: int
    image: bytes = field(repr=False)

    def __post_init__(self):
        if not (0 <= self.request_id < 2**64):
            raise ValueError("request_id must fit in unsigned 64 bits")
        if len(self.image) != self.width * self.height:
            raise ValueError(
                f"image byte length {len(self.image)} != {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class DetectResponse:
    request_id: int
    detections: tuple[Detection, ...]
    timings: BackendTimings

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class ErrorReply:
    request_id: int
    code: str
    message: str


WireMessage = Union[Ping, Pong, DetectRequest, DetectResponse, ErrorReply]


def query_to_json(q: SemanticQuery) -> dict:
    return {
        "superset_class": q.superset_class,
        "predicate": dict(q.predicate),
        "description": q.description,
        "system_prompt": q.system_prompt,
    }


def query_from_json(obj: dict) -> SemanticQuery:
    return SemanticQuery(
        superset_class=_get(obj, "superset_class", str),
        predicate=_get(obj, "predicate", dict),
        description=_get(obj, "description", str),
        system_prompt=_get(obj, "system_prompt", str),
    )


def detection_to_json(d: Detection) -> dict:
    return {
        "box": [d.box.x, d.box.y, d.box.w, d.box.h],
        "detector_score": d.detector_score,
        "verified": d.verified,
        "justification": d.justification,
    }


def detection_from_json(obj: dict) -> Detection:
    box = _get(obj, "box", list)
    if len(box) != 4 or not all(isinstance(v, (int, float)) for v in box):
        raise BadPayload(f"bad box: {box!r}")
    return Detection(
        box=BBox(*[float(v) for v in box]),
        detector_score=float(_get(obj, "detector_score", (int, float))),
        verified=_get(obj, "verified", bool),
        justification=_get(obj, "justification", str),
    )


def timings_to_json(t: BackendTimings) -> dict:
    return {
        "t_f": t.t_f,
        "t_obj": t.t_obj,
        "propose_time": t.propose_time,
        "verify_time": t.verify_time,
        "stage2_calls": t.stage2_calls,
    }


def timings_from_json(obj: dict) -> BackendTimings:
    t_obj = obj.get("t_obj")
    return BackendTimings(
        t_f=float(_get(obj, "t_f", (int, float))),
        t_obj=None if t_obj is None else float(t_obj),
        propose_time=float(_get(obj, "propose_time", (int, float))),
        verify_time=float(_get(obj, "verify_time", (int, float))),
        stage2_calls=int(_get(obj, "stage2_calls", int)),
    )


def _get(obj: dict, key: str, types) -> object:
    if key not in obj:
        raise BadPayload(f"missing field {key!r}")
    v = obj[key]
    if types is int and isinstance(v, bool):
        raise BadPayload(f"field {key!r}: expected int, got bool")
    if not isinstance(v, types):
        raise BadPayload(f"field {key!r}: expected {types}, got {type(v).__name__}")
    return v


def _to_payload(msg: WireMessage) -> dict:
    if isinstance(msg, Ping):
        return {"type": "ping"}
    if isinstance(msg, Pong):
        return {"type": "pong"}
    if isinstance(msg, DetectRequest):
        return {
            "type": "detect_request",
            "request_id": msg.request_id,
            "query": query_to_json(msg.query),
            "frame_index": msg.frame_index,
            "width": msg.width,
            "height": msg.height,
            "image_b64": base64.b64encode(msg.image).decode("ascii"),
        }
    if isinstance(msg, DetectResponse):
        return {
            "type": "detect_response",
            "request_id": msg.request_id,
            "detections": [detection_to_json(d) for d in msg.detections],
            "timings": timings_to_json(msg.timings),
        }
    if isinstance(msg, ErrorReply):
        return {
            "type": "error",
            "request_id": msg.request_id,
            "code": msg.code,
            "message": msg.message,
        }
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def _from_payload(obj: dict) -> WireMessage:
    if not isinstance(obj, dict):
        raise BadPayload("payload root must be an object")
    variant = obj.get("type")
    if variant == "ping":
        return Ping()
    if variant == "pong":
        return Pong()
    if variant == "detect_request":
        width = _get(obj, "width", int)
        height = _get(obj, "height", int)
        try:
            image = base64.b64decode(_get(obj, "image_b64", str), validate=True)
        except Exception as exc:
            raise BadPayload(f"bad base64 image: {exc}") from exc
        if len(image) != width * height:
            raise BadPayload(
                f"image byte length {len(image)} != {width}x{height}"
            )
        try:
            query = query_from_json(_get(obj, "query", dict))
        except ValueError as exc:
            raise BadPayload(str(exc)) from exc
        return DetectRequest(
            request_id=_get(obj, "request_id", int),
            query=query,
            frame_index=_get(obj, "frame_index", int),
            width=width,
            height=height,
            image=image,
        )
    if variant == "detect_response":
        dets = _get(obj, "detections", list)
        return DetectResponse(
            request_id=_get(obj, "request_id", int),
            detections=tuple(detection_from_json(d) for d in dets),
            timings=timings_from_json(_get(obj, "timings", dict)),
        )
    if variant == "error":
        return ErrorReply(
            request_id=_get(obj, "request_id", int),
            code=_get(obj, "code", str),
            message=_get(obj, "message", str),
        )
    raise UnknownVariant(f"unknown message type {variant!r}")


def encode(msg: WireMessage) -> bytes:
    """Canonical framed encoding: length prefix + sorted-key compact JSON."""
    payload = json.dumps(
        _to_payload(msg),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(payload)} bytes exceeds 2^32-1")
    return struct.pack(">I", len(payload)) + payload


def decode(data: bytes) -> WireMessage:
    """Decode one complete framed message; inverse of :func:`encode`."""
    msg, rest = decode_prefix(data)
    if rest:
        raise BadFrame(f"{len(rest)} trailing bytes after message")
    return msg


def decode_prefix(data: bytes) -> tuple[WireMessage, bytes]:
    """Decode the first framed message, returning it and the remaining bytes."""
    if len(data) < 4:
        raise BadFrame("truncated length prefix")
    (n,) = struct.unpack(">I", data[:4])
    if len(data) < 4 + n:
        raise BadFrame(f"payload truncated: need {n} bytes, have {len(data) - 4}")
    try:
        obj = json.loads(data[4 : 4 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadPayload(f"malformed JSON payload: {exc}") from exc
    return _from_payload(obj), data[4 + n :]


def decode_stream(data: bytes) -> list[WireMessage]:
    """Decode a concatenation of framed messages, in order."""
    out = []
    while data:
        msg, data = decode_prefix(data)
        out.append(msg)
    return out


@dataclass(frozen=True)
class LinkModel:
    """Bandwidth-limited, fixed-latency link; 5 Mbps / 50 ms by default."""

    bandwidth: float = 5_000_000.0
    latency: float = 0.05
    symmetric: bool = True

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.latency < 0:
            raise ValueError("latency must be nonnegative")


def transmit(link: LinkModel, size: int, send_time: float) -> float:
    """Delivery time of a single message on an idle link."""
    if size <= 0:
        raise ValueError("size must be positive")
    return send_time + link.latency + size * 8.0 / link.bandwidth


class LinkChannel:
    """One direction of a link; serializes successive transmissions."""

    def __init__(self, link: LinkModel):
        self.link = link
        self._busy_until = 0.0

    def send(self, size: int, send_time: float) -> float:
        """Queue ``size`` bytes at ``send_time``; returns virtual delivery time."""
        if size <= 0:
            raise ValueError("size must be positive")
        start = max(send_time, self._busy_until)
        self._busy_until = start + size * 8.0 / self.link.bandwidth
        return self._busy_until + self.link.latency
