"""Independent implementation of the length-prefixed JSON wire format.

Framing: 4-byte big-endian unsigned payload length, then canonical UTF-8
JSON (keys sorted at every level, compact separators, no ASCII escaping,
no NaN/Infinity). Messages are handled as plain dicts carrying a ``type``
discriminator; see PROTOCOL.md at the repository root and the golden
fixtures under fixtures/protocol/ for the compatibility contract.

This module deliberately shares no code with the skytrack package.
"""
from __future__ import annotations

import base64
import json
import struct

MAX_PAYLOAD = 2**32 - 1

MESSAGE_TYPES = ("ping", "pong", "detect_request", "detect_response", "error")


class WireError(Exception):
    pass


class BadFrame(WireError):
    """Length prefix inconsistent with the available bytes."""


class BadPayload(WireError):
    """Malformed JSON or schema violation."""


def encode(message: dict) -> bytes:
    """Frame a message dict as canonical length-prefixed JSON."""
    if message.get("type") not in MESSAGE_TYPES:
        raise BadPayload(f"unknown message type: {message.get('type')!r}")
    payload = json.dumps(
        message,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise BadPayload(f"payload of {len(payload)} bytes exceeds the frame limit")
    return struct.pack(">I", len(payload)) + payload


def decode(raw: bytes) -> dict:
    """Decode exactly one framed message; trailing bytes are an error."""
    message, used = decode_prefix(raw)
    if used != len(raw):
        raise BadFrame(f"{len(raw) - used} trailing bytes after the frame")
    return message


def decode_prefix(raw: bytes) -> tuple[dict, int]:
    """Decode the first framed message in ``raw``; returns (message, bytes used)."""
    if len(raw) < 4:
        raise BadFrame(f"need 4 length bytes, have {len(raw)}")
    (n,) = struct.unpack(">I", raw[:4])
    if len(raw) < 4 + n:
        raise BadFrame(f"frame declares {n} payload bytes, have {len(raw) - 4}")
    try:
        message = json.loads(raw[4 : 4 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadPayload(str(exc)) from exc
    if not isinstance(message, dict):
        raise BadPayload(f"payload is {type(message).__name__}, expected object")
    if message.get("type") not in MESSAGE_TYPES:
        raise BadPayload(f"unknown message type: {message.get('type')!r}")
    return message, 4 + n


def recv_message(sock, buf: bytearray) -> dict | None:
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
    return decode(raw)


def decode_image(message: dict) -> tuple[bytes, int, int]:
    """Pull the grayscale buffer out of a detect_request; validates length."""
    width, height = message["width"], message["height"]
    pixels = base64.b64decode(message["image_b64"])
    if len(pixels) != width * height:
        raise BadPayload(
            f"image has {len(pixels)} bytes for {width}x{height} frame"
        )
    return pixels, width, height


def error_reply(request_id: int, code: str, text: str) -> dict:
    return {"type": "error", "request_id": request_id, "code": code, "message": text}
