"""Front-end mission loop: search via the back-end, track locally, monitor
confidence against t_c, and re-initialize via L1 candidate selection.

Time is virtual: frames arrive at their sequence timestamps, link transfers
follow the LinkModel, and a pending back-end exchange is observed at the
first frame whose timestamp is past its delivery time. The local tracker
keeps stepping while an exchange is in flight. Per-frame compute is either
measured wall-clock (honest FPS numbers) or a fixed charge (bit-reproducible
logs), selected by ``MissionConfig.step_cost``.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence as Seq

from . import protocol
from .backend import BackendTimings, OracleNoise, attrs_satisfying, detect
from .core import BBox, DEFAULT_CROP_MARGIN, Detection, SemanticQuery, SkytrackError
from .datasets import Sequence
from .protocol import (
    DetectRequest,
    DetectResponse,
    ErrorReply,
    LinkChannel,
    LinkModel,
    WireMessage,
)
from .trackers import (
    MosseParams,
    TrackerKind,
    tracker_init,
    tracker_is_score_enabled,
    tracker_step,
)


class EmptyCandidates(SkytrackError):
    pass


class MissionAbort(SkytrackError):
    """Unrecoverable protocol failure during a mission."""


class Phase(str, Enum):
    SEARCHING = "Searching"
    TRACKING = "Tracking"
    REINIT = "Reinit"


@dataclass(frozen=True)
class ReinitPolicy:
    t_c: float = 0.7
    enabled: bool = True

    def __post_init__(self):
        if not (0.0 <= self.t_c <= 1.0):
            raise ValueError(f"t_c out of [0,1]: {self.t_c}")


@dataclass
class MissionConfig:
    tracker: TrackerKind = TrackerKind.MOSSE
    tracker_params: Optional[MosseParams] = None
    policy: ReinitPolicy = field(default_factory=ReinitPolicy)
    link: LinkModel = field(default_factory=LinkModel)
    noise: OracleNoise = field(default_factory=OracleNoise)
    margin: float = DEFAULT_CROP_MARGIN
    # Fixed virtual seconds charged per tracker step; None measures wall time.
    # Fixed mode also zeroes back-end compute in the timeline, making the
    # whole mission log bit-reproducible.
    step_cost: Optional[float] = None

    def __post_init__(self):
        self.tracker = TrackerKind(self.tracker)
        if self.policy.enabled and not tracker_is_score_enabled(self.tracker):
            self.policy = ReinitPolicy(t_c=self.policy.t_c, enabled=False)


@dataclass
class FrameRecord:
    index: int
    phase: Phase
    box: Optional[BBox]
    confidence: Optional[float]
    t_b: Optional[float] = None
    edge_step_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "phase": self.phase.value,
            "box": list(self.box.as_tuple()) if self.box else None,
            "confidence": self.confidence,
            "t_b": self.t_b,
            "edge_step_time": self.edge_step_time,
        }


@dataclass
class MissionLog:
    records: list[FrameRecord] = field(default_factory=list)
    frames_total: int = 0
    backend_calls: int = 0
    reacquisitions: int = 0
    mission_elapsed: float = 0.0
    edge_compute_total: float = 0.0
    steps_total: int = 0

    def to_json(self) -> dict:
        return {
            "records": [r.to_json() for r in self.records],
            "summary": {
                "frames_total": self.frames_total,
                "backend_calls": self.backend_calls,
                "reacquisitions": self.reacquisitions,
                "mission_elapsed": self.mission_elapsed,
                "edge_compute_total": self.edge_compute_total,
                "steps_total": self.steps_total,
            },
        }

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @staticmethod
    def from_json(obj: dict) -> "MissionLog":
        records = [
            FrameRecord(
                index=r["index"],
                phase=Phase(r["phase"]),
                box=BBox(*r["box"]) if r["box"] else None,
                confidence=r["confidence"],
                t_b=r["t_b"],
                edge_step_time=r["edge_step_time"],
            )
            for r in obj["records"]
        ]
        s = obj["summary"]
        return MissionLog(records=records, **{k: s[k] for k in (
            "frames_total", "backend_calls", "reacquisitions",
            "mission_elapsed", "edge_compute_total", "steps_total")})


def select_reinit_candidate(prev: BBox, candidates: Seq[Detection]) -> Detection:
    """argmin of the L1 box cost against ``prev``; ties keep arrival order."""
    if not candidates:
        raise EmptyCandidates("no candidates to select from")
    from .core import c_box

    best = candidates[0]
    best_cost = c_box(prev, best.box)
    for cand in candidates[1:]:
        cost = c_box(prev, cand.box)
        if cost < best_cost:
            best, best_cost = cand, cost
    return best


def should_reinit(confidence: float, policy: ReinitPolicy) -> bool:
    """Strict-less comparison: fire when confidence drops below t_c."""
    return policy.enabled and confidence < policy.t_c


class BackendClient(Protocol):
    def exchange(self, request: DetectRequest) -> tuple[WireMessage, int, float]:
        """Process one request; returns (response, response byte size,
        back-end compute seconds to charge on the virtual timeline)."""


class SequenceOracleClient:
    """In-process oracle answering from the sequence's own ground truth."""

    def __init__(self, sequence: Sequence, noise: OracleNoise = OracleNoise(),
                 margin: float = DEFAULT_CROP_MARGIN):
        self.sequence = sequence
        self.noise = noise
        self.margin = margin
        self._attrs_proto = attrs_satisfying(sequence.query.predicate)

    def truth_for(self, frame_index: int):
        gt = self.sequence.ground_truth[frame_index]
        if gt is None:
            return []
        from dataclasses import replace

        return [replace(self._attrs_proto, box=gt)]

    def exchange(self, request: DetectRequest) -> tuple[WireMessage, int, float]:
        frame = self.sequence.frame(request.frame_index)
        detections, timings = detect(
            frame,
            request.query,
            self.truth_for(request.frame_index),
            self.noise,
            margin=self.margin,
        )
        response = DetectResponse(
            request_id=request.request_id,
            detections=tuple(detections),
            timings=timings,
        )
        return response, len(protocol.encode(response)), timings.t_f


class TcpBackendClient:
    """Blocking socket client; virtual link timing still applies to sizes."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        import socket

        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._buf = b""

    def close(self) -> None:
        self.sock.close()

    def _recv_message(self) -> WireMessage:
        import struct

        while len(self._buf) < 4:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise MissionAbort("connection closed mid-frame")
            self._buf += chunk
        (n,) = struct.unpack(">I", self._buf[:4])
        while len(self._buf) < 4 + n:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise MissionAbort("connection closed mid-payload")
            self._buf += chunk
        raw, self._buf = self._buf[: 4 + n], self._buf[4 + n :]
        try:
            return protocol.decode(raw)
        except protocol.ProtocolError as exc:
            raise MissionAbort(f"undecodable back-end reply: {exc}") from exc

    def exchange(self, request: DetectRequest) -> tuple[WireMessage, int, float]:
        raw = protocol.encode(request)
        self.sock.sendall(raw)
        response = self._recv_message()
        size = len(protocol.encode(response))
        charge = response.timings.t_f if isinstance(response, DetectResponse) else 0.0
        return response, size, charge


@dataclass
class _Pending:
    send_time: float
    delivery_time: float
    response: WireMessage


def run_mission(
    sequence: Sequence,
    config: MissionConfig,
    client: Optional[BackendClient] = None,
) -> MissionLog:
    """Run the full search/track/re-init state machine over a sequence."""
    if client is None:
        client = SequenceOracleClient(sequence, config.noise, config.margin)

    uplink = LinkChannel(config.link)
    downlink = LinkChannel(config.link)
    log = MissionLog()
    state = None
    last_box: Optional[BBox] = None
    pending: Optional[_Pending] = None
    request_id = 0
    deterministic = config.step_cost is not None

    def send_request(frame, t: float) -> None:
        nonlocal pending, request_id
        request_id += 1
        request = DetectRequest(
            request_id=request_id,
            query=sequence.query,
            frame_index=frame.index,
            width=frame.width,
            height=frame.height,
            image=frame.bytes(),
        )
        raw = protocol.encode(request)
        up_done = uplink.send(len(raw), t)
        response, resp_size, charge = client.exchange(request)
        if deterministic:
            # Measured back-end wall time leaks into both the compute charge
            # and the response byte size (float repr length); normalize both.
            charge = 0.0
            if isinstance(response, DetectResponse):
                from dataclasses import replace as _replace

                stripped = _replace(
                    response,
                    timings=BackendTimings(
                        t_f=0.0,
                        t_obj=None,
                        propose_time=0.0,
                        verify_time=0.0,
                        stage2_calls=response.timings.stage2_calls,
                    ),
                )
                resp_size = len(protocol.encode(stripped))
        delivery = downlink.send(resp_size, up_done + charge)
        pending = _Pending(send_time=t, delivery_time=delivery, response=response)
        log.backend_calls += 1

    n = len(sequence)
    for i in range(n):
        frame = sequence.frame(i)
        t = frame.timestamp
        t_b = None
        inited = False

        if pending is not None and pending.delivery_time <= t:
            response = pending.response
            t_b = pending.delivery_time - pending.send_time
            pending = None
            if isinstance(response, DetectResponse) and response.detections:
                prev = state.box if state is not None else last_box
                if prev is not None:
                    chosen = select_reinit_candidate(prev, response.detections)
                else:
                    chosen = max(response.detections, key=lambda d: d.detector_score)
                c0 = time.perf_counter()
                state = tracker_init(
                    config.tracker, frame, chosen.box, config.tracker_params
                )
                step_time = config.step_cost if deterministic else time.perf_counter() - c0
                log.reacquisitions += 1
                inited = True
                record = FrameRecord(
                    index=i,
                    phase=Phase.TRACKING,
                    box=chosen.box,
                    confidence=1.0,
                    t_b=t_b,
                    edge_step_time=step_time,
                )
                log.edge_compute_total += step_time
                log.steps_total += 1
                last_box = chosen.box
            else:
                # Empty response or ErrorReply: back to searching.
                state = None

        if not inited:
            if state is not None:
                c0 = time.perf_counter()
                box, conf = tracker_step(state, frame)
                step_time = config.step_cost if deterministic else time.perf_counter() - c0
                last_box = box
                if pending is None and should_reinit(conf, config.policy):
                    send_request(frame, t)
                phase = Phase.REINIT if pending is not None else Phase.TRACKING
                record = FrameRecord(
                    index=i,
                    phase=phase,
                    box=box,
                    confidence=conf,
                    t_b=t_b,
                    edge_step_time=step_time,
                )
                log.edge_compute_total += step_time
                log.steps_total += 1
            else:
                if pending is None:
                    send_request(frame, t)
                record = FrameRecord(
                    index=i, phase=Phase.SEARCHING, box=None, confidence=None, t_b=t_b
                )

        log.records.append(record)

    log.frames_total = n
    if n:
        frame_period = 1.0 / sequence.fps
        span = (n - 1) * frame_period + frame_period
        log.mission_elapsed = max(span, log.edge_compute_total)
    # First acquisition is not a re-acquisition.
    if log.reacquisitions > 0:
        log.reacquisitions -= 1
    return log
