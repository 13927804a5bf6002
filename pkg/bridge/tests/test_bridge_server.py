import json
import socket
from pathlib import Path

import pytest

from mlbridge import wire
from mlbridge.mock import MockAdapter
from mlbridge.server import BridgeServer, BridgeService, BindFailure, bridge_serve

FIXTURES = Path(__file__).resolve().parents[2] / "fixtures" / "protocol"


def _sidecar(tmp_path, n_frames=8, persons_at=None):
    images = []
    for i in range(n_frames):
        images.append({"image": f"{i}.png", "persons": (persons_at or {}).get(i, [])})
    path = tmp_path / "annotations.json"
    path.write_text(json.dumps({"format_version": 1, "images": images}))
    return path


@pytest.fixture()
def golden_server(tmp_path):
    # Annotation at frame 7 matches the golden request predicate
    # (shirt_color=gray, injured=true); the second person does not.
    persons = [
        {"box": [2, 3, 5, 6], "pose": "laying_down", "shirt_color": "gray",
         "injured": True},
        {"box": [10, 2, 4, 7], "pose": "standing", "shirt_color": "blue",
         "injured": False},
    ]
    sidecar = _sidecar(tmp_path, n_frames=8, persons_at={7: persons})
    server = bridge_serve(0, MockAdapter(sidecar))
    server.serve_background()
    yield server
    server.shutdown()
    server.server_close()


def _exchange(port, raw):
    with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
        sock.sendall(raw)
        buf = bytearray()
        while len(buf) < 4:
            buf += sock.recv(65536)
        (n,) = (int.from_bytes(buf[:4], "big"),)
        while len(buf) < 4 + n:
            buf += sock.recv(65536)
        return bytes(buf)


def test_ping_pong_golden(golden_server):
    raw = _exchange(golden_server.port, (FIXTURES / "ping.bin").read_bytes())
    assert raw == (FIXTURES / "pong.bin").read_bytes()


def _zeroed_timings(response: dict) -> dict:
    out = dict(response)
    out["timings"] = {
        "t_f": 0.0, "t_obj": None, "propose_time": 0.0, "verify_time": 0.0,
        "stage2_calls": response["timings"]["stage2_calls"],
    }
    return out


def test_golden_request_payload_matches_primary_oracle(golden_server, tmp_path):
    """Cross-implementation interop on the frozen request fixture: the mock
    bridge and the primary oracle produce byte-equal payloads once measured
    wall-clock timing fields are normalized out."""
    from skytrack import protocol as sk_protocol
    from skytrack.server import OracleService, TruthSource

    request_raw = (FIXTURES / "detect_request.bin").read_bytes()
    bridge_raw = _exchange(golden_server.port, request_raw)
    bridge_response = _zeroed_timings(wire.decode(bridge_raw))

    persons = [
        {"box": [2, 3, 5, 6], "pose": "laying_down", "shirt_color": "gray",
         "injured": True},
        {"box": [10, 2, 4, 7], "pose": "standing", "shirt_color": "blue",
         "injured": False},
    ]
    sidecar = _sidecar(tmp_path, n_frames=8, persons_at={7: persons})
    primary = OracleService(TruthSource(sidecar))
    primary_msg = primary.reply(sk_protocol.decode(request_raw))
    primary_response = _zeroed_timings(
        json.loads(sk_protocol.encode(primary_msg)[4:].decode())
    )

    assert wire.encode(bridge_response) == wire.encode(primary_response)
    assert len(bridge_response["detections"]) == 1
    assert bridge_response["detections"][0]["box"] == [2.0, 3.0, 5.0, 6.0]


def test_adapter_exception_isolated_per_request(tmp_path):
    class FlakyAdapter:
        name = "flaky"
        reentrant = False

        def __init__(self):
            self.calls = 0

        def propose(self, image, width, height, superset_class, frame_index):
            self.calls += 1
            if self.calls == 1:
                raise RuntimeError("model exploded")
            return [{"box": [1.0, 1.0, 2.0, 2.0], "detector_score": 0.75, "ref": {}}]

        def verify(self, patch, query, ref):
            return True, "ok"

    server = bridge_serve(0, FlakyAdapter())
    server.serve_background()
    try:
        import base64

        request = wire.encode({
            "type": "detect_request", "request_id": 5, "frame_index": 0,
            "width": 4, "height": 4,
            "image_b64": base64.b64encode(b"\x00" * 16).decode(),
            "query": {"superset_class": "person", "predicate": {},
                      "description": "", "system_prompt": ""},
        })
        with socket.create_connection(("127.0.0.1", server.port), timeout=10) as sock:
            buf = bytearray()
            sock.sendall(request)
            first = wire.recv_message(sock, buf)
            sock.sendall(request)
            second = wire.recv_message(sock, buf)
        assert first["type"] == "error"
        assert first["code"] == "backend_error"
        assert first["request_id"] == 5
        assert second["type"] == "detect_response"
        assert len(second["detections"]) == 1
    finally:
        server.shutdown()
        server.server_close()


def test_unexpected_message_gets_error_reply(golden_server):
    raw = _exchange(golden_server.port, wire.encode({"type": "pong"}))
    reply = wire.decode(raw)
    assert reply["type"] == "error"
    assert reply["code"] == "unexpected_message"


def test_bind_failure():
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    try:
        with pytest.raises(BindFailure):
            BridgeServer(blocker.getsockname()[1], BridgeService(adapter=None))
    finally:
        blocker.close()


def test_concurrent_connections(golden_server):
    import threading

    ping = (FIXTURES / "ping.bin").read_bytes()
    pong = (FIXTURES / "pong.bin").read_bytes()
    results = [None] * 8

    def worker(i):
        results[i] = _exchange(golden_server.port, ping)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == pong for r in results)
