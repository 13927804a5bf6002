#!/usr/bin/env python3
"""Regenerate the golden wire-format fixtures under fixtures/protocol/.

Run only when the wire format intentionally changes; the checked-in bytes
are the compatibility contract for every other implementation.
"""
from pathlib import Path

import numpy as np

from skytrack.backend import BackendTimings
from skytrack.core import BBox, Detection, SemanticQuery
from skytrack.protocol import (
    DetectRequest,
    DetectResponse,
    ErrorReply,
    Ping,
    Pong,
    encode,
)

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "protocol"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(7)
    image = rng.integers(0, 256, size=16 * 12, dtype=np.uint8).tobytes()

    goldens = {
        "ping": Ping(),
        "pong": Pong(),
        "detect_request": DetectRequest(
            request_id=42,
            query=SemanticQuery(
                superset_class="person",
                predicate={"shirt_color": "gray", "injured": True},
                description="an injured person wearing a gray shirt",
                system_prompt="assist a search and rescue drone",
            ),
            frame_index=7,
            width=16,
            height=12,
            image=image,
        ),
        "detect_response": DetectResponse(
            request_id=42,
            detections=(
                Detection(
                    box=BBox(10.5, 20.25, 30.0, 40.0),
                    detector_score=0.875,
                    verified=True,
                    justification="candidate matches the description (shirt_color)",
                ),
                Detection(
                    box=BBox(1.0, 2.0, 3.0, 4.0),
                    detector_score=0.5,
                    verified=True,
                    justification="candidate matches the description (no constraints)",
                ),
            ),
            timings=BackendTimings(
                t_f=0.25, t_obj=0.1, propose_time=0.05, verify_time=0.2, stage2_calls=2
            ),
        ),
        "detect_response_empty": DetectResponse(
            request_id=43,
            detections=(),
            timings=BackendTimings(
                t_f=0.0625, t_obj=None, propose_time=0.0625, verify_time=0.0, stage2_calls=0
            ),
        ),
        "error": ErrorReply(request_id=44, code="backend_error", message="adapter failed"),
    }
    for name, msg in goldens.items():
        path = OUT / f"{name}.bin"
        path.write_bytes(encode(msg))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
