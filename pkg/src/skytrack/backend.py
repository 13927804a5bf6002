"""Two-stage detection service: superset-class proposal, then semantic verification.

The stand-in for the real detector + VLM stack is a ground-truth oracle
with configurable noise channels (misses, spurious boxes, corner jitter,
verdict flips). All oracle randomness is derived from (seed, frame index)
so concurrent requests stay deterministic and a second implementation of
the wire protocol can reproduce responses byte for byte (see PROTOCOL.md).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    BBox,
    DEFAULT_CROP_MARGIN,
    Detection,
    Frame,
    INJURY_CANDIDATE_POSES,
    ImagePatch,
    NoOverlap,
    POSES,
    SemanticQuery,
    crop_with_margin,
)

_MASK64 = (1 << 64) - 1
_TAG_SCORE = 1
_TAG_SPURIOUS_SCORE = 2
_TAG_FLIP = 3

_DEFAULT_SPURIOUS_SIZE = (24.0, 48.0)


def _mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def hash_u01(*parts: int) -> float:
    """Deterministic uniform [0,1) from integer stream coordinates.

    splitmix64 fold; part of the oracle's public contract so external
    back-end implementations can reproduce oracle responses exactly.
    """
    h = 0
    for p in parts:
        h = _mix64((h ^ (p & _MASK64)) & _MASK64)
    return (h >> 11) / float(1 << 53)


@dataclass(frozen=True)
class PersonAttrs:
    """Ground-truth attributes of one person instance."""

    box: BBox
    pose: str = "standing"
    shirt_color: str = "gray"
    injured: bool = False

    def __post_init__(self):
        if self.pose not in POSES:
            raise ValueError(f"unknown pose {self.pose!r}")


@dataclass(frozen=True)
class OracleNoise:
    """Noise channels of the oracle detector; all zero means exact."""

    miss_rate: float = 0.0
    spurious_rate: float = 0.0
    jitter_sigma: float = 0.0
    verify_flip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("miss_rate", "verify_flip_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} out of [0,1]: {v}")
        if self.spurious_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("spurious_rate and jitter_sigma must be nonnegative")


@dataclass
class BackendTimings:
    """Per-request processing times, seconds."""

    t_f: float = 0.0
    t_obj: Optional[float] = None
    propose_time: float = 0.0
    verify_time: float = 0.0
    stage2_calls: int = 0


def predicate_match(predicate: dict, attrs: PersonAttrs) -> tuple[bool, list[str], list[str]]:
    """Evaluate the attribute predicate; returns (match, matched, failed) keys.

    The injured predicate follows the annotation rule: a person counts as
    injured only if flagged injured AND in one of the injury-candidate poses.
    """
    matched, failed = [], []
    for key, want in predicate.items():
        if key == "pose":
            ok = attrs.pose == want
        elif key == "shirt_color":
            ok = attrs.shirt_color == want
        elif key == "injured":
            actually = attrs.injured and attrs.pose in INJURY_CANDIDATE_POSES
            ok = actually == bool(want)
        else:
            ok = False
        (matched if ok else failed).append(key)
    return not failed, matched, failed


def attrs_satisfying(predicate: dict) -> PersonAttrs:
    """Construct a canonical PersonAttrs satisfying ``predicate``.

    Used to give synthetic sequence targets attributes consistent with
    their own query.
    """
    pose = predicate.get("pose", "standing")
    injured = bool(predicate.get("injured", False))
    if injured and pose not in INJURY_CANDIDATE_POSES:
        pose = "laying_down"
    return PersonAttrs(
        box=BBox(0, 0, 1, 1),
        pose=pose,
        shirt_color=predicate.get("shirt_color", "gray"),
        injured=injured,
    )


def _request_rng(noise: OracleNoise, frame_index: int) -> np.random.Generator:
    return np.random.default_rng([noise.seed & _MASK64, frame_index])


def _propose_with_attrs(
    frame: Frame,
    superset_class: str,
    truth: Sequence[PersonAttrs],
    noise: OracleNoise,
) -> list[tuple[Detection, Optional[PersonAttrs]]]:
    rng = _request_rng(noise, frame.index)
    out: list[tuple[Detection, Optional[PersonAttrs]]] = []
    for i, person in enumerate(truth):
        if noise.miss_rate > 0 and rng.random() < noise.miss_rate:
            continue
        box = person.box
        if noise.jitter_sigma > 0:
            dx0, dy0, dx1, dy1 = rng.normal(0.0, noise.jitter_sigma, size=4)
            x0 = box.x + dx0
            y0 = box.y + dy0
            x1 = box.x2 + dx1
            y1 = box.y2 + dy1
            box = BBox(x0, y0, max(1.0, x1 - x0), max(1.0, y1 - y0))
        score = 0.5 + 0.5 * hash_u01(noise.seed, frame.index, i, _TAG_SCORE)
        out.append((Detection(box=box, detector_score=score), person))

    if noise.spurious_rate > 0:
        n_spurious = rng.poisson(noise.spurious_rate)
        sizes = [(p.box.w, p.box.h) for p in truth] or [_DEFAULT_SPURIOUS_SIZE]
        for j in range(n_spurious):
            w, h = sizes[rng.integers(len(sizes))]
            w = min(w, frame.width - 1)
            h = min(h, frame.height - 1)
            x = rng.uniform(0, frame.width - w)
            y = rng.uniform(0, frame.height - h)
            score = 0.5 * hash_u01(noise.seed, frame.index, j, _TAG_SPURIOUS_SCORE)
            out.append((Detection(box=BBox(x, y, w, h), detector_score=score), None))
    return out


def propose(
    frame: Frame,
    superset_class: str,
    truth: Sequence[PersonAttrs],
    noise: OracleNoise = OracleNoise(),
) -> list[Detection]:
    """Stage 1: one unverified Detection per non-missed truth instance,
    plus Poisson-many spurious boxes."""
    return [d for d, _ in _propose_with_attrs(frame, superset_class, truth, noise)]


def verify(
    patch: ImagePatch,
    query: SemanticQuery,
    attrs: Optional[PersonAttrs],
    noise: OracleNoise = OracleNoise(),
) -> tuple[bool, str]:
    """Stage 2: accept or reject the cropped candidate against the predicate."""
    if attrs is None:
        verdict = False
        justification = "no matching ground-truth instance in the crop"
    else:
        verdict, matched, failed = predicate_match(query.predicate, attrs)
        if verdict:
            detail = ", ".join(matched) if matched else "no constraints"
            justification = f"candidate matches the description ({detail})"
        else:
            justification = f"candidate fails constraints: {', '.join(failed)}"
    if noise.verify_flip_rate > 0:
        u = hash_u01(
            noise.seed,
            patch.source_frame,
            int(patch.region.x),
            int(patch.region.y),
            _TAG_FLIP,
        )
        if u < noise.verify_flip_rate:
            verdict = not verdict
            justification += " [verdict flipped by noise channel]"
    return verdict, justification


def detect(
    frame: Frame,
    query: SemanticQuery,
    truth: Sequence[PersonAttrs],
    noise: OracleNoise = OracleNoise(),
    margin: float = DEFAULT_CROP_MARGIN,
    simulated_stage1_cost: float = 0.0,
    simulated_stage2_cost: float = 0.0,
) -> tuple[list[Detection], BackendTimings]:
    """Full two-stage request: propose, crop with margin, verify each proposal.

    Only verified detections are returned. ``simulated_stage*_cost`` charge
    virtual per-call processing time on top of measured wall time, modelling
    a heavier detector/VLM than the oracle itself.
    """
    t0 = time.perf_counter()
    pairs = _propose_with_attrs(frame, query.superset_class, truth, noise)
    propose_time = time.perf_counter() - t0 + simulated_stage1_cost

    verified: list[Detection] = []
    verify_time = 0.0
    stage2_calls = 0
    for det, attrs in pairs:
        v0 = time.perf_counter()
        try:
            patch = crop_with_margin(frame, det.box, margin)
        except NoOverlap:
            continue
        ok, justification = verify(patch, query, attrs, noise)
        verify_time += time.perf_counter() - v0 + simulated_stage2_cost
        stage2_calls += 1
        if ok:
            verified.append(
                Detection(
                    box=det.box,
                    detector_score=det.detector_score,
                    verified=True,
                    justification=justification,
                )
            )
    timings = BackendTimings(
        t_f=propose_time + verify_time,
        t_obj=(verify_time / stage2_calls) if stage2_calls else None,
        propose_time=propose_time,
        verify_time=verify_time,
        stage2_calls=stage2_calls,
    )
    return verified, timings
