"""Mock adapter answering from a sidecar annotation file.

The sidecar uses the SARD-style JSON schema ({format_version, images:
[{image, persons: [{box, pose, shirt_color, injured}]}]}), indexed by the
request frame_index. Verdicts and detector scores follow the oracle
determinism contract in PROTOCOL.md, so responses are reproducible across
implementations: one proposal per annotated person (in annotation order)
with score 0.5 + 0.5*u01(seed, frame_index, instance_index, 1), verified
against the query predicate.
"""
from __future__ import annotations

import json
from pathlib import Path

from .adapters import load_prompt_template

_MASK64 = (1 << 64) - 1

#: poses under which an ``injured`` annotation counts as injured
INJURY_POSES = frozenset({"laying_down", "not_defined", "null", "seated"})

_SCORE_TAG = 1


def _mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def u01(*parts: int) -> float:
    """splitmix64 fold over integer stream coordinates -> uniform [0,1)."""
    h = 0
    for p in parts:
        h = _mix64((h ^ (p & _MASK64)) & _MASK64)
    return (h >> 11) / float(1 << 53)


def predicate_verdict(predicate: dict, person: dict) -> tuple[bool, str]:
    """Evaluate the query predicate against one annotation record."""
    matched, failed = [], []
    for key, want in predicate.items():
        if key == "pose":
            ok = person.get("pose") == want
        elif key == "shirt_color":
            ok = person.get("shirt_color") == want
        elif key == "injured":
            actually = bool(person.get("injured")) and person.get("pose") in INJURY_POSES
            ok = actually == bool(want)
        else:
            ok = False
        (matched if ok else failed).append(key)
    if failed:
        return False, f"candidate fails constraints: {', '.join(failed)}"
    detail = ", ".join(matched) if matched else "no constraints"
    return True, f"candidate matches the description ({detail})"


class BadSidecar(Exception):
    pass


class MockAdapter:
    name = "mock"
    reentrant = True

    def __init__(self, annotations: str | Path, seed: int = 0):
        self.seed = seed
        self.prompt = load_prompt_template(self.name)
        doc = json.loads(Path(annotations).read_text())
        if isinstance(doc, dict):
            images = doc.get("images")
        elif isinstance(doc, list):
            images = doc
        else:
            images = None
        if not isinstance(images, list):
            raise BadSidecar(f"{annotations}: expected an images list")
        self.images = images

    def propose(self, image, width, height, superset_class, frame_index):
        if not (0 <= frame_index < len(self.images)):
            raise BadSidecar(f"frame index {frame_index} outside annotation file")
        proposals = []
        for i, person in enumerate(self.images[frame_index].get("persons", [])):
            score = 0.5 + 0.5 * u01(self.seed, frame_index, i, _SCORE_TAG)
            proposals.append(
                {
                    "box": [float(v) for v in person["box"]],
                    "detector_score": score,
                    "ref": person,
                }
            )
        return proposals

    def verify(self, patch, query, ref):
        if ref is None:
            return False, "no matching ground-truth instance in the crop"
        return predicate_verdict(query.get("predicate", {}), ref)
