"""Annotation file formats, loaders, and the synthetic fixture generator.

Two public formats:

* Referring tracking sequences: a directory with ``frames/`` (zero-padded
  numbered images), ``groundtruth.txt`` (one ``x,y,w,h`` or ``absent`` line
  per frame) and ``query.txt`` (``# key: value`` header comments, then
  superset class, predicate line, free-text description).
* Attribute-annotated detection images: a JSON file with a
  ``format_version`` root field and ``images: [{image, persons: [...]}]``.

Both are plain text so annotation scripts can write them directly.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence as Seq

import numpy as np
from PIL import Image

from .backend import PersonAttrs
from .core import (
    BBox,
    Frame,
    INJURY_CANDIDATE_POSES,
    POSES,
    SemanticQuery,
    SkytrackError,
    to_grayscale,
)

FORMAT_VERSION = 1
DEFAULT_FPS = 10.0


class DatasetError(SkytrackError):
    pass


class MissingFile(DatasetError):
    pass


class LineCountMismatch(DatasetError):
    pass


class MalformedBox(DatasetError):
    pass


class SchemaViolation(DatasetError):
    pass


class SpecOutOfBounds(DatasetError):
    pass


@dataclass
class Sequence:
    """A tracking sequence; frames decode lazily and cache per sequence."""

    name: str
    frame_paths: list[Path]
    ground_truth: list[Optional[BBox]]
    query: SemanticQuery
    fps: float = DEFAULT_FPS
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.frame_paths)

    def frame(self, i: int) -> Frame:
        if i not in self._cache:
            img = np.asarray(Image.open(self.frame_paths[i]).convert("RGB"))
            gray = to_grayscale(img)
            self._cache[i] = Frame(
                index=i,
                timestamp=i / self.fps,
                width=gray.shape[1],
                height=gray.shape[0],
                pixels=gray,
            )
        return self._cache[i]


@dataclass(frozen=True)
class SardImage:
    image: str
    persons: tuple[PersonAttrs, ...]

    def __post_init__(self):
        object.__setattr__(self, "persons", tuple(self.persons))


@dataclass(frozen=True)
class TaskSpec:
    """One detection objective: the query sent to the back-end and the
    predicate deciding which annotated persons count as positives."""

    task_id: str
    query: SemanticQuery
    gt_predicate: dict


def parse_predicate(text: str) -> dict:
    """Parse ``key=value,key=value`` (or ``none``) into a predicate dict."""
    text = text.strip()
    if not text or text == "none":
        return {}
    pred: dict = {}
    for part in text.split(","):
        if "=" not in part:
            raise SchemaViolation(f"malformed predicate clause {part.strip()!r}")
        key, value = (s.strip() for s in part.split("=", 1))
        if key == "injured":
            if value not in ("true", "false"):
                raise SchemaViolation(f"injured must be true/false, got {value!r}")
            pred[key] = value == "true"
        else:
            pred[key] = value
    return pred


def format_predicate(pred: dict) -> str:
    if not pred:
        return "none"
    parts = []
    for key in sorted(pred):
        v = pred[key]
        parts.append(f"{key}={str(v).lower() if isinstance(v, bool) else v}")
    return ",".join(parts)


def _read_query_file(path: Path) -> tuple[SemanticQuery, dict]:
    meta: dict = {}
    lines = []
    for raw in path.read_text().splitlines():
        if raw.startswith("#"):
            body = raw.lstrip("#").strip()
            if ":" in body:
                k, v = (s.strip() for s in body.split(":", 1))
                meta[k] = v
            continue
        lines.append(raw)
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) < 2:
        raise SchemaViolation(f"{path}: need superset class and predicate lines")
    query = SemanticQuery(
        superset_class=lines[0].strip(),
        predicate=parse_predicate(lines[1]),
        description="\n".join(lines[2:]).strip(),
    )
    return query, meta


def load_sequence(directory) -> Sequence:
    """Load a tracking sequence from its directory."""
    directory = Path(directory)
    frames_dir = directory / "frames"
    gt_path = directory / "groundtruth.txt"
    query_path = directory / "query.txt"
    for p in (frames_dir, gt_path, query_path):
        if not p.exists():
            raise MissingFile(str(p))

    frame_paths = sorted(
        p for p in frames_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".pgm", ".bmp")
    )
    if not frame_paths:
        raise MissingFile(f"{frames_dir}: no image files")

    ground_truth: list[Optional[BBox]] = []
    gt_lines = gt_path.read_text().splitlines()
    for lineno, line in enumerate(gt_lines, start=1):
        line = line.strip()
        if not line:
            continue
        if line == "absent":
            ground_truth.append(None)
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise MalformedBox(f"{gt_path}:{lineno}: expected x,y,w,h or 'absent'")
        try:
            x, y, w, h = (float(v) for v in parts)
            ground_truth.append(BBox(x, y, w, h))
        except ValueError as exc:
            raise MalformedBox(f"{gt_path}:{lineno}: {exc}") from exc

    if len(ground_truth) != len(frame_paths):
        raise LineCountMismatch(
            f"{gt_path}: {len(ground_truth)} ground-truth lines for {len(frame_paths)} frames"
        )
    if not any(b is not None for b in ground_truth):
        raise SchemaViolation(f"{gt_path}: sequence has no ground-truth box at all")

    query, meta = _read_query_file(query_path)
    fps = float(meta.get("fps", DEFAULT_FPS))
    return Sequence(
        name=directory.name,
        frame_paths=frame_paths,
        ground_truth=ground_truth,
        query=query,
        fps=fps,
    )


def _person_from_json(obj: dict, where: str, strict: bool) -> PersonAttrs:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{where}: person must be an object")
    box = obj.get("box")
    if not (isinstance(box, list) and len(box) == 4):
        raise SchemaViolation(f"{where}.box: expected [x,y,w,h]")
    pose = obj.get("pose")
    if pose not in POSES:
        raise SchemaViolation(f"{where}.pose: unknown pose {pose!r}")
    shirt = obj.get("shirt_color")
    if not isinstance(shirt, str) or not shirt:
        raise SchemaViolation(f"{where}.shirt_color: expected nonempty string")
    injured = obj.get("injured")
    if not isinstance(injured, bool):
        raise SchemaViolation(f"{where}.injured: expected boolean")
    if injured and pose not in INJURY_CANDIDATE_POSES:
        msg = f"{where}: injured=true but pose {pose!r} is not an injury-candidate pose"
        if strict:
            raise SchemaViolation(msg)
        warnings.warn(msg)
    try:
        bbox = BBox(*[float(v) for v in box])
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"{where}.box: {exc}") from exc
    return PersonAttrs(box=bbox, pose=pose, shirt_color=shirt, injured=injured)


def load_sard_annotations(path, strict: bool = True) -> list[SardImage]:
    """Load attribute-annotated detection images from a JSON file."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        root = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc
    if isinstance(root, dict):
        entries = root.get("images")
        if not isinstance(entries, list):
            raise SchemaViolation(f"{path}: images: expected an array")
    elif isinstance(root, list):
        entries = root
    else:
        raise SchemaViolation(f"{path}: root must be an object or array")

    out = []
    for i, entry in enumerate(entries):
        where = f"images[{i}]"
        if not isinstance(entry, dict) or not isinstance(entry.get("image"), str):
            raise SchemaViolation(f"{where}.image: expected string path")
        persons = entry.get("persons")
        if not isinstance(persons, list):
            raise SchemaViolation(f"{where}.persons: expected array")
        out.append(
            SardImage(
                image=entry["image"],
                persons=tuple(
                    _person_from_json(p, f"{where}.persons[{j}]", strict)
                    for j, p in enumerate(persons)
                ),
            )
        )
    return out


def write_sard_annotations(path, images: Seq[SardImage]) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "images": [
            {
                "image": img.image,
                "persons": [
                    {
                        "box": list(p.box.as_tuple()),
                        "pose": p.pose,
                        "shirt_color": p.shirt_color,
                        "injured": p.injured,
                    }
                    for p in img.persons
                ],
            }
            for img in images
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic tracking sequence."""

    name: str = "synth"
    width: int = 320
    height: int = 240
    n_frames: int = 60
    fps: float = DEFAULT_FPS
    start_box: BBox = BBox(60, 80, 40, 40)
    velocity: tuple[float, float] = (0.0, 0.0)
    occlusions: tuple[tuple[int, int], ...] = ()  # inclusive (first, last) frame ranges
    # Frames before each occlusion over which the target fades into the
    # background, so tracker confidence decays gradually instead of cliffing.
    occlusion_fade: int = 0
    seed: int = 0
    superset_class: str = "person"
    predicate: dict = field(default_factory=dict)
    description: str = "the synthetic target"

    def box_at(self, i: int) -> BBox:
        return self.start_box.shifted(self.velocity[0] * i, self.velocity[1] * i)

    def occluded(self, i: int) -> bool:
        return any(a <= i <= b for a, b in self.occlusions)

    def target_alpha(self, i: int) -> float:
        """Target opacity at frame i: 1 fully visible, ramping down ahead of
        an occlusion window when occlusion_fade > 0."""
        if self.occluded(i):
            return 0.0
        alpha = 1.0
        for a, _ in self.occlusions:
            if self.occlusion_fade and a - self.occlusion_fade <= i < a:
                alpha = min(alpha, (a - i) / (self.occlusion_fade + 1))
        return alpha


def _render_background(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    from scipy import ndimage

    noise = rng.uniform(30, 120, size=(spec.height, spec.width))
    return ndimage.uniform_filter(noise, size=7).astype(np.uint8)


def _render_target(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    w = int(round(spec.start_box.w))
    h = int(round(spec.start_box.h))
    tex = rng.uniform(140, 255, size=(h, w))
    # Checkerboard modulation keeps the patch high-contrast for correlation.
    yy, xx = np.mgrid[0:h, 0:w]
    tex[(yy // 4 + xx // 4) % 2 == 0] *= 0.55
    return np.clip(tex, 0, 255).astype(np.uint8)


def synth_sequence(spec: SynthSpec, out_dir) -> Sequence:
    """Render the sequence to ``out_dir`` and load it back via the standard loader."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    background = _render_background(spec, rng)
    target = _render_target(spec, rng)

    gt_lines = []
    for i in range(spec.n_frames):
        box = spec.box_at(i)
        visible = not spec.occluded(i)
        if visible and (
            box.x < 0 or box.y < 0 or box.x2 > spec.width or box.y2 > spec.height
        ):
            raise SpecOutOfBounds(f"frame {i}: target box {box.as_tuple()} leaves the frame")
        canvas = background.copy()
        if visible:
            x = int(round(box.x))
            y = int(round(box.y))
            alpha = spec.target_alpha(i)
            region = canvas[y : y + target.shape[0], x : x + target.shape[1]]
            blended = alpha * target + (1.0 - alpha) * region
            canvas[y : y + target.shape[0], x : x + target.shape[1]] = np.clip(
                blended, 0, 255
            ).astype(np.uint8)
            gt_lines.append(f"{box.x},{box.y},{box.w},{box.h}")
        else:
            gt_lines.append("absent")
        Image.fromarray(canvas, mode="L").save(frames_dir / f"{i:08d}.png")

    (out_dir / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")
    query_lines = [
        f"# format_version: {FORMAT_VERSION}",
        f"# fps: {spec.fps}",
        spec.superset_class,
        format_predicate(spec.predicate),
        spec.description,
    ]
    (out_dir / "query.txt").write_text("\n".join(query_lines) + "\n")
    return load_sequence(out_dir)
