"""Measurement harness: detection AP/mAP with timings, tracking mIoU and
frame rates, and the re-initialization threshold sweep.

AP uses all-point interpolation (monotone precision envelope) at a single
IoU threshold of 0.5. That choice is stated here prominently because
absolute AP values depend on it.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence as Seq

import numpy as np

from .backend import OracleNoise, detect, predicate_match
from .core import BBox, Detection, Frame, SkytrackError, iou
from .datasets import SardImage, Sequence, TaskSpec
from .orchestrator import MissionConfig, MissionLog, ReinitPolicy, run_mission
from .trackers import TrackerKind, tracker_is_score_enabled

#: t_c grid: 0.30 to 0.95 in steps of 0.05 (14 thresholds).
SWEEP_THRESHOLDS = tuple(v / 100.0 for v in range(30, 100, 5))


class FrameCountMismatch(SkytrackError):
    pass


class SweepNotApplicable(SkytrackError):
    pass


@dataclass
class TrackingEvalResult:
    miou: float
    fps: float
    fps_edge: Optional[float]
    mean_t_b: Optional[float]
    per_frame_iou: list[Optional[float]]
    gt_absent_with_box: int = 0

    def to_json(self) -> dict:
        return {
            "miou": self.miou,
            "fps": self.fps,
            "fps_edge": self.fps_edge,
            "t_b_ms": None if self.mean_t_b is None else self.mean_t_b * 1000.0,
            "per_frame_iou": self.per_frame_iou,
            "gt_absent_with_box": self.gt_absent_with_box,
        }


def miou(log: MissionLog, sequence: Sequence) -> TrackingEvalResult:
    """Tracking metrics from a mission log against the sequence ground truth.

    mIoU sums per-frame IoU over frames with a ground-truth box and divides
    by the count of those frames; frames where the tracker reports no box
    contribute 0. Frames with a reported box but no ground truth are counted
    separately and affect neither numerator nor denominator.
    """
    if len(log.records) != len(sequence):
        raise FrameCountMismatch(
            f"log has {len(log.records)} records for {len(sequence)} frames"
        )
    total = 0.0
    n_gt = 0
    per_frame: list[Optional[float]] = []
    absent_with_box = 0
    for record, gt in zip(log.records, sequence.ground_truth):
        if gt is not None:
            n_gt += 1
            value = iou(record.box, gt) if record.box is not None else 0.0
            total += value
            per_frame.append(value)
        else:
            per_frame.append(None)
            if record.box is not None:
                absent_with_box += 1

    t_bs = [r.t_b for r in log.records if r.t_b is not None]
    fps = log.frames_total / log.mission_elapsed if log.mission_elapsed > 0 else 0.0
    fps_edge = (
        log.steps_total / log.edge_compute_total if log.edge_compute_total > 0 else None
    )
    return TrackingEvalResult(
        miou=total / n_gt if n_gt else 0.0,
        fps=fps,
        fps_edge=fps_edge,
        mean_t_b=sum(t_bs) / len(t_bs) if t_bs else None,
        per_frame_iou=per_frame,
        gt_absent_with_box=absent_with_box,
    )


def match_greedy(
    predictions: Seq[Detection], truths: Seq[BBox], iou_threshold: float = 0.5
) -> list[tuple[float, bool]]:
    """Score-ranked greedy one-to-one matching; returns (score, is_tp) pairs
    in descending score order."""
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].detector_score)
    used = [False] * len(truths)
    out = []
    for i in order:
        pred = predictions[i]
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(truths):
            if used[j]:
                continue
            v = iou(pred.box, gt)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= iou_threshold:
            used[best_j] = True
            out.append((pred.detector_score, True))
        else:
            out.append((pred.detector_score, False))
    return out


def ap_from_matches(matches: Seq[tuple[float, bool]], n_truth: int) -> float:
    """All-point-interpolated AP from pooled (score, is_tp) pairs."""
    if n_truth == 0:
        return 1.0 if not matches else 0.0
    if not matches:
        return 0.0
    flags = np.array(
        [tp for _, tp in sorted(matches, key=lambda m: -m[0])], dtype=np.float64
    )
    tp_cum = np.cumsum(flags)
    precision = tp_cum / np.arange(1, len(flags) + 1)
    recall = tp_cum / n_truth
    # Monotone non-increasing precision envelope, then integrate recall steps.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def average_precision(
    predictions: Seq[Detection], truths: Seq[BBox], iou_threshold: float = 0.5
) -> float:
    """AP of scored predictions against ground-truth boxes (IoU >= threshold)."""
    return ap_from_matches(match_greedy(predictions, truths, iou_threshold), len(truths))


@dataclass
class TaskResult:
    task_id: str
    ap: float
    tp: int
    fp: int
    fn: int
    mean_t_f: float
    mean_t_obj: Optional[float]

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 1.0


@dataclass
class DetectionEvalResult:
    tasks: list[TaskResult]

    @property
    def map(self) -> float:
        return sum(t.ap for t in self.tasks) / len(self.tasks) if self.tasks else 0.0

    def to_json(self) -> dict:
        return {
            "map": self.map,
            "tasks": [
                {
                    "task": t.task_id,
                    "ap": t.ap,
                    "tp": t.tp,
                    "fp": t.fp,
                    "fn": t.fn,
                    "recall": t.recall,
                    "t_f_ms": t.mean_t_f * 1000.0,
                    "t_obj_ms": None if t.mean_t_obj is None else t.mean_t_obj * 1000.0,
                }
                for t in self.tasks
            ],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["task", "ap", "map", "t_f_ms", "t_obj_ms"])
            for t in self.tasks:
                w.writerow(
                    [
                        t.task_id,
                        f"{t.ap:.6f}",
                        f"{self.map:.6f}",
                        f"{t.mean_t_f * 1000.0:.3f}",
                        "" if t.mean_t_obj is None else f"{t.mean_t_obj * 1000.0:.3f}",
                    ]
                )


def _frame_for(image: SardImage, index: int, size: tuple[int, int] = (640, 480)) -> Frame:
    # Oracle evaluation never inspects pixels; a blank frame big enough to
    # contain every annotated box suffices.
    width = max(size[0], int(max((p.box.x2 for p in image.persons), default=0)) + 1)
    height = max(size[1], int(max((p.box.y2 for p in image.persons), default=0)) + 1)
    return Frame(
        index=index,
        timestamp=float(index),
        width=width,
        height=height,
        pixels=np.zeros((height, width), dtype=np.uint8),
    )


def run_detection_eval(
    tasks: Seq[TaskSpec],
    dataset: Seq[SardImage],
    noise: OracleNoise = OracleNoise(),
    margin: float = 50.0,
    iou_threshold: float = 0.5,
    simulated_stage2_cost: float = 0.0,
) -> DetectionEvalResult:
    """Run the back-end over every image for every task and aggregate AP."""
    results = []
    for task in tasks:
        matches: list[tuple[float, bool]] = []
        n_truth = 0
        t_fs: list[float] = []
        t_objs: list[float] = []
        tp = 0
        for i, image in enumerate(dataset):
            frame = _frame_for(image, i)
            detections, timings = detect(
                frame,
                task.query,
                list(image.persons),
                noise,
                margin=margin,
                simulated_stage2_cost=simulated_stage2_cost,
            )
            positives = [
                p.box for p in image.persons if predicate_match(task.gt_predicate, p)[0]
            ]
            n_truth += len(positives)
            image_matches = match_greedy(detections, positives, iou_threshold)
            matches.extend(image_matches)
            tp += sum(1 for _, ok in image_matches if ok)
            t_fs.append(timings.t_f)
            if timings.t_obj is not None:
                t_objs.append(timings.t_obj)
        results.append(
            TaskResult(
                task_id=task.task_id,
                ap=ap_from_matches(matches, n_truth),
                tp=tp,
                fp=len(matches) - tp,
                fn=n_truth - tp,
                mean_t_f=sum(t_fs) / len(t_fs) if t_fs else 0.0,
                mean_t_obj=sum(t_objs) / len(t_objs) if t_objs else None,
            )
        )
    return DetectionEvalResult(tasks=results)


@dataclass
class SweepRow:
    t_c: float
    miou: float
    fps: float
    fps_edge: Optional[float]
    backend_calls: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    t_c_opt: float

    def to_json(self) -> dict:
        return {
            "rows": [
                {
                    "t_c": r.t_c,
                    "miou": r.miou,
                    "fps": r.fps,
                    "fps_edge": r.fps_edge,
                    "backend_calls": r.backend_calls,
                }
                for r in self.rows
            ],
            "t_c_opt": self.t_c_opt,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t_c", "miou", "fps", "fps_edge"])
            for r in self.rows:
                w.writerow(
                    [
                        f"{r.t_c:.2f}",
                        f"{r.miou:.6f}",
                        f"{r.fps:.3f}",
                        "" if r.fps_edge is None else f"{r.fps_edge:.3f}",
                    ]
                )


def run_sweep(
    sequences: Seq[Sequence],
    tracker: TrackerKind,
    config: Optional[MissionConfig] = None,
) -> SweepResult:
    """Re-run every sequence once per threshold in the t_c grid."""
    tracker = TrackerKind(tracker)
    if not tracker_is_score_enabled(tracker):
        raise SweepNotApplicable(f"{tracker.value} has no self-evaluation score")
    base = config or MissionConfig(tracker=tracker)

    rows = []
    for t_c in SWEEP_THRESHOLDS:
        mious, fpss, edges, calls = [], [], [], []
        for seq in sequences:
            cfg = replace(
                base, tracker=tracker, policy=ReinitPolicy(t_c=t_c, enabled=True)
            )
            log = run_mission(seq, cfg)
            result = miou(log, seq)
            mious.append(result.miou)
            fpss.append(result.fps)
            if result.fps_edge is not None:
                edges.append(result.fps_edge)
            calls.append(log.backend_calls)
        rows.append(
            SweepRow(
                t_c=t_c,
                miou=float(np.mean(mious)),
                fps=float(np.mean(fpss)),
                fps_edge=float(np.mean(edges)) if edges else None,
                backend_calls=float(np.mean(calls)),
            )
        )

    # Highest mIoU; ties prefer higher FPS, then lower t_c.
    best = max(rows, key=lambda r: (r.miou, r.fps, -r.t_c))
    return SweepResult(rows=rows, t_c_opt=best.t_c)
