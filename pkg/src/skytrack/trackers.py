"""Lightweight single-object trackers behind a uniform init/step contract.

Three kinds are built in:

* ``mosse`` — frequency-domain correlation filter with PSR-based confidence.
* ``ncc``   — exhaustive normalized cross-correlation template matcher.
* ``static``— never moves its box; constant confidence 1.0 (test baseline,
  and the stand-in for trackers without a self-evaluation score).

All trackers are translation-only: the box keeps its size and scale changes
are handled upstream by re-initialization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .core import BBox, BoxTooSmall, Frame, NoOverlap

MIN_BOX_SIDE = 8


class TrackerKind(str, Enum):
    MOSSE = "mosse"
    NCC = "ncc"
    STATIC = "static"


class TrackStatus(str, Enum):
    TRACKING = "tracking"
    LOST = "lost"


@dataclass
class MosseParams:
    learning_rate: float = 0.125
    gaussian_sigma: float = 2.0
    regularization: float = 1e-5
    train_perturbations: int = 8
    psr_sidelobe_exclusion: int = 5
    psr_saturation: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        for name in ("gaussian_sigma", "regularization", "psr_saturation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrackState:
    """Single-owner mutable tracker handle; steps must be sequential."""

    kind: TrackerKind
    box: BBox
    confidence: float = 1.0
    status: TrackStatus = TrackStatus.TRACKING
    model: object = None
    frames_tracked: int = 0


def tracker_is_score_enabled(kind: TrackerKind) -> bool:
    """Whether the tracker's confidence is a genuine self-evaluation."""
    return kind in (TrackerKind.MOSSE, TrackerKind.NCC)


def _window(pixels: np.ndarray, y0: int, x0: int, h: int, w: int) -> np.ndarray:
    """Extract an h x w float window; out-of-frame pixels replicate the edge."""
    ys = np.clip(np.arange(y0, y0 + h), 0, pixels.shape[0] - 1)
    xs = np.clip(np.arange(x0, x0 + w), 0, pixels.shape[1] - 1)
    return pixels[np.ix_(ys, xs)].astype(np.float64)


def _int_box(box: BBox) -> tuple[int, int, int, int]:
    x = int(round(box.x))
    y = int(round(box.y))
    w = max(1, int(round(box.w)))
    h = max(1, int(round(box.h)))
    return x, y, w, h


def _check_init_box(frame: Frame, box: BBox) -> None:
    if box.w < MIN_BOX_SIDE or box.h < MIN_BOX_SIDE:
        raise BoxTooSmall(f"box {box.as_tuple()} below {MIN_BOX_SIDE}px minimum")
    if box.x >= frame.width or box.y >= frame.height or box.x2 <= 0 or box.y2 <= 0:
        raise NoOverlap(f"box {box.as_tuple()} outside {frame.width}x{frame.height} frame")


class _NccModel:
    def __init__(self, frame: Frame, box: BBox):
        x, y, w, h = _int_box(box)
        self.tw, self.th = w, h
        self.template = _window(frame.pixels, y, x, h, w)

    def step(self, pixels: np.ndarray, box: BBox) -> tuple[BBox, float]:
        # Search window is 2x the box, centered on the previous box.
        x, y, w, h = _int_box(box)
        wy0 = y - h // 2
        wx0 = x - w // 2
        window = _window(pixels, wy0, wx0, 2 * h, 2 * w)
        dy, dx, score = kernels.ncc_search(window, self.template)
        new_box = BBox(float(wx0 + dx), float(wy0 + dy), box.w, box.h)
        conf = float(np.clip((score + 1.0) / 2.0, 0.0, 1.0))
        return new_box, conf


class _MosseModel:
    """Classical MOSSE filter trained at a window twice the box size."""

    def __init__(self, frame: Frame, box: BBox, params: MosseParams):
        self.params = params
        x, y, w, h = _int_box(box)
        self.bw, self.bh = w, h
        self.ww, self.wh = 2 * w, 2 * h
        self.hann = np.outer(np.hanning(self.wh), np.hanning(self.ww))
        gy, gx = np.mgrid[0 : self.wh, 0 : self.ww]
        dist2 = (gy - self.wh // 2) ** 2 + (gx - self.ww // 2) ** 2
        g = np.exp(-dist2 / (2.0 * params.gaussian_sigma**2))
        self.G = np.fft.fft2(g)
        rng = np.random.default_rng(params.seed)

        patch = self._extract(frame.pixels, box)
        F = np.fft.fft2(self._preprocess(patch))
        self.A = self.G * np.conj(F)
        self.B = F * np.conj(F)
        for _ in range(params.train_perturbations):
            warped = self._perturb(patch, rng)
            F = np.fft.fft2(self._preprocess(warped))
            self.A += self.G * np.conj(F)
            self.B += F * np.conj(F)

    def _extract(self, pixels: np.ndarray, box: BBox) -> np.ndarray:
        cx = int(round(box.cx))
        cy = int(round(box.cy))
        return _window(pixels, cy - self.wh // 2, cx - self.ww // 2, self.wh, self.ww)

    def _preprocess(self, patch: np.ndarray) -> np.ndarray:
        p = np.log1p(patch)
        p -= p.mean()
        p /= np.linalg.norm(p) + 1e-9
        return p * self.hann

    @staticmethod
    def _perturb(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        angle = rng.uniform(-4.0, 4.0)
        shift = rng.uniform(-2.0, 2.0, size=2)
        warped = ndimage.rotate(patch, angle, reshape=False, mode="nearest", order=1)
        return ndimage.shift(warped, shift, mode="nearest", order=1)

    def _filter(self) -> np.ndarray:
        return self.A / (self.B + self.params.regularization)

    def step(self, pixels: np.ndarray, box: BBox) -> tuple[BBox, float]:
        patch = self._extract(pixels, box)
        F = np.fft.fft2(self._preprocess(patch))
        response = np.real(np.fft.ifft2(self._filter() * F))
        peak = int(np.argmax(response))
        py, px = divmod(peak, self.ww)
        dy = py - self.wh // 2
        dx = px - self.ww // 2
        new_box = box.shifted(float(dx), float(dy))

        psr = self._psr(response, py, px)
        conf = float(np.clip(psr / self.params.psr_saturation, 0.0, 1.0))

        # Online update at the newly found position.
        lr = self.params.learning_rate
        patch = self._extract(pixels, new_box)
        F = np.fft.fft2(self._preprocess(patch))
        self.A = lr * (self.G * np.conj(F)) + (1.0 - lr) * self.A
        self.B = lr * (F * np.conj(F)) + (1.0 - lr) * self.B
        return new_box, conf

    def _psr(self, response: np.ndarray, py: int, px: int) -> float:
        excl = self.params.psr_sidelobe_exclusion
        peak = response[py, px]
        mask = np.ones_like(response, dtype=bool)
        mask[max(0, py - excl) : py + excl + 1, max(0, px - excl) : px + excl + 1] = False
        side = response[mask]
        if side.size == 0:
            return 0.0
        return float((peak - side.mean()) / (side.std() + 1e-9))


def tracker_init(
    kind: TrackerKind,
    frame: Frame,
    box: BBox,
    params: Optional[MosseParams] = None,
) -> TrackState:
    """Build tracker state from the patch at ``box`` in ``frame``."""
    kind = TrackerKind(kind)
    _check_init_box(frame, box)
    if kind is TrackerKind.STATIC:
        model = None
    elif kind is TrackerKind.NCC:
        model = _NccModel(frame, box)
    else:
        model = _MosseModel(frame, box, params or MosseParams())
    return TrackState(kind=kind, box=box, confidence=1.0, model=model)


def tracker_step(state: TrackState, frame: Frame) -> tuple[BBox, float]:
    """Advance the tracker one frame; returns (new box, confidence).

    A vanished target shows up as low confidence, never as an error.
    """
    if state.status is not TrackStatus.TRACKING:
        raise ValueError("tracker_step on a lost tracker; re-initialize first")
    if state.kind is TrackerKind.STATIC:
        box, conf = state.box, 1.0
    else:
        box, conf = state.model.step(frame.pixels, state.box)
    state.box = box
    state.confidence = conf
    state.frames_tracked += 1
    return box, conf
