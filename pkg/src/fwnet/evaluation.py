"""Dice scoring, dataset evaluation, throughput benchmarking and overlays."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .validation import as_mask, check_frame, to_gray

__all__ = [
    "PUBLISHED_REFERENCE_DICE",
    "PUBLISHED_REFERENCE_FPS",
    "ConfusionCounts",
    "EvalReport",
    "FpsReport",
    "confusion_counts",
    "dice",
    "evaluate",
    "benchmark_fps",
    "render_overlay",
]

# Table I of the source publication; recorded for context, never asserted.
PUBLISHED_REFERENCE_DICE = {"FW-Net": 0.821, "U-Net": 0.677, "TCF": 0.796}
PUBLISHED_REFERENCE_FPS = 15.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_counts(pred, gt) -> ConfusionCounts:
    p = as_mask(pred).astype(bool)
    g = as_mask(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def dice(pred, gt) -> float:
    """``2TP / (2TP + FP + FN)``; two empty masks score 1.0."""
    c = confusion_counts(pred, gt)
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


@dataclass
class EvalReport:
    per_frame_dice: list
    mean_dice: float
    fps: float | None = None
    model_id: str = ""
    dataset_id: str = ""
    frame_ids: list = field(default_factory=list)
    reference: dict = field(default_factory=lambda: dict(PUBLISHED_REFERENCE_DICE))

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)

    def to_csv(self) -> str:
        ids = self.frame_ids or [str(k) for k in range(len(self.per_frame_dice))]
        rows = ["frame,dice"] + [f"{i},{d:.6f}" for i, d in zip(ids, self.per_frame_dice)]
        return "\n".join(rows) + "\n"


def evaluate(model, dataset, model_id: str = "", dataset_id: str = "") -> EvalReport:
    """Frame-averaged Dice of per-frame predictions against ground truth.

    ``model`` is anything with ``predict(frames) -> masks``, or a callable
    doing the same. ``dataset`` is a list of sequences of ``(frame, mask)``.
    """
    predict = model.predict if hasattr(model, "predict") else model
    scores, ids = [], []
    for s, seq in enumerate(dataset):
        if any(m is None for _, m in seq):
            raise ValueError(f"sequence {s} has frames without ground truth")
        frames = [f for f, _ in seq]
        preds = predict(frames) if frames else []
        for t, (p, (_, g)) in enumerate(zip(preds, seq)):
            scores.append(dice(p, g))
            ids.append(f"{s}/{t}")
    mean = float(np.mean(scores)) if scores else float("nan")
    return EvalReport(scores, mean, None, model_id, dataset_id, ids)


@dataclass
class FpsReport:
    mean_fps: float
    std_fps: float
    per_rep_fps: list
    frames: int
    reference_fps: float = PUBLISHED_REFERENCE_FPS


def benchmark_fps(model, frames, warmup: int = 1, reps: int = 3) -> FpsReport:
    """Wall-clock frames per second of one-frame-at-a-time inference."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not frames:
        raise ValueError("need at least one frame")
    predict = model.predict if hasattr(model, "predict") else model
    for k in range(warmup):
        predict([frames[k % len(frames)]])
    per_rep = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for f in frames:
            predict([f])
        per_rep.append(len(frames) / (time.perf_counter() - t0))
    return FpsReport(float(np.mean(per_rep)), float(np.std(per_rep)), per_rep, len(frames))


PRED_COLOR = np.array([0.0, 0.8, 1.0])
GT_COLOR = np.array([0.2, 1.0, 0.2])
DISAGREE_COLOR = np.array([1.0, 0.0, 0.0])


def render_overlay(frame, pred, gt=None, alpha: float = 0.5) -> np.ndarray:
    """RGB uint8 overlay of a prediction (and optionally ground truth).

    Predicted pixels are tinted cyan, ground-truth pixels green, and pixels
    where the two disagree are painted solid red. Untouched pixels keep the
    frame's grey value exactly.
    """
    g = to_gray(check_frame(frame, size=None)).astype(np.float64)
    p = as_mask(pred).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != frame shape {g.shape}")
    rgb = np.repeat(g[..., None], 3, axis=2)
    rgb[p] = (1 - alpha) * rgb[p] + alpha * PRED_COLOR
    if gt is not None:
        t = as_mask(gt).astype(bool)
        if t.shape != g.shape:
            raise ValueError(f"ground truth shape {t.shape} != frame shape {g.shape}")
        rgb[t] = (1 - alpha) * rgb[t] + alpha * GT_COLOR
        rgb[p ^ t] = DISAGREE_COLOR
    return np.round(rgb * 255).astype(np.uint8)
