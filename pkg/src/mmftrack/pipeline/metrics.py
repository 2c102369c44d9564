"""One-pass-evaluation Success/Precision and cross-category means."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..geometry import Box7, center_distance, rotated_iou_3d

# k / 100 and 2k / 100 with one rounding each, so grid points such as 1.9 are exact
IOU_THRESHOLDS = np.arange(101) / 100.0
DIST_THRESHOLDS = np.arange(101) * 2.0 / 100.0


def _values(x, what) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError(f"{what}: empty input")
    return v


def success_metric(ious) -> float:
    """Area under the success plot (strict ``iou > t``), in percent."""
    v = _values(ious, "success_metric")
    return float(np.mean(v[None, :] > IOU_THRESHOLDS[:, None], axis=1).mean() * 100.0)


def precision_metric(errors) -> float:
    """Area under the precision plot (strict ``error < d``, d up to 2 m), in percent."""
    v = _values(errors, "precision_metric")
    return float(np.mean(v[None, :] < DIST_THRESHOLDS[:, None], axis=1).mean() * 100.0)


def aggregate_means(per_category: Mapping[str, tuple[float, int]]) -> tuple[float, float]:
    """Frame-weighted mean (F-Mean) and plain mean over categories (C-Mean)."""
    if not per_category:
        raise ValueError("aggregate_means needs at least one category")
    vals = np.array([float(v) for v, _ in per_category.values()])
    counts = np.array([float(c) for _, c in per_category.values()])
    total = counts.sum()
    if total <= 0:
        raise ValueError("aggregate_means: zero total frames")
    return float((vals * counts).sum() / total), float(vals.mean())


def frame_errors(pred: Sequence, gt: Sequence[Box7]):
    """Per-frame 3D IoU and centre distance; predictions are Box7 in gt size."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions for {len(gt)} ground-truth boxes")
    ious = np.array([rotated_iou_3d(p, g) for p, g in zip(pred, gt)])
    dists = np.array([center_distance(p, g) for p, g in zip(pred, gt)])
    return ious, dists
