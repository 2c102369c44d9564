"""Score saved predictions against sequence directories."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .io import predicted_boxes, read_gt
from .metrics import aggregate_means, frame_errors, precision_metric, success_metric


def _gt_file(gt_root: Path, name: str) -> Path:
    if (gt_root / name / "gt.txt").exists():
        return gt_root / name / "gt.txt"
    if (gt_root / "gt.txt").exists():
        return gt_root / "gt.txt"
    raise FileNotFoundError(f"no gt.txt for sequence {name!r} under {gt_root}")


def evaluate_entries(entries: list[dict], gt_root) -> dict:
    """Per-sequence and per-category Success/Precision plus F-Mean / C-Mean.

    Per-category scores pool the frames of all sequences in that category.
    Categories without frames are left out of both means.
    """
    gt_root = Path(gt_root)
    per_seq = {}
    pooled = defaultdict(lambda: ([], []))
    for entry in entries:
        gt = read_gt(_gt_file(gt_root, entry["sequence"]))
        preds = predicted_boxes(entry)
        frames = sorted(preds)
        missing = [f for f in frames if f not in gt]
        if missing:
            raise ValueError(f"sequence {entry['sequence']}: no gt for frames {missing[:5]}")
        size = gt[min(gt)]
        ious, dists = frame_errors([size.with_state(preds[f]) for f in frames], [gt[f] for f in frames])
        per_seq[entry["sequence"]] = {
            "category": entry.get("category", "car"),
            "success": success_metric(ious),
            "precision": precision_metric(dists),
            "frames": len(frames),
        }
        p_iou, p_dist = pooled[entry.get("category", "car")]
        p_iou.extend(ious)
        p_dist.extend(dists)
    per_cat = {
        cat: {"success": success_metric(ious), "precision": precision_metric(dists), "frames": len(ious)}
        for cat, (ious, dists) in sorted(pooled.items())
        if len(ious)
    }
    out = {"sequences": per_seq, "per_category": per_cat}
    if per_cat:
        fs, cs = aggregate_means({c: (v["success"], v["frames"]) for c, v in per_cat.items()})
        fp, cp = aggregate_means({c: (v["precision"], v["frames"]) for c, v in per_cat.items()})
        out["f_mean"] = {"success": fs, "precision": fp}
        out["c_mean"] = {"success": cs, "precision": cp, "categories": len(per_cat)}
    for v in list(per_seq.values()) + list(per_cat.values()):
        assert 0.0 <= v["success"] <= 100.0 and 0.0 <= v["precision"] <= 100.0
        assert np.isfinite(v["success"]) and np.isfinite(v["precision"])
    return out
