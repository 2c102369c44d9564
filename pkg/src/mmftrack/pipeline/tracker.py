"""The frame-by-frame tracking loop."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence as Seq

import numpy as np

from ..alignment import (
    AlignedPair,
    EmptySearchRegion,
    FrameAlignment,
    SceneFrame,
    align_frame,
    crop_source,
    make_search,
)
from ..geometry import Box4, Box7
from .config import TrackerConfig
from .metrics import frame_errors, precision_metric, success_metric
from .model import forward_frame
from .templates import make_template


@dataclass(frozen=True)
class Sequence:
    frames: tuple[SceneFrame, ...]
    gt: tuple[Box7, ...] | None = None
    category: str = "car"
    name: str = "seq"

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        ids = [f.frame_id for f in self.frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("frames must be strictly time-ordered")
        if self.gt is not None:
            object.__setattr__(self, "gt", tuple(self.gt))
            if len(self.gt) != len(self.frames):
                raise ValueError(f"{len(self.gt)} gt boxes for {len(self.frames)} frames")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class FrameResult:
    frame: int
    box: Box4
    score: float
    time_ms: float
    coasted: bool = False
    provenance: tuple[int, ...] = ()
    search_center: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class TrackResult:
    name: str
    category: str
    init: Box7
    frames: list[FrameResult] = field(default_factory=list)
    success: float | None = None
    precision: float | None = None
    fused_maps: list[np.ndarray] | None = None

    def boxes(self) -> list[Box7]:
        """Predicted boxes (frames 1..m-1) carrying the initial box size."""
        return [self.init.with_state(fr.box) for fr in self.frames]

    def digest(self) -> str:
        """Hash of every prediction and score, independent of wall-clock timing."""
        h = hashlib.sha256()
        h.update(f"{self.name}|{self.category}|".encode())
        for fr in self.frames:
            b = fr.box
            h.update(np.array([fr.frame, b.x, b.y, b.z, b.theta, fr.score, fr.coasted], dtype=np.float64).tobytes())
        return h.hexdigest()


def frame_seed(seed: int, frame: int) -> int:
    return int(seed) * 1_000_003 + int(frame)


def track_sequence(
    seq: Sequence,
    init: Box7,
    cfg: TrackerConfig,
    weights: Mapping[str, np.ndarray] | None = None,
    keep_maps: bool = False,
    alignments: Seq[FrameAlignment] | None = None,
) -> TrackResult:
    """Track ``init`` (the box in frame 0) through the remaining frames.

    Frames with an empty search region coast: the previous box is held and flagged.
    """
    if len(seq) < 2:
        raise ValueError("tracking needs a sequence of at least two frames")
    if not cfg.diagnostic and weights is None:
        raise ValueError("learned mode needs a weight store")
    grid = cfg.grid
    n = cfg.model.n_points
    mode = cfg.image_mode
    aligned: dict[int, FrameAlignment] = dict(enumerate(alignments)) if alignments is not None else {}

    def fa(i: int) -> FrameAlignment:
        if i not in aligned:
            aligned[i] = align_frame(seq.frames[i], weights, mode)
        return aligned[i]

    boxes = [init]
    crops: dict[int, object] = {}

    def source(i: int):
        if i not in crops:
            crops[i] = crop_source(fa(i), boxes[i].center, grid, boxes[i])
        return crops[i]

    result = TrackResult(seq.name, seq.category, init, fused_maps=[] if keep_maps else None)
    for f in range(1, len(seq)):
        t0 = time.perf_counter()
        prev = boxes[-1]
        seed = frame_seed(cfg.seed, f)
        template = make_template(cfg.strategy, boxes, grid, n, seed, source=source)
        try:
            search = make_search(fa(f), prev.center, grid, n, seed)
        except EmptySearchRegion:
            box, score, coasted, fused = prev.state(), 0.0, True, None
        else:
            pair = AlignedPair(template, search, grid)
            box, score, out = forward_frame(pair, cfg, weights, prev, seed)
            coasted, fused = False, out.fused
        boxes.append(prev.with_state(box))
        # a frame's alignment is only needed again if it can feed a later template
        if cfg.strategy in ("first-gt", "first-gt+prev") and f - 1 > 0:
            aligned.pop(f - 1, None)
        ms = (time.perf_counter() - t0) * 1000.0
        result.frames.append(
            FrameResult(f, box, float(score), ms, coasted, template.provenance, tuple(float(c) for c in prev.center))
        )
        if keep_maps:
            result.fused_maps.append(fused)
    if seq.gt is not None:
        ious, dists = frame_errors(result.boxes(), seq.gt[1:])
        result.success = success_metric(ious)
        result.precision = precision_metric(dists)
    return result
