"""Camera/LiDAR space alignment.

Each frame's cloud is z-buffered into a sparse depth map, the filled pixels are
lifted back to 3D as pseudo points, and image features are painted onto them
through the stored pixel index. Template and search crops share one extent;
the template keeps the background around the target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import (
    Box7,
    Calib,
    GridSpec,
    bev_footprint_mask,
    box_points_mask,
    crop_points,
    project_points,
    round_half_away,
)
from .numerics import as_tensor, conv2d, relu

SENTINEL = -1
TEMPLATE_RAW_CAP = 2048


class EmptySearchRegion(RuntimeError):
    """The search crop holds no raw points (target fully out of view)."""


@dataclass(frozen=True)
class SceneFrame:
    points: np.ndarray  # n x 4: x, y, z, intensity
    image: np.ndarray  # H x W x 3 in [0, 1]
    calib: Calib
    frame_id: int = 0

    def __post_init__(self):
        pts = as_tensor(self.points).reshape(-1, 4)
        img = as_tensor(self.image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("image must be H x W x 3")
        if img.shape[:2] != (self.calib.height, self.calib.width):
            raise ValueError(
                f"image is {img.shape[:2]} but calibration expects {(self.calib.height, self.calib.width)}"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray  # H x W x 1, metres, 0 = empty
    source: np.ndarray  # H x W point index or SENTINEL


def build_depth_map(frame: SceneFrame) -> DepthMap:
    calib = frame.calib
    h, w = calib.height, calib.width
    proj = project_points(frame.points[:, :3], calib)
    idx = np.flatnonzero(proj.in_view)
    depth = np.zeros((h, w, 1))
    source = np.full((h, w), SENTINEL, dtype=np.int64)
    if len(idx) == 0:
        return DepthMap(depth, source)
    col = round_half_away(proj.pixels[idx, 0])
    row = round_half_away(proj.pixels[idx, 1])
    d = proj.depth[idx]
    # nearest depth wins; equal depths go to the lower point index
    order = np.lexsort((idx, d))
    flat = (row * w + col)[order]
    _, first = np.unique(flat, return_index=True)
    win = order[first]
    depth[row[win], col[win], 0] = d[win]
    source[row[win], col[win]] = idx[win]
    return DepthMap(depth, source)


def make_pseudo_points(dm: DepthMap, calib: Calib):
    """One 3D point per filled pixel, plus its (row, col) index memory."""
    rows, cols = np.nonzero(dm.source != SENTINEL)
    index = np.column_stack([rows, cols]).astype(np.int64)
    if len(rows) == 0:
        return np.zeros((0, 3)), index
    d = dm.depth[rows, cols, 0]
    pts = calib.unproject(np.column_stack([cols, rows]).astype(np.float64), d)
    return pts, index


def image_param_shapes(d_img: int) -> dict[str, tuple[int, ...]]:
    widths = [3, d_img, d_img, d_img]
    shapes = {}
    for i in range(3):
        shapes[f"img.conv{i}.w"] = (3, 3, widths[i], widths[i + 1])
        shapes[f"img.conv{i}.b"] = (widths[i + 1],)
    return shapes


def extract_image_features(image, weights: Mapping[str, np.ndarray] | None = None, mode: str = "conv"):
    """Per-pixel image features: the RGB values themselves, or a 3-layer conv stack."""
    image = as_tensor(image)
    if mode == "rgb":
        return image
    if mode != "conv":
        raise ValueError(f"unknown feature mode {mode!r}")
    if weights is None:
        raise KeyError("conv mode needs image weights")
    x = image
    for i in range(3):
        try:
            k = weights[f"img.conv{i}.w"]
            b = weights[f"img.conv{i}.b"]
        except KeyError as exc:
            raise KeyError(f"missing parameter {exc.args[0]}") from None
        x = conv2d(x, k, stride=1, padding=1, bias=b)
        if i < 2:
            x = relu(x)
    return x


def paint_pseudo_points(points, index, feats) -> np.ndarray:
    points = as_tensor(points).reshape(-1, 3)
    index = np.asarray(index, dtype=np.int64).reshape(-1, 2)
    feats = as_tensor(feats)
    if len(points) == 0:
        return np.zeros((0, 3 + feats.shape[2]))
    h, w = feats.shape[:2]
    if np.any(index < 0) or np.any(index[:, 0] >= h) or np.any(index[:, 1] >= w):
        raise IndexError("index memory points outside the feature map")
    return np.concatenate([points, feats[index[:, 0], index[:, 1]]], axis=1)


@dataclass(frozen=True)
class FrameAlignment:
    """Frame-level products of alignment, computed once and cropped many times."""

    frame: SceneFrame
    depth_map: DepthMap
    pseudo: np.ndarray  # m x (3 + d_img), world xyz + painted features
    index: np.ndarray  # m x 2 (row, col)


def align_frame(frame: SceneFrame, weights=None, mode: str = "conv") -> FrameAlignment:
    dm = build_depth_map(frame)
    pts, index = make_pseudo_points(dm, frame.calib)
    feats = extract_image_features(frame.image, weights, mode)
    return FrameAlignment(frame, dm, paint_pseudo_points(pts, index, feats), index)


def resample_indices(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``n`` indices into ``m`` rows by random discarding or copying."""
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    if m >= n:
        return np.sort(rng.choice(m, size=n, replace=False))
    extra = rng.choice(m, size=n - m, replace=True)
    return np.concatenate([np.arange(m), extra])


@dataclass(frozen=True)
class CropSource:
    """One un-resampled crop in its own local frame."""

    raw: np.ndarray  # k x 4
    pseudo: np.ndarray  # m x (3 + d)
    index: np.ndarray  # m x 2
    frame_id: int
    box: Box7 | None = None  # template box in the local frame
    mask_p: np.ndarray | None = None  # m


def crop_source(fa: FrameAlignment, center, grid: GridSpec, box: Box7 | None = None) -> CropSource:
    center = np.asarray(center, dtype=np.float64)[:3]
    raw_xyz, raw_i, _ = crop_points(fa.frame.points[:, :3], fa.frame.points[:, 3:], center, grid)
    ps_xyz, ps_feat, keep = crop_points(fa.pseudo[:, :3], fa.pseudo[:, 3:], center, grid)
    local_box = None
    mask = None
    if box is not None:
        local_box = box.translated(-center[0], -center[1], -center[2])
        mask = box_points_mask(ps_xyz, local_box)
    return CropSource(
        raw=np.concatenate([raw_xyz, raw_i], axis=1),
        pseudo=np.concatenate([ps_xyz, ps_feat], axis=1),
        index=fa.index[keep],
        frame_id=fa.frame.frame_id,
        box=local_box,
        mask_p=mask,
    )


@dataclass(frozen=True)
class TemplateData:
    raw: np.ndarray  # P_r^t
    pseudo: np.ndarray  # P_p^t, N rows
    index: np.ndarray  # N x 2
    mask_p: np.ndarray  # N x 1
    mask_r: np.ndarray  # H1 x W1 x 1
    provenance: tuple[int, ...]
    degraded: bool = False


@dataclass(frozen=True)
class SearchData:
    raw: np.ndarray  # P_r^s
    pseudo: np.ndarray  # P_p^s, N rows
    index: np.ndarray
    center: np.ndarray  # world position of the crop origin
    frame_id: int
    degraded: bool = False


def _resample(pseudo, index, extra, n, rng):
    sel = resample_indices(len(pseudo), n, rng)
    if len(sel) == 0:
        width = pseudo.shape[1]
        zero_extra = None if extra is None else np.zeros((n,) + extra.shape[1:])
        return np.zeros((n, width)), np.zeros((n, 2), np.int64), zero_extra, True
    return pseudo[sel], index[sel], None if extra is None else extra[sel], False


def finalize_template(
    sources: Sequence[CropSource],
    grid: GridSpec,
    n_points: int,
    seed: int,
    raw_cap: int | None = None,
) -> TemplateData:
    """Merge template crops (each already in its own local frame) and resample."""
    if not sources:
        raise ValueError("no template sources")
    rng = np.random.default_rng((seed, 1))
    raw = np.concatenate([s.raw for s in sources], axis=0)
    if raw_cap is not None and len(raw) > raw_cap:
        raw = raw[np.sort(rng.choice(len(raw), size=raw_cap, replace=False))]
    pseudo = np.concatenate([s.pseudo for s in sources], axis=0)
    index = np.concatenate([s.index for s in sources], axis=0)
    mask = np.concatenate([s.mask_p for s in sources], axis=0).astype(np.float64)
    pseudo, index, mask, degraded = _resample(pseudo, index, mask, n_points, rng)
    mask_r = np.zeros(grid.bev_shape + (1,))
    for s in sources:
        mask_r = np.maximum(mask_r, bev_footprint_mask(s.box, grid))
    return TemplateData(
        raw=raw,
        pseudo=pseudo,
        index=index,
        mask_p=mask.reshape(-1, 1),
        mask_r=mask_r,
        provenance=tuple(s.frame_id for s in sources),
        degraded=degraded,
    )


def make_search(fa: FrameAlignment, center, grid: GridSpec, n_points: int, seed: int) -> SearchData:
    src = crop_source(fa, center, grid)
    if len(src.raw) == 0:
        raise EmptySearchRegion(f"no raw points in the search region of frame {fa.frame.frame_id}")
    rng = np.random.default_rng((seed, 2))
    pseudo, index, _, degraded = _resample(src.pseudo, src.index, None, n_points, rng)
    return SearchData(
        raw=src.raw,
        pseudo=pseudo,
        index=index,
        center=np.asarray(center, dtype=np.float64)[:3].copy(),
        frame_id=src.frame_id,
        degraded=degraded,
    )


@dataclass(frozen=True)
class AlignedPair:
    template: TemplateData
    search: SearchData
    grid: GridSpec

    @property
    def template_extent(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.lower, self.grid.upper

    @property
    def search_extent(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.lower, self.grid.upper


def build_aligned_pair(
    prev: SceneFrame | FrameAlignment,
    cur: SceneFrame | FrameAlignment,
    prev_box: Box7,
    grid: GridSpec,
    weights=None,
    seed: int = 0,
    n_points: int = 1024,
    mode: str = "conv",
) -> AlignedPair:
    """Template from ``prev`` around ``prev_box``; search from ``cur`` around the same centre."""
    fa_prev = prev if isinstance(prev, FrameAlignment) else align_frame(prev, weights, mode)
    fa_cur = cur if isinstance(cur, FrameAlignment) else align_frame(cur, weights, mode)
    src = crop_source(fa_prev, prev_box.center, grid, prev_box)
    template = finalize_template([src], grid, n_points, seed)
    search = make_search(fa_cur, prev_box.center, grid, n_points, seed)
    return AlignedPair(template, search, grid)


def with_constant_paint(fa: FrameAlignment, value: float = 1.0) -> FrameAlignment:
    """Replace painted features by a constant (texture-disabled control)."""
    pseudo = fa.pseudo.copy()
    pseudo[:, 3:] = value
    return replace(fa, pseudo=pseudo)
