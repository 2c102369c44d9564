"""Boxes, camera projection, voxel/BEV grids and rotated-box IoU.

Frames follow the KITTI LiDAR convention: x forward, y left, z up. A box's
length ``l`` runs along its heading (local x), width ``w`` along local y and
height ``h`` along z. BEV arrays are indexed ``[i, j]`` with ``i`` along x
and ``j`` along y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .numerics import as_rows, as_tensor


def normalize_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    t = math.fmod(theta, 2 * math.pi)
    if t <= -math.pi:
        t += 2 * math.pi
    elif t > math.pi:
        t -= 2 * math.pi
    return t


@dataclass(frozen=True)
class Box7:
    x: float
    y: float
    z: float
    w: float
    h: float
    l: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0 and self.l > 0):
            raise ValueError(f"box extents must be positive, got {(self.w, self.h, self.l)}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w, self.h, self.l, self.theta])

    @classmethod
    def from_array(cls, a) -> "Box7":
        return cls(*(float(v) for v in a))

    def with_state(self, state: "Box4") -> "Box7":
        return replace(self, x=state.x, y=state.y, z=state.z, theta=state.theta)

    def state(self) -> "Box4":
        return Box4(self.x, self.y, self.z, self.theta)

    def translated(self, dx: float, dy: float, dz: float) -> "Box7":
        return replace(self, x=self.x + dx, y=self.y + dy, z=self.z + dz)

    def corners_bev(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, shape 4x2."""
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    @property
    def volume(self) -> float:
        return self.w * self.h * self.l


@dataclass(frozen=True)
class Box4:
    x: float
    y: float
    z: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class Calib:
    """LiDAR -> image projection for a single camera.

    ``lidar_to_image`` is the composed 3x4 matrix ``P``. Depth is the third
    homogeneous coordinate of ``P @ [x, y, z, 1]``; the inverse mapping solves
    the 3x3 linear part for a pixel and depth.
    """

    lidar_to_image: np.ndarray
    height: int
    width: int
    _inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = as_tensor(self.lidar_to_image)
        if p.shape != (3, 4):
            raise ValueError("lidar_to_image must be 3x4")
        object.__setattr__(self, "lidar_to_image", p)
        object.__setattr__(self, "_inverse", np.linalg.inv(p[:, :3]))

    @property
    def image_to_lidar(self) -> np.ndarray:
        """3x3 inverse of the linear part; use with :meth:`unproject`."""
        return self._inverse

    def with_size(self, height: int, width: int) -> "Calib":
        return Calib(self.lidar_to_image, height, width)

    def unproject(self, pixels, depth) -> np.ndarray:
        """Inverse of :func:`project_points` for (u, v) pixels with depth."""
        pixels = as_tensor(pixels).reshape(-1, 2)
        depth = as_tensor(depth).reshape(-1)
        hom = np.column_stack([pixels * depth[:, None], depth])
        return (hom - self.lidar_to_image[:, 3]) @ self._inverse.T


class Projection(NamedTuple):
    pixels: np.ndarray  # n x 2, (u, v) = (column, row)
    depth: np.ndarray
    in_view: np.ndarray


def project_points(points, calib: Calib) -> Projection:
    pts = as_tensor(points).reshape(-1, 3)
    hom = pts @ calib.lidar_to_image[:, :3].T + calib.lidar_to_image[:, 3]
    depth = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        pix = hom[:, :2] / depth[:, None]
    pos = depth > 0
    pix[~pos] = 0.0
    u, v = pix[:, 0], pix[:, 1]
    # a pixel is in view when its nearest integer pixel lies inside the image
    in_view = pos & (u > -0.5) & (u < calib.width - 0.5) & (v > -0.5) & (v < calib.height - 0.5)
    return Projection(pix, depth, in_view)


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    xy_range: float
    z_range: tuple[float, float] = (-3.0, 1.0)
    voxel_size: tuple[float, float, float] = (0.025, 0.025, 0.05)
    max_points_per_voxel: int = 5
    bev_stride: int = 8

    @property
    def fine_shape(self) -> tuple[int, int, int]:
        span = 2 * self.xy_range
        nx = int(round(span / self.voxel_size[0]))
        ny = int(round(span / self.voxel_size[1]))
        nz = int(round((self.z_range[1] - self.z_range[0]) / self.voxel_size[2]))
        return nx, ny, nz

    @property
    def bev_shape(self) -> tuple[int, int]:
        nx, ny, _ = self.fine_shape
        return math.ceil(nx / self.bev_stride), math.ceil(ny / self.bev_stride)

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.voxel_size[0] * self.bev_stride, self.voxel_size[1] * self.bev_stride

    @property
    def lower(self) -> np.ndarray:
        return np.array([-self.xy_range, -self.xy_range, self.z_range[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.xy_range, self.xy_range, self.z_range[1]])

    def cell_of(self, xy) -> np.ndarray:
        """Integer BEV cell (i, j) of local xy positions (may be out of range)."""
        xy = as_tensor(xy).reshape(-1, 2)
        cs = np.array(self.cell_size)
        return np.floor((xy + self.xy_range) / cs).astype(np.int64)

    def cell_centers(self) -> np.ndarray:
        """Local xy of every BEV cell centre, shape H1 x W1 x 2."""
        h1, w1 = self.bev_shape
        cx, cy = self.cell_size
        xs = -self.xy_range + (np.arange(h1) + 0.5) * cx
        ys = -self.xy_range + (np.arange(w1) + 0.5) * cy
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)


GRID_PRESETS: dict[str, GridSpec] = {
    "car": GridSpec(3.2, voxel_size=(0.025, 0.025, 0.05)),
    "van": GridSpec(4.5, voxel_size=(0.0375, 0.0375, 0.05)),
    "pedestrian": GridSpec(1.2, voxel_size=(0.025, 0.025, 0.05)),
    "cyclist": GridSpec(1.8, voxel_size=(0.025, 0.025, 0.05)),
}


def grid_preset(category: str) -> GridSpec:
    try:
        return GRID_PRESETS[category.lower()]
    except KeyError:
        raise ValueError(f"unknown category {category!r}; choose from {sorted(GRID_PRESETS)}") from None


# ---------------------------------------------------------------------------
# point selection


def crop_points(points, feats, center, grid: GridSpec):
    """Translate into the frame centred at ``center`` and keep points inside the grid.

    The lower bound is inclusive and the upper bound exclusive on every axis.
    Returns ``(local_points, feats, kept_indices)``.
    """
    pts = as_tensor(points).reshape(-1, 3)
    local = pts - as_tensor(center)[:3]
    keep = np.all((local >= grid.lower) & (local < grid.upper), axis=1)
    idx = np.flatnonzero(keep)
    out_feats = None if feats is None else np.asarray(feats)[idx]
    return local[idx], out_feats, idx


def box_points_mask(points, box: Box7) -> np.ndarray:
    pts = as_tensor(points).reshape(-1, 3)
    d = pts - box.center
    c, s = math.cos(box.theta), math.sin(box.theta)
    lx = d[:, 0] * c + d[:, 1] * s
    ly = -d[:, 0] * s + d[:, 1] * c
    return (np.abs(lx) <= box.l / 2) & (np.abs(ly) <= box.w / 2) & (np.abs(d[:, 2]) <= box.h / 2)


def bev_footprint_mask(box: Box7, grid: GridSpec) -> np.ndarray:
    centers = grid.cell_centers()
    h1, w1 = centers.shape[:2]
    flat = centers.reshape(-1, 2)
    pts = np.column_stack([flat, np.full(len(flat), box.z)])
    inside = box_points_mask(pts, box)
    return inside.reshape(h1, w1, 1).astype(np.float64)


# ---------------------------------------------------------------------------
# voxels and pillars


@dataclass
class Voxels:
    coords: np.ndarray  # v x 3 integer voxel indices (ix, iy, iz)
    points: list[np.ndarray]  # per voxel, k x 3 local xyz
    feats: list[np.ndarray]  # per voxel, k x c


def voxel_indices(points, grid: GridSpec) -> np.ndarray:
    pts = as_tensor(points).reshape(-1, 3)
    return np.floor((pts - grid.lower) / np.array(grid.voxel_size)).astype(np.int64)


def voxelize(points, feats, grid: GridSpec, rng_seed: int) -> Voxels:
    """Bucket points into voxels and keep at most ``max_points_per_voxel`` per voxel.

    Voxels are emitted in lexicographic (ix, iy, iz) order and over-full voxels are
    subsampled without replacement, so the result depends only on the seed.
    """
    pts = as_tensor(points).reshape(-1, 3)
    feats = np.zeros((len(pts), 0)) if feats is None else as_rows(feats, len(pts))
    idx = voxel_indices(pts, grid)
    shape = np.array(grid.fine_shape)
    ok = np.all((idx >= 0) & (idx < shape), axis=1)
    pts, feats, idx = pts[ok], feats[ok], idx[ok]
    if len(pts) == 0:
        return Voxels(np.zeros((0, 3), np.int64), [], [])
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    pts, feats, idx = pts[order], feats[order], idx[order]
    change = np.any(np.diff(idx, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.flatnonzero(change) + 1])
    ends = np.concatenate([starts[1:], [len(pts)]])
    rng = np.random.default_rng(rng_seed)
    cap = grid.max_points_per_voxel
    vpts, vfeats = [], []
    for s, e in zip(starts, ends):
        if e - s > cap:
            pick = s + np.sort(rng.choice(e - s, size=cap, replace=False))
        else:
            pick = np.arange(s, e)
        vpts.append(pts[pick])
        vfeats.append(feats[pick])
    return Voxels(idx[starts], vpts, vfeats)


def pillarize(coords, feats, grid: GridSpec) -> np.ndarray:
    """Channelwise max of point features per BEV cell; empty cells stay zero."""
    coords = as_tensor(coords).reshape(-1, 3)
    feats = as_rows(feats, len(coords))
    h1, w1 = grid.bev_shape
    out = np.zeros((h1, w1, feats.shape[1]))
    if len(coords) == 0:
        return out
    cell = grid.cell_of(coords[:, :2])
    ok = (cell[:, 0] >= 0) & (cell[:, 0] < h1) & (cell[:, 1] >= 0) & (cell[:, 1] < w1)
    cell, f = cell[ok], feats[ok]
    if len(cell) == 0:
        return out
    flat = cell[:, 0] * w1 + cell[:, 1]
    acc = np.full((h1 * w1, f.shape[1]), -np.inf)
    np.maximum.at(acc, flat, f)
    acc[np.isneginf(acc)] = 0.0
    return acc.reshape(h1, w1, -1)


# ---------------------------------------------------------------------------
# IoU


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW polygon ``clip``."""
    out = list(subject)
    n = len(clip)
    for k in range(n):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % n]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(prev + (cur - prev) * (sp / (sp - sc)))
                out.append(cur)
            elif sp >= 0:
                out.append(prev + (cur - prev) * (sp / (sp - sc)))
            prev, sp = cur, sc
    return np.array(out).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def bev_intersection_area(a: Box7, b: Box7) -> float:
    return polygon_area(_clip_polygon(a.corners_bev(), b.corners_bev()))


def rotated_iou_3d(a: Box7, b: Box7) -> float:
    # clip the lower-indexed box by the other so iou(a, b) and iou(b, a) run the same arithmetic
    first, second = (a, b) if tuple(a.to_array()) <= tuple(b.to_array()) else (b, a)
    area = bev_intersection_area(first, second)
    zlo = max(a.z - a.h / 2, b.z - b.h / 2)
    zhi = min(a.z + a.h / 2, b.z + b.h / 2)
    inter = area * max(0.0, zhi - zlo)
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def center_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a.center) - np.asarray(b.center)))
