"""Synthetic LiDAR + camera sequences with an optional look-alike distractor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..alignment import SceneFrame
from ..geometry import Box7, Calib, project_points, round_half_away
from .tracker import Sequence

DEFAULT_SIZES = {  # w, h, l
    "car": (1.8, 1.6, 4.2),
    "van": (2.0, 2.2, 5.0),
    "pedestrian": (0.6, 1.75, 0.8),
    "cyclist": (0.6, 1.7, 1.8),
}
PALETTE = ((200, 30, 30), (30, 60, 200), (30, 170, 40), (210, 190, 20), (170, 40, 190), (20, 180, 180))
BACKGROUND = 128


@dataclass(frozen=True)
class SynthConfig:
    n_frames: int = 20
    category: str = "car"
    size: tuple[float, float, float] | None = None  # w, h, l
    color: tuple[int, int, int] = PALETTE[0]
    max_speed: float = 0.5  # m / frame
    jitter: float = 0.02  # m, per-frame position noise
    n_distractors: int = 0
    distractor_offset: float | None = None  # lateral, m; default 1.5 box diagonals
    density: float = 100.0  # surface points per m^2
    point_noise: float = 0.01
    image_size: tuple[int, int] = (192, 640)  # H, W
    focal: float = 320.0
    lidar_height: float = 1.73
    cam_offset: tuple[float, float, float] = (0.0, -0.08, -0.27)  # LiDAR origin in camera axes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("size", "color", "image_size", "cam_offset"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def box_size(self) -> tuple[float, float, float]:
        return self.size if self.size is not None else DEFAULT_SIZES[self.category]


def camera_matrices(cfg: SynthConfig):
    """Camera intrinsics and the LiDAR -> camera rigid transform (both as KITTI-style 3x4)."""
    h, w = cfg.image_size
    k = np.array([[cfg.focal, 0.0, w / 2.0, 0.0], [0.0, cfg.focal, h / 2.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    # camera axes: x right (= -y lidar), y down (= -z lidar), z forward (= x lidar)
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    tr = np.column_stack([rot, np.asarray(cfg.cam_offset, dtype=np.float64)])
    return k, tr


def make_calib(cfg: SynthConfig) -> Calib:
    k, tr = camera_matrices(cfg)
    tr4 = np.vstack([tr, [0.0, 0.0, 0.0, 1.0]])
    h, w = cfg.image_size
    return Calib(k @ tr4, h, w)


def sample_box_surface(box: Box7, density: float, rng: np.random.Generator, noise: float = 0.0) -> np.ndarray:
    """Points on the faces of ``box`` that face a sensor at the origin (bottom face excluded)."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    half = np.array([box.l, box.w, box.h]) / 2.0
    center = box.center
    faces = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)]
    chunks = []
    for axis, sign in faces:
        normal_local = np.zeros(3)
        normal_local[axis] = sign
        face_center = center + rot @ (normal_local * half)
        if np.dot(rot @ normal_local, -face_center) <= 0:
            continue
        others = [a for a in range(3) if a != axis]
        area = 4.0 * half[others[0]] * half[others[1]]
        n = rng.poisson(density * area)
        local = np.empty((n, 3))
        local[:, axis] = sign * half[axis]
        for a in others:
            local[:, a] = rng.uniform(-half[a], half[a], n)
        chunks.append(local @ rot.T + center)
    pts = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 3))
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    return pts


def render_image(points, colors, calib: Calib) -> np.ndarray:
    """Project coloured points with 1-pixel splats; the nearest point (then lowest index) wins."""
    h, w = calib.height, calib.width
    image = np.full((h, w, 3), BACKGROUND / 255.0)
    proj = project_points(points, calib)
    idx = np.flatnonzero(proj.in_view)
    if len(idx) == 0:
        return image
    col = round_half_away(proj.pixels[idx, 0])
    row = round_half_away(proj.pixels[idx, 1])
    zbuf = np.full((h, w), np.inf)
    owner = np.full((h, w), -1, dtype=np.int64)
    for k in range(len(idx)):
        r, cc, d, i = row[k], col[k], proj.depth[idx[k]], idx[k]
        if d < zbuf[r, cc] or (d == zbuf[r, cc] and i < owner[r, cc]):
            zbuf[r, cc] = d
            owner[r, cc] = i
    hit = owner >= 0
    image[hit] = np.asarray(colors, dtype=np.float64)[owner[hit]]
    return image


@dataclass
class SyntheticSequence:
    sequence: Sequence
    distractors: list[list[Box7]] = field(default_factory=list)  # per frame
    config: SynthConfig | None = None


def _distractor_offsets(cfg: SynthConfig, box: Box7, side: float) -> list[float]:
    w, _, l = cfg.box_size()
    base = cfg.distractor_offset if cfg.distractor_offset is not None else 1.5 * math.hypot(w, l)
    if base < w + 0.1:
        raise ValueError(f"distractor offset {base} m would overlap the target (width {w} m)")
    # alternate sides, pushing further out every second clone
    return [side * (-1) ** k * base * (k // 2 + 1) for k in range(cfg.n_distractors)]


def generate_synthetic(cfg: SynthConfig = SynthConfig(), seed: int = 0, name: str | None = None) -> SyntheticSequence:
    """Constant-velocity target (plus lateral clones in other colours) seen by LiDAR and camera."""
    if cfg.n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    w, h, l = cfg.box_size()
    calib = make_calib(cfg)
    heading = rng.uniform(-0.3, 0.3)
    toward = rng.random() < 0.5
    if toward:
        heading += math.pi
    speed = rng.uniform(0.0, cfg.max_speed)
    x0 = rng.uniform(17.0, 21.0) if toward else rng.uniform(7.0, 11.0)
    y0 = rng.uniform(-1.5, 1.5)
    z = -cfg.lidar_height + h / 2.0
    vel = speed * np.array([math.cos(heading), math.sin(heading)])
    lateral = np.array([-math.sin(heading), math.cos(heading)])
    side = -1.0 if y0 > 0 else 1.0
    offsets = _distractor_offsets(cfg, Box7(0, 0, 0, w, h, l, heading), side) if cfg.n_distractors else []
    colors = [tuple(c) for c in PALETTE if tuple(c) != tuple(cfg.color)]

    frames, gt, distractors = [], [], []
    for f in range(cfg.n_frames):
        xy = np.array([x0, y0]) + f * vel + rng.normal(0.0, cfg.jitter, 2)
        box = Box7(float(xy[0]), float(xy[1]), z, w, h, l, heading)
        boxes = [box]
        for off in offsets:
            dxy = xy + off * lateral
            boxes.append(Box7(float(dxy[0]), float(dxy[1]), z, w, h, l, heading))
        pts, cols = [], []
        for k, b in enumerate(boxes):
            p = sample_box_surface(b, cfg.density, rng, cfg.point_noise)
            rgb = np.asarray(cfg.color if k == 0 else colors[(k - 1) % len(colors)], dtype=np.float64) / 255.0
            pts.append(p)
            cols.append(np.broadcast_to(rgb, p.shape))
        xyz = np.concatenate(pts)
        col = np.concatenate(cols)
        points = np.column_stack([xyz, rng.random(len(xyz))])
        image = render_image(xyz, col, calib)
        frames.append(SceneFrame(points, image, calib, f))
        gt.append(box)
        distractors.append(boxes[1:])
    seq = Sequence(tuple(frames), tuple(gt), cfg.category, name or f"synth{seed:06d}")
    return SyntheticSequence(seq, distractors, cfg)
