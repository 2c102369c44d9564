"""Texture (pseudo point) and geometry (raw point BEV) encoders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import GridSpec, pillarize, voxelize
from .numerics import MlpSpec, as_rows, as_tensor, check_finite, conv2d, mlp_apply, relu


@dataclass(frozen=True)
class SaLayerSpec:
    n_seeds: int
    radius: float
    k: int
    width: int


DEFAULT_SA = (
    SaLayerSpec(512, 0.3, 16, 32),
    SaLayerSpec(256, 0.5, 16, 64),
    SaLayerSpec(128, 0.7, 16, 128),
)


def validate_sa_specs(specs: Sequence[SaLayerSpec]) -> None:
    radii = [s.radius for s in specs]
    seeds = [s.n_seeds for s in specs]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("ball radii must strictly increase across layers")
    if any(b >= a for a, b in zip(seeds, seeds[1:])):
        raise ValueError("seed counts must strictly decrease across layers")


def sa_mlp(prefix: str, d_in: int, spec: SaLayerSpec) -> MlpSpec:
    # relative xyz is concatenated in front of the carried features
    return MlpSpec.build(prefix, [3 + d_in, spec.width, spec.width], final="relu")


def texture_param_shapes(namespace: str, d_in: int, specs: Sequence[SaLayerSpec]) -> dict:
    shapes = {}
    for k, spec in enumerate(specs):
        shapes.update(sa_mlp(f"{namespace}.sa{k}", d_in, spec).param_shapes())
        d_in = spec.width
    return shapes


# ---------------------------------------------------------------------------
# sampling and grouping


def farthest_point_sample(coords, m: int, seed: int = 0, start: int | None = None) -> np.ndarray:
    """Greedy max-min sampling of ``m`` indices; repeats cyclically when ``m > n``."""
    pts = as_tensor(coords).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise ValueError("farthest_point_sample on an empty cloud")
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    k = min(n, m)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    dist = np.sum((pts - pts[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
    if m > n:
        chosen = np.resize(chosen, m)
    return chosen


def ball_query(coords, seeds, radius: float, k: int) -> np.ndarray:
    """Up to ``k`` nearest neighbours within ``radius`` per seed, padded with the nearest."""
    pts = as_tensor(coords).reshape(-1, 3)
    seeds = as_tensor(seeds).reshape(-1, 3)
    d2 = np.sum((seeds[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    kk = min(k, len(pts))
    order = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    near_d2 = np.take_along_axis(d2, order, axis=1)
    inside = near_d2 <= radius * radius
    out = np.where(inside, order, order[:, :1])
    if kk < k:
        out = np.concatenate([out, np.repeat(out[:, :1], k - kk, axis=1)], axis=1)
    return out


@dataclass(frozen=True)
class SetAbstractionOutput:
    coords: np.ndarray  # N_k x 3
    feats: np.ndarray  # N_k x D_k
    indices: np.ndarray  # into the layer's input points


def set_abstraction(
    coords,
    feats,
    spec: SaLayerSpec,
    weights: Mapping[str, np.ndarray],
    prefix: str,
    seed: int = 0,
    start: int | None = None,
) -> SetAbstractionOutput:
    coords = as_tensor(coords).reshape(-1, 3)
    feats = as_rows(feats, len(coords))
    mlp = sa_mlp(prefix, feats.shape[1], spec)
    idx = farthest_point_sample(coords, spec.n_seeds, seed, start)
    seeds = coords[idx]
    nbr = ball_query(coords, seeds, spec.radius, spec.k)  # N_k x K
    rel = coords[nbr] - seeds[:, None, :]
    # empty balls cannot happen (seeds are input points) but the padding rule covers them
    grouped = np.concatenate([rel, feats[nbr]], axis=-1)
    out = mlp_apply(mlp, weights, grouped).max(axis=1)
    return SetAbstractionOutput(seeds, out, idx)


@dataclass(frozen=True)
class TextureFeatures:
    levels: tuple[SetAbstractionOutput, ...]

    def coords(self, k: int) -> np.ndarray:
        return self.levels[k].coords

    def feats(self, k: int) -> np.ndarray:
        return self.levels[k].feats

    def source_index(self, k: int) -> np.ndarray:
        """Indices of level-``k`` seeds into the encoder's input points."""
        idx = self.levels[0].indices
        for lvl in self.levels[1 : k + 1]:
            idx = idx[lvl.indices]
        return idx


def texture_encode(
    pseudo,
    mask,
    weights: Mapping[str, np.ndarray],
    specs: Sequence[SaLayerSpec],
    namespace: str,
    seed: int = 0,
    start: int | None = None,
) -> TextureFeatures:
    """Three chained set-abstraction layers over painted pseudo points.

    ``mask`` (template side only) joins the painted features as an extra channel.
    """
    pseudo = as_tensor(pseudo)
    coords, feats = pseudo[:, :3], pseudo[:, 3:]
    if mask is not None:
        feats = np.concatenate([feats, as_tensor(mask).reshape(-1, 1)], axis=1)
    levels = []
    for k, spec in enumerate(specs):
        out = set_abstraction(
            coords, feats, spec, weights, f"{namespace}.sa{k}", seed=seed + k, start=start if k == 0 else None
        )
        levels.append(out)
        coords, feats = out.coords, out.feats
    return TextureFeatures(tuple(levels))


# ---------------------------------------------------------------------------
# geometry


VFE_IN = 7  # local xyz, intensity, offset from voxel point mean


def geometry_param_shapes(namespace: str, vfe_width: int, bev_width: int, with_mask: bool) -> dict:
    shapes = MlpSpec.build(f"{namespace}.vfe", [VFE_IN, vfe_width, vfe_width], final="relu").param_shapes()
    cin = vfe_width + (1 if with_mask else 0)
    for i in range(3):
        shapes[f"{namespace}.conv{i}.w"] = (3, 3, cin, bev_width)
        shapes[f"{namespace}.conv{i}.b"] = (bev_width,)
        cin = bev_width
    return shapes


def voxel_features(raw, grid: GridSpec, weights, namespace: str, vfe_width: int, seed: int = 0):
    """Per-voxel MLP + max, then max over each z column onto the fine BEV grid."""
    raw = as_tensor(raw).reshape(-1, 4)
    if grid.bev_stride != 8:
        raise ValueError("geometry encoder expects a BEV stride of 8 (three stride-2 convs)")
    h1, w1 = grid.bev_shape
    fh, fw = h1 * grid.bev_stride, w1 * grid.bev_stride
    fine = np.zeros((fh, fw, vfe_width))
    vox = voxelize(raw[:, :3], raw[:, 3:4], grid, seed)
    nv = len(vox.points)
    if nv == 0:
        return fine
    cap = grid.max_points_per_voxel
    x = np.zeros((nv, cap, VFE_IN))
    valid = np.zeros((nv, cap), dtype=bool)
    for v, (p, f) in enumerate(zip(vox.points, vox.feats)):
        k = len(p)
        x[v, :k, :3] = p
        x[v, :k, 3] = f[:, 0]
        x[v, :k, 4:] = p - p.mean(axis=0)
        valid[v, :k] = True
    spec = MlpSpec.build(f"{namespace}.vfe", [VFE_IN, vfe_width, vfe_width], final="relu")
    y = mlp_apply(spec, weights, x)
    y = np.where(valid[..., None], y, -np.inf).max(axis=1)
    flat = vox.coords[:, 0] * fw + vox.coords[:, 1]
    acc = np.full((fh * fw, vfe_width), -np.inf)
    np.maximum.at(acc, flat, y)
    acc[np.isneginf(acc)] = 0.0
    return acc.reshape(fh, fw, vfe_width)


def upsample_mask(mask_r, stride: int) -> np.ndarray:
    m = as_tensor(mask_r)
    return np.repeat(np.repeat(m, stride, axis=0), stride, axis=1)


def bev_backbone(fine, weights, namespace: str) -> np.ndarray:
    x = fine
    for i in range(3):
        x = conv2d(x, weights[f"{namespace}.conv{i}.w"], stride=2, padding=1, bias=weights[f"{namespace}.conv{i}.b"])
        if i < 2:
            x = relu(x)
    return x


def geometry_encode(
    raw,
    mask_r,
    grid: GridSpec,
    weights: Mapping[str, np.ndarray],
    namespace: str,
    vfe_width: int,
    seed: int = 0,
) -> np.ndarray:
    """Dense H1 x W1 x D BEV features from raw points (template side takes ``mask_r``)."""
    fine = voxel_features(raw, grid, weights, namespace, vfe_width, seed)
    if mask_r is not None:
        fine = np.concatenate([fine, upsample_mask(mask_r, grid.bev_stride)], axis=-1)
    out = bev_backbone(fine, weights, namespace)
    h1, w1 = grid.bev_shape
    assert out.shape[:2] == (h1, w1), (out.shape, (h1, w1))
    return check_finite(out, namespace)


# ---------------------------------------------------------------------------
# identity encoders for the diagnostic mode


def identity_texture(pseudo) -> TextureFeatures:
    """Painted features as-is, every pseudo point a seed."""
    pseudo = as_tensor(pseudo)
    n = len(pseudo)
    lvl = SetAbstractionOutput(pseudo[:, :3], pseudo[:, 3:], np.arange(n))
    return TextureFeatures((lvl,))


def identity_geometry(raw, grid: GridSpec) -> np.ndarray:
    """BEV occupancy of the raw points, one channel."""
    raw = as_tensor(raw).reshape(-1, 4)
    return pillarize(raw[:, :3], np.ones((len(raw), 1)), grid)
