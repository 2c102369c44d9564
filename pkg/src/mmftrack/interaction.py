"""Dual-stream feature interaction between texture tokens and the geometry BEV map.

All attention is single-head. In every block the residual is added to the
projected, position-augmented query ``Q``, not to the raw input features.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .geometry import GridSpec
from .numerics import MlpSpec, as_rows, as_tensor, bilinear_sample, check_finite, layer_norm, linear, mlp_apply, softmax

LN_EPS = 1e-5
IDW_EPS = 1e-8  # m^2


def _assert_prob_rows(a: np.ndarray, what: str) -> None:
    if np.any(a < 0) or not np.allclose(a.sum(axis=-1), 1.0, atol=1e-6):
        raise AssertionError(f"{what}: attention rows are not probability vectors")


def _lin(x, weights, name):
    return linear(x, weights[f"{name}.w"], weights[f"{name}.b"])


def _ln(x, weights, name):
    return layer_norm(x, weights[f"{name}.gamma"], weights[f"{name}.beta"], LN_EPS)


def _lin_shapes(name, d_in, d_out):
    return {f"{name}.w": (d_in, d_out), f"{name}.b": (d_out,)}


def _ln_shapes(name, d):
    return {f"{name}.gamma": (d,), f"{name}.beta": (d,)}


# ---------------------------------------------------------------------------
# position encoding


def positional_encoding(coords, width: int) -> np.ndarray:
    """Fixed sinusoidal bands per coordinate: [sin f0 u, cos f0 u, sin f1 u, ...] per axis.

    Band ``b`` of ``B = width / (2 * dim)`` has angular frequency ``pi * 2**(8 b / B)``.
    """
    coords = as_tensor(coords)
    if coords.ndim == 1:
        coords = coords[:, None]
    dim = coords.shape[1]
    if width % (2 * dim):
        raise ValueError(f"width {width} is not divisible by 2 * {dim}")
    bands = width // (2 * dim)
    freqs = math.pi * 2.0 ** (8.0 * np.arange(bands) / bands)
    ang = coords[:, :, None] * freqs  # n x dim x B
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # n x dim x B x 2
    return enc.reshape(len(coords), width)


def normalized_xy(xy, grid: GridSpec) -> np.ndarray:
    xy = as_tensor(xy)[..., :2]
    return (xy + grid.xy_range) / (2 * grid.xy_range)


def point_encoding(coords, grid: GridSpec, width: int) -> np.ndarray:
    # texture tokens are encoded in the same BEV plane as the geometry cells
    return positional_encoding(normalized_xy(coords, grid).reshape(-1, 2), width)


def bev_encoding(grid: GridSpec, width: int) -> np.ndarray:
    centers = grid.cell_centers()
    return positional_encoding(normalized_xy(centers, grid).reshape(-1, 2), width)


# ---------------------------------------------------------------------------
# attention blocks


def self_attention_shapes(name: str, d: int) -> dict:
    s = {}
    for p in ("alpha", "beta", "gamma"):
        s.update(_lin_shapes(f"{name}.{p}", d, d))
    s.update(_ln_shapes(f"{name}.ln", d))
    return s


def self_attention_block(feats, pos, weights: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    f = as_tensor(feats)
    q = _lin(f, weights, f"{name}.alpha") + pos
    k = _lin(f, weights, f"{name}.beta") + pos
    v = _lin(f, weights, f"{name}.gamma")
    a = softmax(q @ k.T / math.sqrt(q.shape[1]), axis=-1)
    _assert_prob_rows(a, name)
    return check_finite(_ln(a @ v, weights, f"{name}.ln") + q, name)


def cross_attention_shapes(name: str, d: int) -> dict:
    return self_attention_shapes(name, d)


def cross_attention_block(q_feats, q_pos, kv_feats, kv_pos, weights: Mapping[str, np.ndarray], name: str):
    """Queries from one branch attend over every token of the other branch."""
    qf = as_tensor(q_feats)
    kvf = as_tensor(kv_feats)
    if qf.shape[-1] != kvf.shape[-1]:
        raise ValueError(f"{name}: branch widths differ ({qf.shape[-1]} vs {kvf.shape[-1]})")
    q = _lin(qf, weights, f"{name}.alpha") + q_pos
    k = _lin(kvf, weights, f"{name}.beta") + kv_pos
    v = _lin(kvf, weights, f"{name}.gamma")
    a = softmax(q @ k.T / math.sqrt(q.shape[1]), axis=-1)
    _assert_prob_rows(a, name)
    return check_finite(_ln(a @ v, weights, f"{name}.ln") + q, name)


def deform_attention_shapes(name: str, d: int, n_points: int) -> dict:
    s = {}
    s.update(_lin_shapes(f"{name}.alpha", d, d))
    s.update(_lin_shapes(f"{name}.gamma", d, d))
    s.update(_lin_shapes(f"{name}.offset", d, 2 * n_points))
    s.update(_lin_shapes(f"{name}.attn", d, n_points))
    s.update(_ln_shapes(f"{name}.ln", d))
    return s


def deform_attention_block(fmap, pos, weights: Mapping[str, np.ndarray], name: str, n_points: int):
    """Each cell samples ``n_points`` offsets (in cells) of the value map around itself."""
    fmap = as_tensor(fmap)
    h, w, d = fmap.shape
    q = _lin(fmap.reshape(-1, d), weights, f"{name}.alpha") + pos.reshape(h * w, d)
    v = _lin(fmap.reshape(-1, d), weights, f"{name}.gamma").reshape(h, w, d)
    offsets = _lin(q, weights, f"{name}.offset").reshape(h * w, n_points, 2)
    a = softmax(_lin(q, weights, f"{name}.attn"), axis=-1)
    _assert_prob_rows(a, name)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    base = np.stack([ii, jj], axis=-1).reshape(h * w, 1, 2).astype(np.float64)
    samples = bilinear_sample(v, (base + offsets).reshape(-1, 2)).reshape(h * w, n_points, d)
    out = np.einsum("qk,qkd->qd", a, samples)
    return check_finite((_ln(out, weights, f"{name}.ln") + q).reshape(h, w, d), name)


# ---------------------------------------------------------------------------
# FIM / CFIM


def ffn_spec(name: str, d: int) -> MlpSpec:
    return MlpSpec.build(name, [d, 2 * d, d])


def fim_shapes(name: str, d: int, n_points: int) -> dict:
    s = {}
    s.update(self_attention_shapes(f"{name}.self", d))
    s.update(deform_attention_shapes(f"{name}.deform", d, n_points))
    s.update(cross_attention_shapes(f"{name}.cross_p", d))
    s.update(cross_attention_shapes(f"{name}.cross_r", d))
    s.update(ffn_spec(f"{name}.ffn_p", d).param_shapes())
    s.update(ffn_spec(f"{name}.ffn_r", d).param_shapes())
    return s


def fim_forward(f_p, f_r, e_p, e_r, weights: Mapping[str, np.ndarray], name: str, n_points: int):
    """Intra-modal enhancement, bidirectional cross attention, then per-branch FFN."""
    f_p = as_tensor(f_p)
    f_r = as_tensor(f_r)
    h, w, d = f_r.shape
    e_r = as_tensor(e_r).reshape(h * w, d)
    tex = self_attention_block(f_p, e_p, weights, f"{name}.self")
    geo = deform_attention_block(f_r, e_r, weights, f"{name}.deform", n_points).reshape(h * w, d)
    tex_x = cross_attention_block(tex, e_p, geo, e_r, weights, f"{name}.cross_p")
    geo_x = cross_attention_block(geo, e_r, tex, e_p, weights, f"{name}.cross_r")
    tex_out = tex_x + mlp_apply(ffn_spec(f"{name}.ffn_p", d), weights, tex_x)
    geo_out = geo_x + mlp_apply(ffn_spec(f"{name}.ffn_r", d), weights, geo_x)
    return tex_out, geo_out.reshape(h, w, d)


def interpolate_3nn(coarse_coords, coarse_feats, fine_coords, eps: float = IDW_EPS) -> np.ndarray:
    """Inverse squared-distance weighted mean of the (up to) 3 nearest coarse seeds."""
    cc = as_tensor(coarse_coords).reshape(-1, 3)
    cf = as_rows(coarse_feats, len(cc))
    fc = as_tensor(fine_coords).reshape(-1, 3)
    if len(cc) == 0:
        raise ValueError("interpolation needs at least one coarse seed")
    k = min(3, len(cc))
    d2 = np.sum((fc[:, None, :] - cc[None, :, :]) ** 2, axis=-1)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    near = np.take_along_axis(d2, nn, axis=1)
    wts = 1.0 / (near + eps)
    wts /= wts.sum(axis=1, keepdims=True)
    # a fine point sitting exactly on a seed (FPS keeps coarse seeds in the finer set) takes its feature
    hit = near[:, 0] == 0.0
    wts[hit] = 0.0
    wts[hit, 0] = 1.0
    return np.einsum("nk,nkd->nd", wts, cf[nn])


def propagation_spec(name: str, d_coarse: int, d_fine: int) -> MlpSpec:
    return MlpSpec.build(name, [d_coarse + d_fine, d_fine, d_fine])


def feature_propagation(coarse_coords, coarse_feats, fine_coords, skip_feats, weights, name: str):
    interp = interpolate_3nn(coarse_coords, coarse_feats, fine_coords)
    skip = as_tensor(skip_feats)
    spec = propagation_spec(name, interp.shape[1], skip.shape[1])
    return mlp_apply(spec, weights, np.concatenate([interp, skip], axis=1))


def cfim_shapes(name: str, widths: Sequence[int], bev_width: int, out_width: int, n_points: int) -> dict:
    s = {}
    n_levels = len(widths)
    geo_w = bev_width
    for j in range(1, n_levels):
        k = n_levels - j
        d = widths[k]
        s.update(_lin_shapes(f"{name}.align{j}", geo_w, d))
        s.update(fim_shapes(f"{name}.fim{j}", d, n_points))
        s.update(propagation_spec(f"{name}.prop{j}", d, widths[k - 1]).param_shapes())
        geo_w = d
    s.update(_lin_shapes(f"{name}.out_p", widths[0], out_width))
    s.update(_lin_shapes(f"{name}.out_r", geo_w, out_width))
    return s


def cfim_forward(tex, geo, weights: Mapping[str, np.ndarray], name: str, grid: GridSpec, n_points: int = 4):
    """Coarse-to-fine interaction over the texture pyramid, carrying the geometry map along.

    Returns ``(F_p, F_r)`` of shapes ``N_0 x D`` and ``H1 x W1 x D``.
    """
    n_levels = len(tex.levels)
    if n_levels < 2:
        raise ValueError("coarse-to-fine interaction needs at least two texture levels")
    geo = as_tensor(geo)
    h1, w1 = geo.shape[:2]
    f_p = tex.feats(n_levels - 1)
    f_r = geo
    for j in range(1, n_levels):
        k = n_levels - j
        d = tex.feats(k).shape[1]
        f_r = _lin(f_r, weights, f"{name}.align{j}")
        e_p = point_encoding(tex.coords(k), grid, d)
        e_r = bev_encoding(grid, d)
        hat_p, f_r = fim_forward(f_p, f_r, e_p, e_r, weights, f"{name}.fim{j}", n_points)
        f_p = feature_propagation(tex.coords(k), hat_p, tex.coords(k - 1), tex.feats(k - 1), weights, f"{name}.prop{j}")
    out_p = _lin(f_p, weights, f"{name}.out_p")
    out_r = _lin(f_r, weights, f"{name}.out_r")
    assert out_r.shape[:2] == (h1, w1)
    return check_finite(out_p, name), check_finite(out_r, name)
