"""Geometry/texture similarity between template and search, and their fusion."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import GridSpec, pillarize
from .numerics import MlpSpec, as_tensor, check_finite, cosine_matrix, linear, mlp_apply, sigmoid, softmax


def geometry_similarity(template, search) -> np.ndarray:
    """Depth-wise same-size correlation of ``search`` with ``template`` as kernel.

    Output cell ``(i, j)`` scores the displacement ``(i - H//2, j - W//2)`` and is
    normalised by the kernel's element count ``H * W``.
    """
    t = as_tensor(template)
    s = as_tensor(search)
    if t.shape != s.shape or t.ndim != 3:
        raise ValueError(f"template {t.shape} and search {s.shape} maps must match")
    h, w, _ = t.shape
    ch, cw = h // 2, w // 2
    padded = np.pad(s, ((ch, h - 1 - ch), (cw, w - 1 - cw), (0, 0)))
    win = sliding_window_view(padded, (h, w), axis=(0, 1))  # H x W x C x h x w
    out = np.einsum("ijcab,abc->ijc", win, t, optimize=True)
    return check_finite(out / (h * w), "geometry_similarity")


def texture_mlp(name: str, d: int, hidden: int) -> MlpSpec:
    # row layout: [cosine, template feature (d), template xyz (3), template mask (1)]
    return MlpSpec.build(name, [d + 5, hidden, d])


def texture_param_shapes(name: str, d: int, hidden: int) -> dict:
    return texture_mlp(name, d, hidden).param_shapes()


def texture_cosines(f_t, f_s) -> np.ndarray:
    """Search x template cosine table, all entries in [-1, 1]."""
    return cosine_matrix(f_s, f_t)


def texture_similarity(f_t, t_coords, t_mask, f_s, weights: Mapping[str, np.ndarray], name: str, hidden: int):
    """Per search seed: MLP over [cos, template feature, coords, mask] rows, max over template seeds."""
    f_t = as_tensor(f_t)
    f_s = as_tensor(f_s)
    if f_t.shape[1] != f_s.shape[1]:
        raise ValueError("template and search texture widths differ")
    d = f_t.shape[1]
    n_t = len(f_t)
    t_coords = as_tensor(t_coords).reshape(n_t, 3)
    t_mask = np.zeros(n_t) if t_mask is None else as_tensor(t_mask).reshape(n_t)
    spec = texture_mlp(name, d, hidden)
    cos = texture_cosines(f_t, f_s)  # N_s x N_t
    w0, b0 = weights[f"{name}.l0.w"], weights[f"{name}.l0.b"]
    # the first layer splits into a per-pair cosine term and a per-template-seed term
    per_t = np.concatenate([f_t, t_coords, t_mask[:, None]], axis=1) @ w0[1:] + b0
    out = np.empty((len(f_s), d))
    step = 64
    for s0 in range(0, len(f_s), step):
        h = np.maximum(cos[s0 : s0 + step, :, None] * w0[0] + per_t[None], 0.0)
        y = h @ weights[f"{name}.l1.w"] + weights[f"{name}.l1.b"]
        out[s0 : s0 + step] = y.max(axis=1)
    assert spec.d_out == d
    return check_finite(out, name)


def diagnostic_texture_similarity(f_t, t_mask, f_s) -> np.ndarray:
    """Best cosine of each search seed against the in-box template seeds (N_s x 1)."""
    cos = texture_cosines(f_t, f_s)
    mask = None if t_mask is None else as_tensor(t_mask).reshape(-1) > 0.5
    if mask is not None and mask.any():
        cos = cos[:, mask]
    return cos.max(axis=1, keepdims=True)


def pillarize_similarity(s_t, coords, grid: GridSpec) -> np.ndarray:
    return pillarize(coords, s_t, grid)


# ---------------------------------------------------------------------------
# fusion


def apm_specs(name: str, d: int) -> tuple[MlpSpec, MlpSpec]:
    return MlpSpec.build(f"{name}.mlp1", [d, d], final="relu"), MlpSpec.build(f"{name}.mlp2", [3 * d, d])


def apm_preweight(r, weights: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    """Channel gate from token statistics: ``R * sigmoid(MLP2([MLP1(R), max, avg])) + R``."""
    r = as_tensor(r)
    if r.ndim != 2 or len(r) == 0:
        raise ValueError("apm_preweight expects a non-empty T x D tensor")
    mlp1, mlp2 = apm_specs(name, r.shape[1])
    t = len(r)
    stats = np.concatenate(
        [mlp_apply(mlp1, weights, r), np.broadcast_to(r.max(axis=0), r.shape), np.broadcast_to(r.mean(axis=0), r.shape)],
        axis=1,
    )
    gate = sigmoid(mlp_apply(mlp2, weights, stats))
    assert gate.shape == (t, r.shape[1])
    return check_finite(r * gate + r, name)


def sfm_param_shapes(name: str, d: int) -> dict:
    s = {}
    for p in ("q", "k", "v"):
        s[f"{name}.{p}.w"] = (d, d)
        s[f"{name}.{p}.b"] = (d,)
        for spec in apm_specs(f"{name}.apm_{p}", d):
            s.update(spec.param_shapes())
    s.update(sfm_mlp(name, d).param_shapes())
    return s


def sfm_mlp(name: str, d: int) -> MlpSpec:
    return MlpSpec.build(f"{name}.mlp", [d, d, d])


def sfm_fuse(s_g, s_tb, weights: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    s_g = as_tensor(s_g)
    s_tb = as_tensor(s_tb)
    if s_g.shape != s_tb.shape:
        raise ValueError(f"similarity maps differ in shape: {s_g.shape} vs {s_tb.shape}")
    h, w, d = s_g.shape
    g = s_g.reshape(-1, d)
    tb = s_tb.reshape(-1, d)
    q = apm_preweight(linear(g, weights[f"{name}.q.w"], weights[f"{name}.q.b"]), weights, f"{name}.apm_q")
    k = apm_preweight(linear(tb, weights[f"{name}.k.w"], weights[f"{name}.k.b"]), weights, f"{name}.apm_k")
    v = apm_preweight(linear(tb, weights[f"{name}.v.w"], weights[f"{name}.v.b"]), weights, f"{name}.apm_v")
    a = softmax(q @ k.T / math.sqrt(d), axis=-1)
    s_hat = a @ v + g
    s = mlp_apply(sfm_mlp(name, d), weights, s_hat) + s_hat
    return check_finite(s.reshape(h, w, d), name)


def diagnostic_fuse(s_g, s_tex) -> np.ndarray:
    """Sum of the two maps, each scaled to a unit peak (the diagnostic mode's fusion)."""

    def unit(x):
        peak = float(np.max(np.abs(x))) if x.size else 0.0
        return x / peak if peak > 0 else x

    return unit(as_tensor(s_g)) + unit(as_tensor(s_tex))
