"""Parameter registry and the per-frame forward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .. import encoders, interaction, similarity
from ..alignment import AlignedPair, image_param_shapes
from ..geometry import Box7
from ..head import HeadOutput, decode_box, diagnostic_output, head_forward, head_param_shapes
from .config import ModelConfig, TrackerConfig


TEXTURE_POOL = 2  # cells; the texture term only has to tell objects apart, not place them


def _model_cfg(config) -> ModelConfig:
    return config.model if isinstance(config, TrackerConfig) else config


def parameter_shapes(config) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor of the tracker, keyed by its hierarchical name."""
    m = _model_cfg(config)
    image_mode = config.image_mode if isinstance(config, TrackerConfig) else m.image_mode
    d_img = m.image_width if image_mode == "conv" else 3
    shapes: dict[str, tuple[int, ...]] = {}
    if image_mode == "conv":
        shapes.update(image_param_shapes(m.d_img))
    # the template stream carries the point mask as one extra feature channel
    shapes.update(encoders.texture_param_shapes("tex_t", d_img + 1, m.sa_layers))
    shapes.update(encoders.texture_param_shapes("tex_s", d_img, m.sa_layers))
    shapes.update(encoders.geometry_param_shapes("geo_t", m.vfe_width, m.bev_width, with_mask=True))
    shapes.update(encoders.geometry_param_shapes("geo_s", m.vfe_width, m.bev_width, with_mask=False))
    shapes.update(interaction.cfim_shapes("cfim", m.level_widths, m.bev_width, m.out_width, m.deform_points))
    shapes.update(similarity.texture_param_shapes("sim.tex", m.out_width, m.sim_hidden))
    shapes.update(similarity.sfm_param_shapes("sfm", m.out_width))
    shapes.update(head_param_shapes("head", m.out_width, m.head_hidden))
    return shapes


@dataclass(frozen=True)
class FrameOutput:
    head: HeadOutput
    fused: np.ndarray  # H1 x W1 x D
    s_geo: np.ndarray
    s_tex: np.ndarray


def _expect(arr, shape, what):
    if arr.shape != tuple(shape):
        raise AssertionError(f"{what}: expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise AssertionError(f"{what}: non-finite values")


def forward_learned(pair: AlignedPair, weights: Mapping[str, np.ndarray], m: ModelConfig, seed: int = 0) -> FrameOutput:
    grid = pair.grid
    h1, w1 = grid.bev_shape
    n, d = m.n_points, m.out_width
    t, s = pair.template, pair.search
    tex_t = encoders.texture_encode(t.pseudo, t.mask_p, weights, m.sa_layers, "tex_t", seed)
    tex_s = encoders.texture_encode(s.pseudo, None, weights, m.sa_layers, "tex_s", seed)
    for k, spec in enumerate(m.sa_layers):
        _expect(tex_t.feats(k), (spec.n_seeds, spec.width), f"template texture level {k}")
        _expect(tex_s.feats(k), (spec.n_seeds, spec.width), f"search texture level {k}")
    geo_t = encoders.geometry_encode(t.raw, t.mask_r, grid, weights, "geo_t", m.vfe_width, seed)
    geo_s = encoders.geometry_encode(s.raw, None, grid, weights, "geo_s", m.vfe_width, seed)
    _expect(geo_t, (h1, w1, m.bev_width), "template geometry")
    _expect(geo_s, (h1, w1, m.bev_width), "search geometry")

    fp_t, fr_t = interaction.cfim_forward(tex_t, geo_t, weights, "cfim", grid, m.deform_points)
    fp_s, fr_s = interaction.cfim_forward(tex_s, geo_s, weights, "cfim", grid, m.deform_points)
    n0 = m.sa_layers[0].n_seeds
    for arr, what in ((fp_t, "template F_p"), (fp_s, "search F_p")):
        _expect(arr, (n0, d), what)
    for arr, what in ((fr_t, "template F_r"), (fr_s, "search F_r")):
        _expect(arr, (h1, w1, d), what)

    s_g = similarity.geometry_similarity(fr_t, fr_s)
    seed_mask = t.mask_p[tex_t.source_index(0)]
    s_t = similarity.texture_similarity(fp_t, tex_t.coords(0), seed_mask, fp_s, weights, "sim.tex", m.sim_hidden)
    _expect(s_t, (n0, d), "texture similarity")
    s_tb = similarity.pillarize_similarity(s_t, tex_s.coords(0), grid)
    fused = similarity.sfm_fuse(s_g, s_tb, weights, "sfm")
    _expect(fused, (h1, w1, d), "fused similarity")
    out = head_forward(fused, weights, "head")
    _expect(out.heatmap, (h1, w1, 1), "heatmap")
    _expect(out.regression(), (h1, w1, 5), "regression")
    assert len(t.pseudo) == n and len(s.pseudo) == n
    return FrameOutput(out, fused, s_g, s_tb)


def _local_max(x, radius: int):
    h, w = x.shape[:2]
    p = np.pad(x, ((radius, radius), (radius, radius), (0, 0)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(p, (2 * radius + 1, 2 * radius + 1), axis=(0, 1))
    return win.max(axis=(-2, -1))[:h, :w]


def _dilate(mask):
    """3x3 binary dilation of an H x W x 1 mask."""
    m = np.pad(mask[..., 0] > 0, 1)
    h, w = mask.shape[:2]
    out = np.zeros((h, w), dtype=bool)
    for di in range(3):
        for dj in range(3):
            out |= m[di : di + h, dj : dj + w]
    return out[..., None].astype(np.float64)


def forward_diagnostic(pair: AlignedPair, prev_theta: float) -> FrameOutput:
    """Identity encoders: occupancy correlation plus a colour-weighted pseudo-point correlation."""
    grid = pair.grid
    h1, w1 = grid.bev_shape
    t, s = pair.template, pair.search
    occ_t = encoders.identity_geometry(t.raw, grid) * t.mask_r
    occ_s = encoders.identity_geometry(s.raw, grid)
    s_g = similarity.geometry_similarity(occ_t, occ_s)
    tex_t = encoders.identity_texture(t.pseudo)
    tex_s = encoders.identity_texture(s.pseudo)
    s_t = similarity.diagnostic_texture_similarity(tex_t.feats(0), t.mask_p, tex_s.feats(0))
    s_tb = similarity.pillarize_similarity(s_t, tex_s.coords(0), grid)
    # colour evidence inside the template footprint: flat over displacements that keep the
    # target's visible surface in the box, so the geometry term sets the peak within it
    s_tex = _local_max(similarity.geometry_similarity(_dilate(t.mask_r), s_tb), TEXTURE_POOL)
    fused = similarity.diagnostic_fuse(s_g, s_tex)
    _expect(fused, (h1, w1, 1), "fused similarity")
    return FrameOutput(diagnostic_output(fused, prev_theta, grid), fused, s_g, s_tex)


def forward_frame(pair: AlignedPair, cfg: TrackerConfig, weights, prev_box: Box7, seed: int = 0):
    """Run one frame; returns ``(Box4, score, FrameOutput)``."""
    if cfg.diagnostic:
        fo = forward_diagnostic(pair, prev_box.theta)
    else:
        fo = forward_learned(pair, weights, cfg.model, seed)
    box, score = decode_box(fo.head, prev_box, pair.grid)
    return box, score, fo
