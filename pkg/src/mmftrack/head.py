"""Centre-based prediction head, training losses and box decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .geometry import Box4, Box7, GridSpec
from .numerics import as_tensor, check_finite, conv2d, relu, sigmoid

BRANCHES = (("heatmap", 1), ("offset", 2), ("z", 1), ("rot", 2))


@dataclass(frozen=True)
class HeadOutput:
    heatmap: np.ndarray  # H1 x W1 x 1 logits
    offset: np.ndarray  # H1 x W1 x 2, cells
    z: np.ndarray  # H1 x W1 x 1, metres relative to the search origin
    rot: np.ndarray  # H1 x W1 x 2, (sin, cos)

    def regression(self) -> np.ndarray:
        """Stacked regression channels: offset x, offset y, z, sin, cos."""
        return np.concatenate([self.offset, self.z, self.rot], axis=-1)


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_reg: float = 2.0
    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_reg, self.alpha, self.beta) <= 0:
            raise ValueError("loss weights and focal parameters must be positive")


def head_param_shapes(name: str, d: int, hidden: int) -> dict:
    s = {}
    for branch, out in BRANCHES:
        s[f"{name}.{branch}.conv0.w"] = (3, 3, d, hidden)
        s[f"{name}.{branch}.conv0.b"] = (hidden,)
        s[f"{name}.{branch}.conv1.w"] = (3, 3, hidden, out)
        s[f"{name}.{branch}.conv1.b"] = (out,)
    return s


def head_forward(s, weights: Mapping[str, np.ndarray], name: str = "head") -> HeadOutput:
    s = as_tensor(s)
    outs = {}
    for branch, _ in BRANCHES:
        p = f"{name}.{branch}"
        try:
            x = relu(conv2d(s, weights[f"{p}.conv0.w"], 1, 1, weights[f"{p}.conv0.b"]))
            outs[branch] = conv2d(x, weights[f"{p}.conv1.w"], 1, 1, weights[f"{p}.conv1.b"])
        except KeyError as exc:
            raise KeyError(f"missing parameter {exc.args[0]}") from None
    return HeadOutput(**outs)


# ---------------------------------------------------------------------------
# targets


def gaussian_radius(height: float, width: float, min_overlap: float = 0.1) -> float:
    """CornerNet/CenterPoint radius so a shifted box keeps ``min_overlap`` IoU."""
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1**2 - 4 * c1)) / 2
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2**2 - 16 * c2)) / 2
    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3**2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def render_gt_heatmap(center_xy, grid: GridSpec, size_wl=(0.0, 0.0), min_radius: int = 2) -> np.ndarray:
    """Gaussian bump peaking at exactly 1 on the cell holding ``center_xy`` (local metres)."""
    h1, w1 = grid.bev_shape
    heat = np.zeros((h1, w1, 1))
    ci, cj = grid.cell_of(np.asarray(center_xy, dtype=np.float64)[:2])[0]
    if not (0 <= ci < h1 and 0 <= cj < w1):
        return heat
    w, l = size_wl
    cx, cy = grid.cell_size
    radius = min_radius
    if w > 0 and l > 0:
        radius = max(min_radius, int(gaussian_radius(l / cx, w / cy)))
    sigma = (2 * radius + 1) / 6.0
    ii, jj = np.meshgrid(np.arange(h1), np.arange(w1), indexing="ij")
    di, dj = ii - ci, jj - cj
    g = np.exp(-(di**2 + dj**2) / (2 * sigma**2))
    g[(np.abs(di) > radius) | (np.abs(dj) > radius)] = 0.0
    heat[..., 0] = g
    return heat


def encode_target(box, search_center, grid: GridSpec):
    """Cell index and 5-channel regression target of a box in the search frame."""
    local = np.array([box.x, box.y]) - np.asarray(search_center, dtype=np.float64)[:2]
    cs = np.array(grid.cell_size)
    pos = (local + grid.xy_range) / cs
    cell = np.floor(pos).astype(np.int64)
    off = pos - (cell + 0.5)
    target = np.array([off[0], off[1], box.z - search_center[2], math.sin(box.theta), math.cos(box.theta)])
    return (int(cell[0]), int(cell[1])), target


def in_grid(cell, grid: GridSpec) -> bool:
    h1, w1 = grid.bev_shape
    return 0 <= cell[0] < h1 and 0 <= cell[1] < w1


# ---------------------------------------------------------------------------
# losses


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def focal_loss(logits, gt, alpha: float = 2.0, beta: float = 4.0):
    """Penalty-reduced focal loss on heatmap logits and its gradient w.r.t. the logits."""
    x = as_tensor(logits)
    g = as_tensor(gt)
    if x.shape != g.shape:
        raise ValueError(f"logits {x.shape} and targets {g.shape} differ in shape")
    p = sigmoid(x)
    log_p = _log_sigmoid(x)
    log_1mp = _log_sigmoid(-x)
    pos = g == 1.0
    n_pos = max(1.0, float(pos.sum()))
    neg_w = (1.0 - g) ** beta
    loss_pos = -((1.0 - p) ** alpha) * log_p
    loss_neg = -neg_w * p**alpha * log_1mp
    loss = np.where(pos, loss_pos, loss_neg).sum() / n_pos
    # d/dx using dp/dx = p (1 - p)
    grad_pos = alpha * (1.0 - p) ** alpha * p * log_p - (1.0 - p) ** (alpha + 1)
    grad_neg = -neg_w * (alpha * p**alpha * (1.0 - p) * log_1mp - p ** (alpha + 1))
    grad = np.where(pos, grad_pos, grad_neg) / n_pos
    return float(loss), check_finite(grad, "focal_loss grad")


def l1_reg_loss(regression, target, cell):
    """Mean |pred - target| over the 5 regression channels at the target cell."""
    r = as_tensor(regression)
    t = as_tensor(target)
    i, j = cell
    if not (0 <= i < r.shape[0] and 0 <= j < r.shape[1]):
        raise IndexError(f"target cell {cell} outside the {r.shape[:2]} grid")
    diff = r[i, j] - t
    n = len(t)
    grad = np.zeros_like(r)
    grad[i, j] = np.sign(diff) / n
    return float(np.abs(diff).sum() / n), grad


def total_loss(cls: float, reg: float, lw: LossWeights = LossWeights()) -> float:
    return lw.lambda_cls * cls + lw.lambda_reg * reg


# ---------------------------------------------------------------------------
# decoding


def peak_cell(heatmap) -> tuple[int, int]:
    hm = as_tensor(heatmap)[..., 0]
    flat = int(np.argmax(hm))
    return divmod(flat, hm.shape[1])


def decode_box(out: HeadOutput, prev_box: Box7, grid: GridSpec):
    """Best cell of the heatmap -> world Box4 in the crop centred on ``prev_box``.

    Returns ``(Box4, score)`` where score is the peak's sigmoid probability.
    """
    i, j = peak_cell(out.heatmap)
    cx, cy = grid.cell_size
    local_x = -grid.xy_range + (i + 0.5 + out.offset[i, j, 0]) * cx
    local_y = -grid.xy_range + (j + 0.5 + out.offset[i, j, 1]) * cy
    theta = math.atan2(out.rot[i, j, 0], out.rot[i, j, 1])
    box = Box4(prev_box.x + local_x, prev_box.y + local_y, prev_box.z + out.z[i, j, 0], theta)
    score = float(sigmoid(np.array([out.heatmap[i, j, 0]]))[0])
    return box, score


def target_output(cell, target, grid: GridSpec) -> HeadOutput:
    """One-hot head output reproducing ``target`` at ``cell`` (inverse of encoding)."""
    h1, w1 = grid.bev_shape
    hm = np.full((h1, w1, 1), -10.0)
    hm[cell[0], cell[1], 0] = 10.0
    reg = np.zeros((h1, w1, 5))
    reg[cell[0], cell[1]] = target
    return HeadOutput(hm, reg[..., :2], reg[..., 2:3], reg[..., 3:5])


def diagnostic_output(fused, prev_theta: float, grid: GridSpec) -> HeadOutput:
    """Head stand-in for the diagnostic mode, read directly off the fused similarity.

    The correlation surface scores displacements relative to cell ``H//2`` whose
    centre sits half a cell past the template origin, hence the -0.5 offset; a
    parabolic fit around the peak adds the sub-cell part.
    """
    score = as_tensor(fused).mean(axis=-1)
    h1, w1 = score.shape
    i, j = divmod(int(np.argmax(score)), w1)

    def vertex(a, b, c):
        den = a - 2 * b + c
        if den >= 0:
            return 0.0
        return float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))

    di = vertex(score[i - 1, j], score[i, j], score[i + 1, j]) if 0 < i < h1 - 1 else 0.0
    dj = vertex(score[i, j - 1], score[i, j], score[i, j + 1]) if 0 < j < w1 - 1 else 0.0
    off = np.zeros((h1, w1, 2))
    off[..., 0] = -0.5
    off[..., 1] = -0.5
    off[i, j] += (di, dj)
    rot = np.zeros((h1, w1, 2))
    rot[..., 0] = math.sin(prev_theta)
    rot[..., 1] = math.cos(prev_theta)
    return HeadOutput(score[..., None], off, np.zeros((h1, w1, 1)), rot)
