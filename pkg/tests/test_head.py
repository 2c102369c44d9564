import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmftrack import oracles
from mmftrack.geometry import Box7, grid_preset
from mmftrack.head import (
    LossWeights,
    decode_box,
    diagnostic_output,
    encode_target,
    focal_loss,
    head_forward,
    head_param_shapes,
    in_grid,
    l1_reg_loss,
    render_gt_heatmap,
    target_output,
    total_loss,
)

CAR = grid_preset("car")


def test_head_shapes(rng):
    w = {k: rng.normal(0, 0.1, s) for k, s in head_param_shapes("head", 6, 4).items()}
    out = head_forward(rng.normal(size=(32, 32, 6)), w)
    assert out.heatmap.shape == (32, 32, 1) and out.regression().shape == (32, 32, 5)
    with pytest.raises(KeyError):
        head_forward(np.zeros((4, 4, 6)), {})


def test_focal_hand_case():
    loss, _ = focal_loss(np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    assert loss == pytest.approx(0.25 * math.log(2), abs=1e-12)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_focal_matches_oracle_and_gradient(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 0.95, (3, 4, 1))
    gt[1, 2, 0] = 1.0
    x = rng.normal(0, 2, (3, 4, 1))
    loss, grad = focal_loss(x, gt)
    assert loss == pytest.approx(oracles.focal_oracle(x, gt), rel=1e-10)
    num = oracles.central_difference(lambda v: focal_loss(v, gt)[0], x)
    assert np.allclose(grad, num, rtol=1e-4, atol=1e-7)


def test_l1_loss_and_gradient(rng):
    reg = rng.normal(size=(4, 4, 5))
    tgt = reg[2, 1] + np.array([0.3, -0.2, 0.1, -0.4, 0.5])
    loss, grad = l1_reg_loss(reg, tgt, (2, 1))
    assert loss == pytest.approx(0.3)
    num = oracles.central_difference(lambda v: l1_reg_loss(v, tgt, (2, 1))[0], reg)
    assert np.allclose(grad, num, atol=1e-7)
    with pytest.raises(IndexError):
        l1_reg_loss(reg, tgt, (4, 0))
    with pytest.raises(ValueError):
        focal_loss(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)))


def test_total_loss_and_weights():
    assert total_loss(1.0, 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        LossWeights(lambda_reg=0)


def test_heatmap_peak():
    heat = render_gt_heatmap([0.31, -0.5], CAR, (1.6, 4.2))
    i, j = CAR.cell_of(np.array([0.31, -0.5]))[0]
    assert heat[i, j, 0] == 1.0 and heat.max() == 1.0 and np.count_nonzero(heat == 1.0) == 1
    assert not render_gt_heatmap([10.0, 0.0], CAR).any()


@settings(max_examples=50)
@given(st.floats(-3.19, 3.19), st.floats(-3.19, 3.19), st.floats(-1, 1), st.floats(-3.1, 3.1))
def test_encode_decode_round_trip(dx, dy, dz, theta):
    prev = Box7(12.0, -4.0, -0.8, 1.6, 1.8, 4.2, 0.3)
    gt = Box7(prev.x + dx, prev.y + dy, prev.z + dz, 1.6, 1.8, 4.2, theta)
    cell, target = encode_target(gt, prev.center, CAR)
    assert in_grid(cell, CAR) and np.all(np.abs(target[:2]) <= 0.5 + 1e-9)
    box, score = decode_box(target_output(cell, target, CAR), prev, CAR)
    assert abs(box.x - gt.x) < 1e-9 and abs(box.y - gt.y) < 1e-9 and abs(box.z - gt.z) < 1e-9
    assert abs(math.remainder(box.theta - theta, 2 * math.pi)) < 1e-9 and 0 < score <= 1


def test_diagnostic_output_subcell():
    score = np.zeros((8, 8, 1))
    score[4, 4] = 1.0
    score[5, 4] = 0.5
    score[3, 4] = 0.5
    out = diagnostic_output(score, 0.7, CAR)
    assert out.offset[4, 4].tolist() == [-0.5, -0.5]
    score[5, 4] = 0.8
    out = diagnostic_output(score, 0.7, CAR)
    assert -0.5 < out.offset[4, 4, 0] < 0.0
    assert math.atan2(*out.rot[4, 4]) == pytest.approx(0.7)
