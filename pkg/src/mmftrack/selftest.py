"""Oracle suites shared by ``mmftrack selftest`` and the acceptance tests.

Every check returns a :class:`CheckResult`; sizes are parameters so the CLI can
run a quick pass while the test-suite runs the full counts.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import interaction, oracles
from .geometry import Box7, Calib, grid_preset, project_points, rotated_iou_3d
from .head import (
    decode_box,
    encode_target,
    focal_loss,
    l1_reg_loss,
    target_output,
)
from .numerics import softmax
from .pipeline.metrics import aggregate_means

TABLE_I = {
    "success": {"car": (73.9, 6424), "pedestrian": (61.7, 6088), "van": (59.3, 1248), "cyclist": (75.9, 308)},
    "precision": {"car": (84.1, 6424), "pedestrian": (89.3, 6088), "van": (72.5, 1248), "cyclist": (95.0, 308)},
}
TABLE_I_MEANS = {"success": (67.4, 67.7), "precision": (85.6, 85.2)}


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name, fn, limit=None):
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if limit is not None and dt >= limit:
        ok, detail = False, f"{detail}; took {dt:.1f}s, limit {limit}s"
    return CheckResult(name, bool(ok), detail, dt)


def random_box(rng, spread=2.0) -> Box7:
    return Box7(
        *rng.uniform(-spread, spread, 2),
        rng.uniform(-0.5, 0.5),
        rng.uniform(0.5, 3.0),
        rng.uniform(0.5, 2.5),
        rng.uniform(0.5, 5.0),
        rng.uniform(-math.pi, math.pi),
    )


def random_weights(rng, shapes, scale=0.5):
    return {k: rng.normal(0, scale, s) for k, s in shapes.items()}


# ---------------------------------------------------------------------------


def check_metric_arithmetic():
    def run():
        worst = 0.0
        parts = []
        for row, (f_exp, c_exp) in TABLE_I_MEANS.items():
            f, c = aggregate_means(TABLE_I[row])
            worst = max(worst, abs(f - f_exp), abs(c - c_exp))
            parts.append(f"{row} F={f:.3f} C={c:.3f}")
        return worst <= 0.05, "; ".join(parts) + f"; max dev {worst:.3f}"

    return _timed("metric arithmetic", run, limit=1.0)


def check_geometry(n_pairs=200, seed=0, samples=500):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_pairs):
            a = random_box(rng, 1.0)
            b = random_box(rng, 1.0)
            worst = max(worst, abs(rotated_iou_3d(a, b) - oracles.iou_sampling_oracle(a, b, samples)))
        sq = Box7(0, 0, 0, 1, 1, 1, 0)
        turned = Box7(0, 0, 0, 1, 1, 1, math.pi / 4)
        v45 = rotated_iou_3d(sq, turned)
        ok = worst <= 0.01 and abs(v45 - 0.707) <= 0.01
        return ok, f"max |dIoU| {worst:.4f} over {n_pairs} pairs; 45deg case {v45:.4f}"

    return _timed("rotated IoU vs sampling oracle", run, limit=30.0)


def random_calib(rng, height=375, width=1242) -> Calib:
    f = rng.uniform(300, 900)
    k = np.array([[f, 0, width / 2, 0], [0, f, height / 2, 0], [0, 0, 1, 0]])
    ang = rng.uniform(-0.05, 0.05, 3)
    cx, sx = math.cos(ang[0]), math.sin(ang[0])
    cy, sy = math.cos(ang[1]), math.sin(ang[1])
    cz, sz = math.cos(ang[2]), math.sin(ang[2])
    jitter = (
        np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        @ np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        @ np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    )
    axes = np.array([[0.0, -1, 0], [0, 0, -1], [1, 0, 0]])
    tr = np.eye(4)
    tr[:3, :3] = jitter @ axes
    tr[:3, 3] = rng.uniform(-0.3, 0.3, 3)
    return Calib(k @ tr, height, width)


def check_projection(n_points=100_000, seed=0):
    def run():
        rng = np.random.default_rng(seed)
        calib = random_calib(rng)
        # sample directly in the frustum: pixel + depth, then lift
        uv = np.column_stack([rng.uniform(0, calib.width - 1, n_points), rng.uniform(0, calib.height - 1, n_points)])
        depth = rng.uniform(1.0, 80.0, n_points)
        pts = calib.unproject(uv, depth)
        proj = project_points(pts, calib)
        back = calib.unproject(proj.pixels, proj.depth)
        err = float(np.max(np.linalg.norm(back - pts, axis=1)))
        return err <= 1e-9 and bool(proj.in_view.all()), f"max round-trip error {err:.2e} m over {n_points} points"

    return _timed("projection round trip", run, limit=5.0)


def check_attention(n_instances=100, seed=0):
    def run():
        rng = np.random.default_rng(seed)
        worst_sum = 0.0
        worst = 0.0
        exact = True
        for _ in range(n_instances):
            x = rng.normal(0, 3, (rng.integers(1, 6), rng.integers(1, 9)))
            worst_sum = max(worst_sum, float(np.max(np.abs(softmax(x, -1).sum(-1) - 1))))
            d = int(rng.choice([2, 4]))
            nq, nk = rng.integers(1, 6, 2)
            h, w, kp = int(rng.integers(2, 4)), int(rng.integers(2, 4)), int(rng.integers(1, 4))
            ws = random_weights(rng, interaction.self_attention_shapes("s", d))
            ws.update(random_weights(rng, interaction.cross_attention_shapes("c", d)))
            ws.update(random_weights(rng, interaction.deform_attention_shapes("m", d, kp)))
            fq, pq = rng.normal(size=(nq, d)), rng.normal(size=(nq, d))
            fk, pk = rng.normal(size=(nk, d)), rng.normal(size=(nk, d))
            fm, pm = rng.normal(size=(h, w, d)), rng.normal(size=(h * w, d))
            got = interaction.self_attention_block(fq, pq, ws, "s")
            worst = max(worst, float(np.max(np.abs(got - oracles.attention_oracle(fq, pq, fq, pq, ws, "s")))))
            got = interaction.cross_attention_block(fq, pq, fk, pk, ws, "c")
            worst = max(worst, float(np.max(np.abs(got - oracles.attention_oracle(fq, pq, fk, pk, ws, "c")))))
            got = interaction.deform_attention_block(fm, pm, ws, "m", kp)
            worst = max(worst, float(np.max(np.abs(got - oracles.deform_attention_oracle(fm, pm, ws, "m", kp)))))
            # zeroed value path: the block must hand back its projected query untouched
            z = dict(ws)
            for name in ("s", "c", "m"):
                z[f"{name}.gamma.w"] = np.zeros_like(ws[f"{name}.gamma.w"])
                z[f"{name}.gamma.b"] = np.zeros_like(ws[f"{name}.gamma.b"])
                z[f"{name}.ln.beta"] = np.zeros_like(ws[f"{name}.ln.beta"])
            q_s = fq @ z["s.alpha.w"] + z["s.alpha.b"] + pq
            q_c = fq @ z["c.alpha.w"] + z["c.alpha.b"] + pq
            q_m = (fm.reshape(-1, d) @ z["m.alpha.w"] + z["m.alpha.b"] + pm).reshape(h, w, d)
            exact &= np.array_equal(interaction.self_attention_block(fq, pq, z, "s"), q_s)
            exact &= np.array_equal(interaction.cross_attention_block(fq, pq, fk, pk, z, "c"), q_c)
            exact &= np.array_equal(interaction.deform_attention_block(fm, pm, z, "m", kp), q_m)
        ok = worst_sum <= 1e-6 and worst <= 1e-8 and exact
        return ok, (
            f"softmax row-sum dev {worst_sum:.1e}; max block dev {worst:.1e} over {n_instances} instances; "
            f"zeroed-value residual exact: {exact}"
        )

    return _timed("attention blocks vs loop oracles", run)


def check_propagation(n_instances=100, seed=0):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            nc, nf, d = int(rng.integers(1, 12)), int(rng.integers(1, 20)), int(rng.integers(1, 6))
            cc = rng.normal(size=(nc, 3))
            cf = rng.normal(size=(nc, d))
            fc = rng.normal(size=(nf, 3))
            got = interaction.interpolate_3nn(cc, cf, fc)
            worst = max(worst, float(np.max(np.abs(got - oracles.interpolate_oracle(cc, cf, fc)))))
        cc = rng.normal(size=(6, 3))
        cf = rng.normal(size=(6, 4))
        hit = interaction.interpolate_3nn(cc, cf, cc[2:3])[0]
        coincident = float(np.max(np.abs(hit - cf[2])))
        ok = worst <= 1e-9 and coincident <= 1e-9
        return ok, f"max dev {worst:.1e} over {n_instances} instances; coincident-seed dev {coincident:.1e}"

    return _timed("3-NN propagation vs exhaustive oracle", run)


def _grad_ok(analytic, numeric, floor=1e-3):
    """Largest relative deviation, measured against ``max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_loss_gradients(n_instances=50, seed=0):
    def run():
        rng = np.random.default_rng(seed)
        worst_f = 0.0
        worst_l = 0.0
        for _ in range(n_instances):
            h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            gt = rng.uniform(0, 0.95, (h, w, 1))
            gt[rng.integers(h), rng.integers(w), 0] = 1.0
            x = rng.normal(0, 2, (h, w, 1))
            _, g = focal_loss(x, gt)
            num = oracles.central_difference(lambda v: focal_loss(v, gt)[0], x)
            worst_f = max(worst_f, _grad_ok(g, num))
            reg = rng.normal(size=(h, w, 5))
            tgt = rng.normal(size=5)
            cell = (int(rng.integers(h)), int(rng.integers(w)))
            # keep every |pred - target| clear of the kink
            reg[cell] = tgt + np.where(rng.random(5) < 0.5, -1, 1) * rng.uniform(0.01, 1, 5)
            _, g = l1_reg_loss(reg, tgt, cell)
            num = oracles.central_difference(lambda v: l1_reg_loss(v, tgt, cell)[0], reg)
            worst_l = max(worst_l, _grad_ok(g, num))
        hand, _ = focal_loss(np.array([[[0.0]]]), np.array([[[1.0]]]), alpha=2.0)
        hand_dev = abs(hand - 0.25 * math.log(2))
        ok = worst_f <= 1e-4 and worst_l <= 1e-4 and hand_dev <= 1e-9
        return ok, f"max rel grad error focal {worst_f:.1e}, l1 {worst_l:.1e}; hand case dev {hand_dev:.1e}"

    return _timed("loss gradients vs central differences", run)


def check_encode_decode(n_boxes=100, seed=0):
    def run():
        rng = np.random.default_rng(seed)
        grid = grid_preset("car")
        worst = 0.0
        for _ in range(n_boxes):
            prev = Box7(*rng.uniform(-30, 30, 2), rng.uniform(-2, 1), 1.8, 1.6, 4.2, rng.uniform(-math.pi, math.pi))
            r = grid.xy_range * 0.999
            gt = Box7(
                prev.x + rng.uniform(-r, r),
                prev.y + rng.uniform(-r, r),
                prev.z + rng.uniform(-1, 1),
                1.8,
                1.6,
                4.2,
                rng.uniform(-math.pi, math.pi),
            )
            cell, target = encode_target(gt, prev.center, grid)
            box, _ = decode_box(target_output(cell, target, grid), prev, grid)
            dth = abs(math.remainder(box.theta - gt.theta, 2 * math.pi))
            worst = max(worst, abs(box.x - gt.x), abs(box.y - gt.y), abs(box.z - gt.z), dth)
        return worst <= 1e-9, f"max centre/z/theta error {worst:.1e} over {n_boxes} boxes"

    return _timed("encode/decode round trip", run)


def all_checks(quick: bool = False) -> list[CheckResult]:
    if quick:
        return [
            check_metric_arithmetic(),
            check_geometry(40, samples=400),
            check_projection(10_000),
            check_attention(10),
            check_propagation(20),
            check_loss_gradients(10),
            check_encode_decode(100),
        ]
    return [
        check_metric_arithmetic(),
        check_geometry(),
        check_projection(),
        check_attention(),
        check_propagation(),
        check_loss_gradients(),
        check_encode_decode(),
    ]
