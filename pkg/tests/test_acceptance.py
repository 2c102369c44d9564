"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mmftrack import selftest
from mmftrack.geometry import center_distance
from mmftrack.pipeline.cli import main
from mmftrack.pipeline.config import TrackerConfig
from mmftrack.pipeline.synthetic import SynthConfig, generate_synthetic
from mmftrack.pipeline.tracker import track_sequence
from mmftrack.weights import LengthMismatchError, WeightFileError, init_store, load_store, save_store


def report(number, result):
    line = f"criterion {number:2d} {result.line()}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.ok, line


def test_c01_metric_arithmetic():
    report(1, selftest.check_metric_arithmetic())


def test_c02_geometry_oracles():
    report(2, selftest.check_geometry(200, samples=500))


def test_c03_projection_round_trip():
    report(3, selftest.check_projection(100_000))


def test_c04_attention_oracles():
    report(4, selftest.check_attention(100))


def test_c05_propagation_oracle():
    report(5, selftest.check_propagation(100))


def test_c06_loss_gradients():
    report(6, selftest.check_loss_gradients(50))


def test_c07_encode_decode():
    report(7, selftest.check_encode_decode(100))


def _cell(xy, center, grid):
    # same cell convention the diagnostic decoder reads positions from
    return tuple(np.rint((np.asarray(xy) - np.asarray(center[:2]) + grid.xy_range) / grid.cell_size[0]).astype(int))


def test_c08_diagnostic_tracking():
    def run():
        cfg = TrackerConfig(diagnostic=True)
        grid = cfg.grid
        h1, w1 = grid.bev_shape
        worst, frames, sep_fail, outside = 0.0, 0, 0, 0
        for seed in range(100):
            syn = generate_synthetic(SynthConfig(n_frames=20, max_speed=0.5, n_distractors=1, distractor_offset=2.4), seed)
            seq = syn.sequence
            res = track_sequence(seq, seq.gt[0], cfg, keep_maps=True)
            for k, (fr, pred, gt) in enumerate(zip(res.frames, res.boxes(), seq.gt[1:])):
                frames += 1
                worst = max(worst, center_distance(pred, gt))
                score = res.fused_maps[k].mean(axis=-1)
                ct = _cell([gt.x, gt.y], fr.search_center, grid)
                dis = syn.distractors[k + 1][0]
                cd = _cell([dis.x, dis.y], fr.search_center, grid)
                if not (0 <= cd[0] < h1 and 0 <= cd[1] < w1):
                    outside += 1
                    continue
                sep_fail += not score[ct] > score[cd]
        ok = worst <= 0.2 and sep_fail == 0 and outside == 0
        return ok, (
            f"max centre error {worst:.3f} m over {frames} frames; separation failures {sep_fail}; "
            f"distractor outside search grid {outside}"
        )

    report(8, selftest._timed("diagnostic tracking, 100 seeds with distractor", run, limit=300.0))


def test_c09_determinism_and_serialization(tmp_path):
    def run():
        syn = generate_synthetic(SynthConfig(n_frames=3, n_distractors=1, distractor_offset=2.4), seed=21)
        seq = syn.sequence
        cfg = TrackerConfig(seed=5)
        ws = init_store(cfg, 5)
        a = track_sequence(seq, seq.gt[0], cfg, ws).digest()
        b = track_sequence(seq, seq.gt[0], cfg, init_store(cfg, 5)).digest()
        path = tmp_path / "w.mmfw"
        save_store(ws, path)
        back = load_store(path)
        exact = list(back.keys()) == list(ws.keys()) and all(
            np.array_equal(back[k], ws[k].astype(np.float32).astype(np.float64)) for k in ws.keys()
        )
        save_store(back, tmp_path / "w2.mmfw")
        same_bytes = (tmp_path / "w2.mmfw").read_bytes() == path.read_bytes()
        data = path.read_bytes()
        rejected = 0
        for cut in (2, 9, len(data) // 2, len(data) - 1):
            (tmp_path / "t.mmfw").write_bytes(data[:cut])
            try:
                load_store(tmp_path / "t.mmfw")
            except WeightFileError:
                rejected += 1
        (tmp_path / "t.mmfw").write_bytes(data[:-3])
        try:
            load_store(tmp_path / "t.mmfw")
            length_err = False
        except LengthMismatchError:
            length_err = True
        ok = a == b and exact and same_bytes and rejected == 4 and length_err
        return ok, (
            f"digests equal {a == b}; round trip bit-exact {exact and same_bytes}; "
            f"truncations rejected {rejected}/4, length error {length_err}"
        )

    report(9, selftest._timed("determinism and weight serialization", run))


def test_c10_cli_smoke(tmp_path, capsys):
    def run():
        (tmp_path / "cfg.json").write_text(json.dumps({"synth": {"n_frames": 4}}))
        cfg = str(tmp_path / "cfg.json")
        codes = [
            main(["init-weights", "--config", cfg, "--seed", "0", "--out", str(tmp_path / "w.mmfw")]),
            main(["synth", "--config", cfg, "--seed", "0", "--out", str(tmp_path / "seq")]),
            main(["track", "--seq", str(tmp_path / "seq"), "--weights", str(tmp_path / "w.mmfw"), "--config", cfg,
                  "--strategy", "first-gt+prev", "--out", str(tmp_path / "results.json")]),
            main(["eval", "--pred", str(tmp_path / "results.json"), "--gt", str(tmp_path / "seq"),
                  "--out", str(tmp_path / "metrics.json")]),
        ]
        res = json.loads((tmp_path / "results.json").read_text())
        finite = all(math.isfinite(f[k]) for f in res["frames"] for k in ("x", "y", "z", "theta", "score"))
        m = json.loads((tmp_path / "metrics.json").read_text())
        values = [v for c in m["per_category"].values() for v in (c["success"], c["precision"])]
        values += [m["f_mean"]["success"], m["f_mean"]["precision"], m["c_mean"]["success"], m["c_mean"]["precision"]]
        in_range = all(0.0 <= v <= 100.0 for v in values)
        ok = codes == [0, 0, 0, 0] and finite and in_range and len(res["frames"]) == 3
        return ok, f"exit codes {codes}; outputs finite {finite}; metrics in [0, 100] {in_range}"

    report(10, selftest._timed("init-weights, synth, track, eval chain", run))
