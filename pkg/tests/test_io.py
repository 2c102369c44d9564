import json

import numpy as np
import pytest

from mmftrack.geometry import Box7
from mmftrack.pipeline.io import (
    CalibError,
    MalformedImageError,
    lidar_to_image_matrix,
    read_gt,
    read_image,
    read_points,
    read_ppm,
    read_sequence,
    sig9,
    write_calib,
    write_gt,
    write_json,
    write_points,
    write_ppm,
    write_sequence,
)
from mmftrack.pipeline.synthetic import SynthConfig, camera_matrices, generate_synthetic


def test_points(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(np.arange(8, dtype="<f4").tobytes())
    pts = read_points(p)
    assert pts.shape == (2, 4) and pts[1].tolist() == [4, 5, 6, 7]
    p.write_bytes(b"\0" * 30)
    with pytest.raises(ValueError):
        read_points(p)
    write_points(p, np.zeros((0, 4)))
    assert read_points(p).shape == (0, 4)


def test_ppm(tmp_path):
    p = tmp_path / "x.ppm"
    data = bytes(range(24))
    p.write_bytes(b"P6 4 2 255\n" + data)
    img = read_ppm(p)
    assert img.shape == (2, 4, 3)
    assert np.array_equal(img.ravel(), np.arange(24) / 255)
    p.write_bytes(b"P6\n# comment\n1 1\n65535\n" + b"\xff\xff\x00\x00\x80\x00")
    assert read_ppm(p)[0, 0].tolist() == pytest.approx([1.0, 0.0, 0x8000 / 65535])
    for bad in (b"P5 4 2 255\n" + data, b"P6 4 2\n", b"P6 4 x 255\n" + data, b"P6 4 2 255\n" + data[:10]):
        p.write_bytes(bad)
        with pytest.raises(MalformedImageError):
            read_ppm(p)


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (3, 5, 3)) / 255
    write_ppm(tmp_path / "i.ppm", img)
    assert np.array_equal(read_image(tmp_path / "i.ppm"), img)
    np.save(tmp_path / "i.npy", img)
    assert np.array_equal(read_image(tmp_path / "i.npy"), img)
    np.save(tmp_path / "j.npy", img[..., 0])
    with pytest.raises(MalformedImageError):
        read_image(tmp_path / "j.npy")


def test_calib(tmp_path, rng):
    p2, tr = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    write_calib(tmp_path / "c.txt", p2, tr)
    tr4 = np.vstack([tr, [0, 0, 0, 1]])
    assert np.allclose(lidar_to_image_matrix(tmp_path / "c.txt"), p2 @ tr4, rtol=1e-8)
    # alternative key spellings
    text = (tmp_path / "c.txt").read_text().replace("R0_rect", "R_rect").replace("Tr_velo_to_cam", "Tr_velo_cam")
    (tmp_path / "d.txt").write_text("P0: 1 2 3\n" + text)
    assert np.allclose(lidar_to_image_matrix(tmp_path / "d.txt"), p2 @ tr4, rtol=1e-8)
    (tmp_path / "e.txt").write_text("P2: " + " ".join(["1"] * 12) + "\n")
    with pytest.raises(CalibError):
        lidar_to_image_matrix(tmp_path / "e.txt")


def test_gt_round_trip(tmp_path):
    boxes = [Box7(1, 2, 3, 1.5, 1.6, 4.0, 0.1), Box7(1.1, 2.2, 3, 1.5, 1.6, 4.0, -0.1)]
    write_gt(tmp_path / "gt.txt", boxes)
    back = read_gt(tmp_path / "gt.txt")
    assert [back[0], back[1]] == boxes
    (tmp_path / "bad.txt").write_text("0 1 2 3\n")
    with pytest.raises(ValueError):
        read_gt(tmp_path / "bad.txt")


def test_sequence_round_trip(tmp_path):
    cfg = SynthConfig(n_frames=2, image_size=(48, 96), focal=80)
    syn = generate_synthetic(cfg, seed=1, name="s1")
    k, tr = camera_matrices(cfg)
    write_sequence(syn.sequence, tmp_path / "s1", k, tr)
    seq = read_sequence(tmp_path / "s1")
    assert seq.name == "s1" and seq.category == "car" and len(seq) == 2
    for a, b in zip(seq.frames, syn.sequence.frames):
        assert np.allclose(a.points, b.points, atol=1e-5)
        assert np.array_equal(a.image, b.image)
        assert np.allclose(a.calib.lidar_to_image, b.calib.lidar_to_image, rtol=1e-8, atol=1e-9)
    assert np.allclose([g.x for g in seq.gt], [g.x for g in syn.sequence.gt])


def test_json_sig9(tmp_path):
    assert sig9(1.23456789012) == 1.23456789
    write_json(tmp_path / "o.json", {"a": [np.float64(2 / 3), np.int64(3)], "b": "x"})
    assert json.loads((tmp_path / "o.json").read_text()) == {"a": [0.666666667, 3], "b": "x"}
