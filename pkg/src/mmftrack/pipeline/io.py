"""KITTI-style ingestion, sequence directories and JSON result files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..alignment import SceneFrame
from ..geometry import Box4, Box7, Calib
from .tracker import Sequence, TrackResult


class MalformedImageError(ValueError):
    pass


class CalibError(ValueError):
    pass


def sig9(x: float) -> float:
    """Round to 9 significant digits for text output."""
    return float(f"{float(x):.9g}")


# ---------------------------------------------------------------------------
# points


def read_points(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) % 16:
        raise ValueError(f"{path}: {len(data)} bytes is not a whole number of float32 quadruples")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)


def write_points(path, points) -> None:
    Path(path).write_bytes(np.asarray(points, dtype="<f4").reshape(-1, 4).tobytes())


# ---------------------------------------------------------------------------
# images


def _ppm_header(data: bytes):
    """Return (width, height, maxval, offset of the pixel data)."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedImageError("pixmap header ends early")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise MalformedImageError(f"expected magic P6, got {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedImageError("non-numeric pixmap header field") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise MalformedImageError(f"bad pixmap dimensions {width}x{height}, maxval {maxval}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MalformedImageError("missing whitespace after the pixmap header")
    return width, height, maxval, pos + 1


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    width, height, maxval, off = _ppm_header(data)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * 3 * dtype.itemsize
    if len(data) - off < need:
        raise MalformedImageError(f"pixmap holds {len(data) - off} data bytes, expected {need}")
    px = np.frombuffer(data, dtype=dtype, count=width * height * 3, offset=off)
    return px.reshape(height, width, 3).astype(np.float64) / maxval


def write_ppm(path, image) -> None:
    img = np.asarray(image, dtype=np.float64)
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = q.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        img = np.load(path, allow_pickle=False).astype(np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise MalformedImageError(f"{path}: expected an H x W x 3 tensor, got {img.shape}")
        return img
    return read_ppm(path)


# ---------------------------------------------------------------------------
# calibration


def parse_calib_file(path) -> dict[str, np.ndarray]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            out[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError:
            continue
    return out


def _pick(values: dict, keys, size: int, path) -> np.ndarray:
    for k in keys:
        if k in values and values[k].size == size:
            return values[k]
    raise CalibError(f"{path}: missing calibration key {keys[0]}")


def _homog(m: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[: m.shape[0], : m.shape[1]] = m
    return out


def lidar_to_image_matrix(path) -> np.ndarray:
    """``P2 @ R0_rect @ Tr_velo_to_cam`` as a 3x4 matrix."""
    v = parse_calib_file(path)
    p2 = _pick(v, ("P2",), 12, path).reshape(3, 4)
    r0 = _pick(v, ("R0_rect", "R_rect", "R0"), 9, path).reshape(3, 3)
    tr = _pick(v, ("Tr_velo_to_cam", "Tr_velo_cam"), 12, path).reshape(3, 4)
    return p2 @ _homog(r0) @ _homog(tr)


def write_calib(path, p2, tr, r0=None) -> None:
    r0 = np.eye(3) if r0 is None else np.asarray(r0)
    lines = []
    for key, m in (("P2", p2), ("R0_rect", r0), ("Tr_velo_to_cam", tr)):
        lines.append(f"{key}: " + " ".join(f"{x:.9g}" for x in np.asarray(m, dtype=np.float64).ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_kitti_frame(velodyne_path, calib_path, image_path, frame_id: int = 0) -> SceneFrame:
    points = read_points(velodyne_path)
    image = read_image(image_path)
    calib = Calib(lidar_to_image_matrix(calib_path), image.shape[0], image.shape[1])
    return SceneFrame(points, image, calib, frame_id)


# ---------------------------------------------------------------------------
# sequence directories


def read_gt(path) -> dict[int, Box7]:
    boxes = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 8:
            raise ValueError(f"{path}: gt lines need 8 fields, got {len(parts)}")
        x, y, z, w, h, l, theta = (float(p) for p in parts[1:])
        boxes[int(parts[0])] = Box7(x, y, z, w, h, l, theta)
    return boxes


def write_gt(path, boxes) -> None:
    lines = []
    for f, b in enumerate(boxes):
        vals = (b.x, b.y, b.z, b.w, b.h, b.l, b.theta)
        lines.append(f"{f} " + " ".join(f"{v:.9g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_sequence(seq: Sequence, out_dir, p2, tr) -> Path:
    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "image").mkdir(parents=True, exist_ok=True)
    for fr in seq.frames:
        write_points(out / "velodyne" / f"{fr.frame_id:06d}.bin", fr.points)
        write_ppm(out / "image" / f"{fr.frame_id:06d}.ppm", fr.image)
    write_calib(out / "calib.txt", p2, tr)
    if seq.gt is not None:
        write_gt(out / "gt.txt", seq.gt)
    (out / "meta.json").write_text(json.dumps({"name": seq.name, "category": seq.category}, indent=2) + "\n")
    return out


def read_sequence(seq_dir, category: str | None = None) -> Sequence:
    d = Path(seq_dir)
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    bins = sorted((d / "velodyne").glob("*.bin"))
    if not bins:
        raise FileNotFoundError(f"{d}: no velodyne/*.bin frames")
    frames = []
    for b in bins:
        fid = int(b.stem)
        img = d / "image" / f"{b.stem}.ppm"
        if not img.exists():
            img = d / "image" / f"{b.stem}.npy"
        frames.append(read_kitti_frame(b, d / "calib.txt", img, fid))
    gt = None
    if (d / "gt.txt").exists():
        by_frame = read_gt(d / "gt.txt")
        missing = [f.frame_id for f in frames if f.frame_id not in by_frame]
        if missing:
            raise ValueError(f"{d}: gt.txt lacks frames {missing[:5]}")
        gt = tuple(by_frame[f.frame_id] for f in frames)
    return Sequence(tuple(frames), gt, category or meta.get("category", "car"), meta.get("name", d.name))


# ---------------------------------------------------------------------------
# results / metrics


def result_to_dict(res: TrackResult, extra: dict | None = None) -> dict:
    d = {
        "sequence": res.name,
        "category": res.category,
        "init": {k: sig9(v) for k, v in zip("x y z w h l theta".split(), res.init.to_array())},
        "frames": [
            {
                "frame": fr.frame,
                "x": sig9(fr.box.x),
                "y": sig9(fr.box.y),
                "z": sig9(fr.box.z),
                "theta": sig9(fr.box.theta),
                "score": sig9(fr.score),
                "coasted": bool(fr.coasted),
                "time_ms": sig9(fr.time_ms),
            }
            for fr in res.frames
        ],
        "digest": res.digest(),
    }
    if extra:
        d.update(extra)
    return d


def load_results(path) -> list[dict]:
    data = json.loads(Path(path).read_text())
    return data["sequences"] if "sequences" in data else [data]


def predicted_boxes(entry: dict) -> dict[int, Box4]:
    return {int(f["frame"]): Box4(f["x"], f["y"], f["z"], f["theta"]) for f in entry["frames"]}


def write_json(path, obj) -> None:
    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (float, np.floating)):
            return sig9(o)
        if isinstance(o, np.integer):
            return int(o)
        return o

    Path(path).write_text(json.dumps(clean(obj), indent=2) + "\n")
