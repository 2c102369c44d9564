"""Named parameter store, deterministic initialisation and the MMFW file format.

File layout (little-endian)::

    b"MMFW" | u16 version | u32 count
    count x ( u16 name_len | utf-8 name | u8 rank | rank x u32 extent )
    row-major float32 blobs, in manifest order
    u64 FNV-1a checksum of all blob bytes
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

MAGIC = b"MMFW"
VERSION = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class WeightFileError(ValueError):
    """Base class for MMFW read failures."""


class MalformedFileError(WeightFileError):
    pass


class UnsupportedVersionError(WeightFileError):
    pass


class LengthMismatchError(WeightFileError):
    pass


class IntegrityError(WeightFileError):
    pass


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def splitmix64_stream(state: int, n: int) -> np.ndarray:
    """First ``n`` outputs of splitmix64 seeded with ``state``."""
    with np.errstate(over="ignore"):
        k = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(state & _MASK64) + k * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def _stream_uniform(name: str, seed: int, n: int) -> np.ndarray:
    state = fnv1a64(name.encode("utf-8")) ^ (seed & _MASK64)
    bits = splitmix64_stream(state, n)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def param_kind(name: str) -> str:
    leaf = name.rsplit(".", 1)[-1]
    return {"w": "kernel", "b": "bias", "gamma": "ln_gamma", "beta": "ln_beta"}.get(leaf, "kernel")


class WeightStore(Mapping[str, np.ndarray]):
    """Immutable mapping from dotted parameter names to float64 tensors."""

    def __init__(self, params: Mapping[str, np.ndarray]):
        self._params = {}
        for name, value in params.items():
            arr = np.array(value, dtype=np.float64)
            arr.setflags(write=False)
            self._params[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def manifest(self) -> list[tuple[str, tuple[int, ...], str]]:
        return [(n, tuple(a.shape), "float32") for n, a in self._params.items()]

    def namespace(self, prefix: str) -> set[str]:
        return {n for n in self._params if n == prefix or n.startswith(prefix + ".")}

    def updated(self, updates: Mapping[str, np.ndarray]) -> "WeightStore":
        params = dict(self._params)
        params.update(updates)
        return WeightStore(params)

    def equals(self, other: "WeightStore") -> bool:
        if list(self) != list(other):
            return False
        return all(
            self[n].shape == other[n].shape and np.array_equal(self[n], other[n]) for n in self
        )


def init_params(shapes: Mapping[str, tuple[int, ...]], seed: int) -> WeightStore:
    params = {}
    for name in sorted(shapes):
        shape = tuple(int(s) for s in shapes[name])
        kind = param_kind(name)
        if kind == "bias" or kind == "ln_beta":
            value = np.zeros(shape)
        elif kind == "ln_gamma":
            value = np.ones(shape)
        else:
            fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
            bound = 1.0 / np.sqrt(fan_in)
            u = _stream_uniform(name, seed, int(np.prod(shape)))
            value = ((2.0 * u - 1.0) * bound).reshape(shape)
        # weights are persisted as float32; keep in-memory values representable
        params[name] = value.astype(np.float32).astype(np.float64)
    return WeightStore(params)


def init_store(config, seed: int) -> WeightStore:
    """Initialise every parameter of the architecture described by ``config``."""
    from .pipeline.model import parameter_shapes

    return init_params(parameter_shapes(config), seed)


def save_store(ws: WeightStore, path) -> None:
    header = [MAGIC, struct.pack("<HI", VERSION, len(ws))]
    blobs = []
    for name, arr in ws.items():
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)))
        header.append(raw)
        header.append(struct.pack("<B", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = b"".join(blobs)
    data = b"".join(header) + blob + struct.pack("<Q", fnv1a64(blob))
    Path(path).write_bytes(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise LengthMismatchError(
                f"file truncated: need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_store(path) -> WeightStore:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise MalformedFileError("not an MMFW file (bad magic)")
    r = _Reader(data)
    r.take(4)
    try:
        version, count = r.unpack("<HI")
    except LengthMismatchError as exc:
        raise MalformedFileError("header truncated") from exc
    if version != VERSION:
        raise UnsupportedVersionError(f"unknown MMFW version {version}")
    manifest = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFileError("parameter name is not UTF-8") from exc
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        manifest.append((name, tuple(shape)))
    sizes = [int(np.prod(s)) * 4 for _, s in manifest]
    expected = sum(sizes) + 8
    remaining = len(data) - r.pos
    if remaining != expected:
        raise LengthMismatchError(f"blob section is {remaining} bytes, manifest implies {expected}")
    blob = r.take(sum(sizes))
    (checksum,) = r.unpack("<Q")
    if fnv1a64(blob) != checksum:
        raise IntegrityError("blob checksum mismatch")
    params = {}
    off = 0
    for (name, shape), size in zip(manifest, sizes):
        if name in params:
            raise MalformedFileError(f"duplicate parameter {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=off)
        params[name] = arr.astype(np.float64).reshape(shape)
        off += size
    return WeightStore(params)
