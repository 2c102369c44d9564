"""Dense float64 kernels and small neural primitives.

Tensors are plain ``numpy.ndarray`` objects in float64. Every public op checks
its output for NaN/Inf and raises :class:`NonFiniteError` if one slips through.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class NonFiniteError(ValueError):
    """Raised when an operation produces NaN or Inf."""


class ShapeError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def as_rows(x, n: int) -> np.ndarray:
    """View ``x`` as ``n`` rows; 1-D input becomes a single column."""
    x = as_tensor(x)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) != n:
        raise ShapeError(f"expected {n} rows, got {len(x)}")
    return x.reshape(n, -1) if x.ndim > 2 else x


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def softmax(x, axis: int = -1) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return check_finite(e / np.sum(e, axis=axis, keepdims=True), "softmax")


def sigmoid(x) -> np.ndarray:
    x = as_tensor(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x = as_tensor(x)
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over zero-width features")
    if eps <= 0:
        raise ValueError("eps must be positive")
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"affine params must have shape ({d},)")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    return check_finite(y * gamma + beta, "layer_norm")


def linear(x, w, b=None) -> np.ndarray:
    """``x @ w + b`` batched over leading extents of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x @ w
    if b is not None:
        y = y + b
    return y


@dataclass(frozen=True)
class MlpSpec:
    """Chain of affine layers; parameters live at ``{prefix}.l{i}.w`` / ``.b``."""

    prefix: str
    widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w <= 0 for w in self.widths):
            raise ValueError("layer widths must be positive")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("one activation per layer")
        for act in self.activations:
            if act not in ("relu", "none"):
                raise ValueError(f"unknown activation {act!r}")

    @classmethod
    def build(cls, prefix: str, widths: Sequence[int], final: str = "none") -> "MlpSpec":
        n = len(widths) - 1
        acts = ("relu",) * (n - 1) + (final,)
        return cls(prefix, tuple(int(w) for w in widths), acts)

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            shapes[f"{self.prefix}.l{i}.w"] = (a, b)
            shapes[f"{self.prefix}.l{i}.b"] = (b,)
        return shapes


def mlp_apply(spec: MlpSpec, weights: Mapping[str, np.ndarray], x) -> np.ndarray:
    x = as_tensor(x)
    if x.shape[-1] != spec.d_in:
        raise ShapeError(f"{spec.prefix}: input width {x.shape[-1]} != {spec.d_in}")
    for i, act in enumerate(spec.activations):
        try:
            w = weights[f"{spec.prefix}.l{i}.w"]
            b = weights[f"{spec.prefix}.l{i}.b"]
        except KeyError as exc:
            raise KeyError(f"missing parameter {exc.args[0]}") from None
        x = linear(x, w, b)
        if act == "relu":
            x = relu(x)
    return check_finite(x, spec.prefix)


def conv2d(x, kernel, stride: int = 1, padding: int = 0, bias=None) -> np.ndarray:
    """Cross-correlation of an HxWxC map with a kh x kw x Cin x Cout kernel."""
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    if stride <= 0:
        raise ValueError("stride must be positive")
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError("conv2d expects HxWxC input and kh x kw x Cin x Cout kernel")
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cin:
        raise ShapeError(f"input channels {x.shape[2]} != kernel channels {cin}")
    if padding:
        x = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    if kh > x.shape[0] or kw > x.shape[1]:
        raise ShapeError("kernel larger than padded input")
    # windows: H' x W' x C x kh x kw
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::stride, ::stride]
    out = np.einsum("ijcab,abco->ijo", win, kernel, optimize=True)
    if bias is not None:
        out = out + bias
    return check_finite(out, "conv2d")


def bilinear_sample(fmap, points) -> np.ndarray:
    """Sample an HxWxC map at fractional (row, col) positions, clamping to the border."""
    fmap = as_tensor(fmap)
    pts = as_tensor(points).reshape(-1, 2)
    h, w = fmap.shape[:2]
    r = np.clip(pts[:, 0], 0.0, h - 1)
    c = np.clip(pts[:, 1], 0.0, w - 1)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[:, None]
    out = (
        fmap[r0, c0] * (1 - fr) * (1 - fc)
        + fmap[r0, c1] * (1 - fr) * fc
        + fmap[r1, c0] * fr * (1 - fc)
        + fmap[r1, c1] * fr * fc
    )
    return check_finite(out, "bilinear_sample")


def cosine_sim(a, b, eps: float = 1e-12) -> float:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape or a.size == 0:
        raise ShapeError("cosine_sim expects two equal-length non-empty vectors")
    na = max(float(np.linalg.norm(a)), eps)
    nb = max(float(np.linalg.norm(b)), eps)
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(a, b, eps: float = 1e-12) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``a`` (n x d) and ``b`` (m x d)."""
    a = as_tensor(a)
    b = as_tensor(b)
    na = np.maximum(np.linalg.norm(a, axis=1), eps)
    nb = np.maximum(np.linalg.norm(b, axis=1), eps)
    return np.clip((a @ b.T) / np.outer(na, nb), -1.0, 1.0)


def pool(x, mode: str) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("pool expects an n x d tensor")
    if x.shape[0] == 0:
        raise ShapeError("pool over zero rows")
    if mode == "max":
        return x.max(axis=0)
    if mode == "avg":
        return x.mean(axis=0)
    raise ValueError(f"unknown pool mode {mode!r}")
