import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmftrack.numerics import (
    MlpSpec,
    NonFiniteError,
    ShapeError,
    bilinear_sample,
    conv2d,
    cosine_sim,
    layer_norm,
    matmul,
    mlp_apply,
    pool,
    softmax,
)
from mmftrack.oracles import bilinear_oracle

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_matmul_hand_cases():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), a), a)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])


def test_matmul_vs_triple_loop(rng):
    for _ in range(100):
        a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 3))
        ref = [[sum(a[i, k] * b[k, j] for k in range(5)) for j in range(3)] for i in range(7)]
        assert np.allclose(matmul(a, b), ref, atol=1e-12, rtol=0)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        matmul([[np.inf]], [[1.0]])


def test_softmax_examples(rng):
    assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    s = softmax(np.array([1000.0, 0.0, 0.0]))
    assert s[0] == pytest.approx(1.0) and np.all(np.isfinite(s))
    x = rng.normal(size=5)
    e = [math.exp(v) for v in x]
    assert np.allclose(softmax(x), [v / sum(e) for v in e], atol=1e-9)
    with pytest.raises(ShapeError):
        softmax(np.zeros((2, 0)), axis=1)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=finite))
def test_softmax_rows_are_probabilities(x):
    s = softmax(x, axis=-1)
    assert np.all(s >= 0)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-6)


def test_layer_norm_examples(rng):
    d = 4
    one, zero = np.ones(d), np.zeros(d)
    assert np.array_equal(layer_norm(np.full((1, d), 3.0), one, zero), np.zeros((1, d)))
    assert np.allclose(layer_norm(np.array([1.0, 3.0]), np.ones(2), np.zeros(2), eps=1e-12), [-1, 1])
    y = layer_norm(rng.normal(3, 5, (1, 16)), np.ones(16), np.zeros(16))
    assert abs(y.mean()) < 1e-9 and abs(y.var() - 1) < 1e-6
    with pytest.raises(ShapeError):
        layer_norm(np.zeros((2, 0)), np.zeros(0), np.zeros(0))


@given(
    arrays(np.float64, (3, 6), elements=st.floats(-100, 100)),
    st.floats(-1e3, 1e3),
)
def test_layer_norm_shift_invariant(x, shift):
    g, b = np.ones(6), np.zeros(6)
    assert np.allclose(layer_norm(x, g, b), layer_norm(x + shift, g, b), atol=1e-6)


def _mlp_weights(rng, spec, scale=1.0):
    return {k: rng.normal(0, scale, s) for k, s in spec.param_shapes().items()}


def test_mlp_examples(rng):
    spec = MlpSpec.build("m", [4, 6, 3])
    zeros = {k: np.zeros(s) for k, s in spec.param_shapes().items()}
    assert np.array_equal(mlp_apply(spec, zeros, rng.normal(size=(5, 4))), np.zeros((5, 3)))
    ident = MlpSpec.build("i", [3, 3])
    x = rng.normal(size=(2, 3))
    assert np.array_equal(mlp_apply(ident, {"i.l0.w": np.eye(3), "i.l0.b": np.zeros(3)}, x), x)
    with pytest.raises(KeyError, match="missing parameter"):
        mlp_apply(spec, {}, x[:, :1].repeat(4, axis=1))


def test_mlp_vs_scalar_loop(rng):
    spec = MlpSpec.build("m", [3, 5, 2])
    for _ in range(20):
        w = _mlp_weights(rng, spec)
        x = rng.normal(size=(4, 3))
        ref = np.zeros((4, 2))
        for n in range(4):
            h = [max(0.0, sum(x[n, i] * w["m.l0.w"][i, j] for i in range(3)) + w["m.l0.b"][j]) for j in range(5)]
            for o in range(2):
                ref[n, o] = sum(h[j] * w["m.l1.w"][j, o] for j in range(5)) + w["m.l1.b"][o]
        assert np.allclose(mlp_apply(spec, w, x), ref, atol=1e-9)


def test_mlp_spec_rejects_bad_widths():
    with pytest.raises(ValueError):
        MlpSpec.build("m", [3, 0, 2])


def conv_oracle(x, k, stride, pad):
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    xp = np.zeros((h + 2 * pad, w + 2 * pad, cin))
    xp[pad : pad + h, pad : pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                s = 0.0
                for a in range(kh):
                    for b in range(kw):
                        for c in range(cin):
                            s += xp[i * stride + a, j * stride + b, c] * k[a, b, c, o]
                out[i, j, o] = s
    return out


def test_conv2d_examples(rng):
    x = rng.normal(size=(5, 4, 2))
    ident = np.zeros((1, 1, 2, 2))
    ident[0, 0] = np.eye(2)
    assert np.array_equal(conv2d(x, ident), x)
    out = conv2d(np.ones((3, 3, 1)), np.ones((3, 3, 1, 1)))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 9.0
    with pytest.raises(ValueError):
        conv2d(x, ident, stride=0)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_vs_loop(rng, stride, pad):
    x = rng.normal(size=(8, 8, 2))
    k = rng.normal(size=(3, 3, 2, 4))
    got = conv2d(x, k, stride, pad)
    ref = conv_oracle(x, k, stride, pad)
    assert got.shape == ((8 + 2 * pad - 3) // stride + 1,) * 2 + (4,)
    assert np.allclose(got, ref, atol=1e-10)


def test_bilinear_examples(rng):
    f = rng.normal(size=(4, 5, 3))
    assert np.array_equal(bilinear_sample(f, [[2, 3]])[0], f[2, 3])
    assert np.allclose(bilinear_sample(f, [[1.5, 2]])[0], (f[1, 2] + f[2, 2]) / 2)
    # clamped, not zero-padded
    assert np.allclose(bilinear_sample(f, [[-3.0, 99.0]])[0], f[0, 4])
    for _ in range(100):
        p = rng.uniform(-1, 6, 2)
        assert np.allclose(bilinear_sample(f, [p])[0], bilinear_oracle(f.tolist(), *p), atol=1e-12)


def test_cosine_examples(rng):
    v = rng.normal(size=6)
    assert cosine_sim(v, v) == pytest.approx(1.0)
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim(v, -v) == pytest.approx(-1.0)
    assert cosine_sim(np.zeros(3), v[:3]) == 0.0


def test_pool_examples(rng):
    row = rng.normal(size=(1, 4))
    assert np.array_equal(pool(row, "max"), row[0]) and np.array_equal(pool(row, "avg"), row[0])
    two = np.stack([np.zeros(3), np.ones(3)])
    assert np.array_equal(pool(two, "max"), np.ones(3))
    assert np.array_equal(pool(two, "avg"), np.full(3, 0.5))
    x = rng.normal(size=(6, 3))
    assert np.array_equal(pool(x, "max"), [max(x[:, c]) for c in range(3)])
    with pytest.raises(ValueError):
        pool(np.zeros((0, 3)), "max")


def test_deterministic(rng):
    x = rng.normal(size=(6, 6, 3))
    k = rng.normal(size=(3, 3, 3, 2))
    assert np.array_equal(conv2d(x, k, 1, 1), conv2d(x.copy(), k.copy(), 1, 1))
