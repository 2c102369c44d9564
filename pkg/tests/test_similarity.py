import numpy as np
import pytest

from mmftrack.geometry import grid_preset
from mmftrack.similarity import (
    apm_preweight,
    apm_specs,
    diagnostic_fuse,
    diagnostic_texture_similarity,
    geometry_similarity,
    pillarize_similarity,
    sfm_fuse,
    sfm_param_shapes,
    texture_cosines,
    texture_param_shapes,
    texture_similarity,
)


def corr_oracle(t, s):
    h, w, c = t.shape
    out = np.zeros_like(s)
    for i in range(h):
        for j in range(w):
            for a in range(h):
                for b in range(w):
                    si, sj = i - h // 2 + a, j - w // 2 + b
                    if 0 <= si < h and 0 <= sj < w:
                        out[i, j] += s[si, sj] * t[a, b]
    return out / (h * w)


def rand_weights(rng, shapes, scale=0.5):
    return {k: rng.normal(0, scale, s) for k, s in shapes.items()}


def test_geometry_similarity_oracle(rng):
    t, s = rng.normal(size=(5, 6, 2)), rng.normal(size=(5, 6, 2))
    assert np.allclose(geometry_similarity(t, s), corr_oracle(t, s), atol=1e-12)
    with pytest.raises(ValueError):
        geometry_similarity(t, s[:4])


def test_geometry_similarity_peak_at_shift():
    t = np.zeros((8, 8, 1))
    t[3:5, 3:5] = 1
    s = np.roll(t, (2, -1), axis=(0, 1))
    sim = geometry_similarity(t, s)
    assert np.unravel_index(np.argmax(sim[..., 0]), (8, 8)) == (4 + 2, 4 - 1)


def test_cosines_bounded(rng):
    cos = texture_cosines(rng.normal(size=(7, 3)), rng.normal(size=(9, 3)))
    assert cos.shape == (9, 7) and (np.abs(cos) <= 1 + 1e-12).all()


def test_diagnostic_texture_separates_colours():
    red, blue = np.array([0.8, 0.1, 0.1]), np.array([0.1, 0.2, 0.8])
    f_t = np.stack([red, red, blue])
    mask = np.array([1, 1, 0])
    f_s = np.stack([red * 0.9, blue])
    s = diagnostic_texture_similarity(f_t, mask, f_s)
    assert s[0, 0] == pytest.approx(1.0) and s[1, 0] < 0.5


def test_texture_similarity_loop(rng):
    d, hid = 3, 5
    w = rand_weights(rng, texture_param_shapes("st", d, hid))
    f_t, f_s = rng.normal(size=(4, d)), rng.normal(size=(70, d))
    coords, mask = rng.normal(size=(4, 3)), np.array([1.0, 0, 1, 0])
    got = texture_similarity(f_t, coords, mask, f_s, w, "st", hid)
    cos = texture_cosines(f_t, f_s)
    for s in (0, 69):
        rows = [np.concatenate([[cos[s, t]], f_t[t], coords[t], [mask[t]]]) for t in range(4)]
        y = [np.maximum(r @ w["st.l0.w"] + w["st.l0.b"], 0) @ w["st.l1.w"] + w["st.l1.b"] for r in rows]
        assert np.allclose(got[s], np.max(y, axis=0))


def test_pillarize_similarity_shape(rng):
    grid = grid_preset("car")
    out = pillarize_similarity(rng.uniform(size=(10, 1)), rng.uniform(-3, 3, (10, 3)), grid)
    assert out.shape == (32, 32, 1)


def test_apm_and_sfm(rng):
    d = 4
    w = rand_weights(rng, {k: v for spec in apm_specs("a", d) for k, v in spec.param_shapes().items()})
    r = rng.normal(size=(6, d))
    out = apm_preweight(r, w, "a")
    # gate in (0, 1) so the output lies between R and 2R
    assert (np.abs(out) >= np.abs(r) - 1e-12).all() and (np.abs(out) <= 2 * np.abs(r) + 1e-12).all()
    with pytest.raises(ValueError):
        apm_preweight(np.zeros((0, d)), w, "a")
    w = rand_weights(rng, sfm_param_shapes("sfm", d))
    fused = sfm_fuse(rng.normal(size=(3, 3, d)), rng.normal(size=(3, 3, d)), w, "sfm")
    assert fused.shape == (3, 3, d) and np.isfinite(fused).all()
    with pytest.raises(ValueError):
        sfm_fuse(np.zeros((3, 3, d)), np.zeros((2, 3, d)), w, "sfm")


def test_diagnostic_fuse_units():
    a = np.array([[[2.0]], [[-4.0]]])
    b = np.array([[[0.5]], [[0.25]]])
    assert np.allclose(diagnostic_fuse(a, b)[..., 0], [[0.5 + 1.0], [-1.0 + 0.5]])
    z = np.zeros((2, 1, 1))
    assert np.array_equal(diagnostic_fuse(z, z), z)
