import numpy as np
import pytest

from mmftrack.alignment import TEMPLATE_RAW_CAP, CropSource
from mmftrack.geometry import Box7, grid_preset
from mmftrack.pipeline.config import STRATEGIES, TrackerConfig
from mmftrack.pipeline.synthetic import SynthConfig, generate_synthetic
from mmftrack.pipeline.templates import make_template, template_frames
from mmftrack.pipeline.tracker import track_sequence

CAR = grid_preset("car")


def test_template_frames():
    assert template_frames("first-gt", 5) == [0]
    assert template_frames("prev", 5) == [4]
    assert template_frames("first-gt+prev", 5) == [0, 4]
    assert template_frames("first-gt+prev", 1) == [0]
    assert template_frames("all-prev", 10) == list(range(10))
    for s in STRATEGIES:
        assert template_frames(s, 1) == [0]
    with pytest.raises(ValueError):
        template_frames("best", 3)
    with pytest.raises(ValueError):
        template_frames("prev", 0)


def fake_source(rng, fid, n_raw, n_ps):
    return CropSource(
        raw=rng.uniform(-1, 1, (n_raw, 4)),
        pseudo=rng.uniform(-1, 1, (n_ps, 6)),
        index=np.zeros((n_ps, 2), np.int64),
        frame_id=fid,
        box=Box7(0, 0, 0, 1.6, 1.5, 4.0, 0),
        mask_p=np.ones(n_ps, bool),
    )


def test_merge_counts(rng):
    hist = [fake_source(rng, i, 300, 50) for i in range(10)]
    t = make_template("all-prev", hist, CAR, 64, seed=0)
    assert t.provenance == tuple(range(10)) and len(t.raw) == min(3000, TEMPLATE_RAW_CAP)
    assert t.pseudo.shape == (64, 6)
    t = make_template("first-gt+prev", hist, CAR, 64, seed=0)
    assert t.provenance == (0, 9) and len(t.raw) == 600
    t = make_template("first-gt+prev", hist[:1], CAR, 64, seed=0)
    assert t.provenance == (0,) and len(t.raw) == 300


@pytest.fixture(scope="module")
def short_seq():
    return generate_synthetic(SynthConfig(n_frames=4, n_distractors=1, distractor_offset=2.4), seed=3).sequence


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_tracker_provenance(short_seq, strategy):
    res = track_sequence(short_seq, short_seq.gt[0], TrackerConfig(strategy=strategy, diagnostic=True))
    prov = [fr.provenance for fr in res.frames]
    expect = {
        "first-gt": [(0,), (0,), (0,)],
        "prev": [(0,), (1,), (2,)],
        "first-gt+prev": [(0,), (0, 1), (0, 2)],
        "all-prev": [(0,), (0, 1), (0, 1, 2)],
    }[strategy]
    assert prov == expect
