import csv

import numpy as np
import pytest

from reverb_versa.core import reciprocity
from reverb_versa.core.patterns import cardioid_pattern
from reverb_versa.models import PreconditionError, ShoeboxRoom, VerificationSettings


@pytest.fixture
def rooms(room):
    return [room, ShoeboxRoom.uniform((4.0, 3.5, 2.8), 0.6)]


def test_random_pairs_stay_inside_the_margin(rooms):
    pairs = reciprocity.random_pairs(rooms, 6, margin=0.5, seed=2)
    assert len(pairs) == 6
    assert [p[0] for p in pairs] == [rooms[0], rooms[1]] * 3
    for r, a, b in pairs:
        assert r.contains(a.position, margin=0.5)
        assert r.contains(b.position, margin=0.5)
        assert np.linalg.norm(a.dir) == pytest.approx(1.0)
    assert reciprocity.random_pairs(rooms, 6, 0.5, seed=2) == pairs


def test_random_pairs_preconditions(room):
    with pytest.raises(PreconditionError):
        reciprocity.random_pairs([room], 1, 0.5, 0)
    with pytest.raises(PreconditionError):
        reciprocity.random_pairs([], 4, 0.5, 0)
    with pytest.raises(PreconditionError):
        reciprocity.random_pairs([room], 4, 1.6, 0)


def test_image_source_paired_distance_is_zero(rooms, small_sim):
    settings = VerificationSettings(pair_count=4, max_image_order=2)
    report = reciprocity.verify_reciprocity(rooms, settings, small_sim, seed=1)
    paired, unpaired = report.rows
    assert (paired.variant, unpaired.variant) == ("paired", "un-paired")
    assert [getattr(paired, m) for m in reciprocity.RATIO_METRICS] == [0.0] * 5
    assert unpaired.amp > 0.0
    assert report.ratios["amp"] == 0.0
    assert report.pair_count == 4


def test_shared_directional_pattern_stays_reciprocal(room, small_sim):
    settings = VerificationSettings(pair_count=2, max_image_order=2)
    card = cardioid_pattern()
    report = reciprocity.verify_reciprocity([room], settings, small_sim, emitter_pattern=card, listener_pattern=card)
    paired = report.rows[0]
    assert paired.amp < 1e-9
    assert paired.env < 1e-9


def test_ray_sweep_rows(room, small_sim):
    settings = VerificationSettings(pair_count=2, ray_sweep=[2000, 500, 2000], seeds=2, max_image_order=2)
    report = reciprocity.verify_reciprocity([room], settings, small_sim, mode="rays", seed=3)
    assert report.mode == "rays"
    assert [(r.variant, r.ray_count) for r in report.rows] == [("paired", 500), ("paired", 2000), ("un-paired", 2000)]
    assert [n for n, _ in reciprocity.paired_trend(report)] == [500, 2000]
    assert set(report.ratios) == set(reciprocity.RATIO_METRICS)
    assert all(r.amp > 0.0 for r in report.rows)


def test_ray_sweep_converges_toward_reciprocity(room, small_sim):
    settings = VerificationSettings(pair_count=2, ray_sweep=[1000, 10000, 100000], seeds=3)
    report = reciprocity.verify_reciprocity([room], settings, small_sim, mode="rays", seed=4)
    for metric in ("amp", "env"):
        trend = [v for _, v in reciprocity.paired_trend(report, metric)]
        assert trend[0] > trend[1] > trend[2], metric
        assert report.ratios[metric] < 1.0
    amp = [v for _, v in reciprocity.paired_trend(report)]
    assert amp[2] <= amp[0] / 3.0


def test_unknown_mode(room, small_sim):
    with pytest.raises(PreconditionError):
        reciprocity.verify_reciprocity([room], VerificationSettings(pair_count=2), small_sim, mode="fdtd")


def test_verification_csv(rooms, small_sim, tmp_path):
    report = reciprocity.verify_reciprocity(rooms, VerificationSettings(pair_count=4, max_image_order=1), small_sim)
    path = tmp_path / "verification.csv"
    reciprocity.write_verification_csv(report, path)
    with path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["variant", "ray_count", "amp", "env", "t60", "c50", "edt"]
    assert [r[:2] for r in rows[1:]] == [["paired", ""], ["un-paired", ""]]
    assert float(rows[2][2]) == report.rows[1].amp
