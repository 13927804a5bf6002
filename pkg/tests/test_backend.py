import numpy as np
import pytest

from skytrack.backend import (
    OracleNoise,
    PersonAttrs,
    attrs_satisfying,
    detect,
    predicate_match,
    propose,
    verify,
)
from skytrack.core import BBox, SemanticQuery, crop_with_margin

from conftest import make_frame


def _frame(index=0, w=640, h=480):
    return make_frame(np.zeros((h, w), np.uint8), index=index)


def _persons(*boxes, **attrs):
    return [PersonAttrs(box=b, **attrs) for b in boxes]


THREE = _persons(BBox(10, 10, 30, 60), BBox(100, 50, 30, 60), BBox(400, 300, 40, 80))


def test_propose_noiseless_is_exact():
    dets = propose(_frame(), "person", THREE, OracleNoise())
    assert len(dets) == 3
    assert [d.box for d in dets] == [p.box for p in THREE]
    assert all(not d.verified for d in dets)
    assert all(0.5 <= d.detector_score <= 1.0 for d in dets)


def test_propose_total_miss():
    assert propose(_frame(), "person", THREE, OracleNoise(miss_rate=1.0)) == []


def test_propose_spurious_rate_monte_carlo():
    # Mean count over 10,000 frames must match persons + Poisson mean.
    noise = OracleNoise(spurious_rate=0.5, seed=5)
    truth = THREE[:2]
    counts = [len(propose(_frame(index=i), "person", truth, noise)) for i in range(10_000)]
    assert np.mean(counts) == pytest.approx(2.5, abs=0.05)


def test_propose_jitter_moves_boxes():
    noise = OracleNoise(jitter_sigma=2.0, seed=1)
    dets = propose(_frame(), "person", THREE, noise)
    assert len(dets) == 3
    assert any(d.box != p.box for d, p in zip(dets, THREE))


def _patch(frame, box):
    return crop_with_margin(frame, box, 50)


def test_verify_attribute_match():
    query = SemanticQuery("person", {"shirt_color": "gray"})
    attrs = PersonAttrs(box=BBox(10, 10, 30, 60), shirt_color="gray")
    ok, justification = verify(_patch(_frame(), attrs.box), query, attrs, OracleNoise())
    assert ok and "shirt" in justification


def test_verify_attribute_mismatch():
    query = SemanticQuery("person", {"injured": True})
    attrs = PersonAttrs(box=BBox(10, 10, 30, 60), pose="standing", injured=False)
    ok, justification = verify(_patch(_frame(), attrs.box), query, attrs, OracleNoise())
    assert not ok and "injured" in justification


def test_verify_flip_rate_monte_carlo():
    query = SemanticQuery("person", {"shirt_color": "gray"})
    attrs = PersonAttrs(box=BBox(10, 10, 30, 60), shirt_color="gray")
    noise = OracleNoise(verify_flip_rate=0.1, seed=3)
    accepted = 0
    for i in range(10_000):
        patch = _patch(_frame(index=i), attrs.box)
        ok, _ = verify(patch, query, attrs, noise)
        accepted += ok
    assert accepted / 10_000 == pytest.approx(0.9, abs=0.01)


def test_injured_predicate_follows_annotation_rule():
    pred = {"injured": True}
    laying = PersonAttrs(box=BBox(0, 0, 10, 10), pose="laying_down", injured=True)
    standing_flagged = PersonAttrs(box=BBox(0, 0, 10, 10), pose="standing", injured=True)
    assert predicate_match(pred, laying)[0]
    assert not predicate_match(pred, standing_flagged)[0]


def test_detect_superset_equals_predicate():
    dets, _ = detect(_frame(), SemanticQuery("person"), THREE + [THREE[0]], OracleNoise())
    assert len(dets) == 4
    assert all(d.verified for d in dets)


def test_detect_predicate_filter():
    persons = [
        PersonAttrs(box=BBox(10, 10, 30, 60), shirt_color="gray"),
        PersonAttrs(box=BBox(100, 50, 30, 60), shirt_color="blue"),
        PersonAttrs(box=BBox(400, 300, 40, 80), shirt_color="blue"),
    ]
    query = SemanticQuery("person", {"shirt_color": "blue"})
    dets, timings = detect(_frame(), query, persons, OracleNoise())
    assert [d.box for d in dets] == [persons[1].box, persons[2].box]
    assert timings.stage2_calls == 3


def test_detect_empty_frame():
    dets, timings = detect(_frame(), SemanticQuery("person"), [], OracleNoise())
    assert dets == []
    assert timings.t_obj is None
    assert timings.t_f > 0


def test_detect_noiseless_set_equality_random_fixtures():
    rng = np.random.default_rng(4)
    colors = ["gray", "blue", "green"]
    for trial in range(30):
        persons = [
            PersonAttrs(
                box=BBox(*(float(v) for v in [rng.integers(0, 500), rng.integers(0, 350),
                                              rng.integers(10, 60), rng.integers(10, 90)])),
                shirt_color=colors[rng.integers(3)],
            )
            for _ in range(rng.integers(0, 8))
        ]
        want_color = colors[rng.integers(3)]
        query = SemanticQuery("person", {"shirt_color": want_color})
        dets, _ = detect(_frame(index=trial), query, persons, OracleNoise())
        expected = {p.box.as_tuple() for p in persons if p.shirt_color == want_color}
        assert {d.box.as_tuple() for d in dets} == expected


def test_tightening_predicate_never_increases_count():
    persons = [
        PersonAttrs(box=BBox(10, 10, 30, 60), shirt_color="gray", pose="seated", injured=True),
        PersonAttrs(box=BBox(100, 50, 30, 60), shirt_color="gray", pose="standing"),
        PersonAttrs(box=BBox(200, 100, 30, 60), shirt_color="blue", pose="seated"),
    ]
    loose = SemanticQuery("person", {"shirt_color": "gray"})
    tight = SemanticQuery("person", {"shirt_color": "gray", "injured": True})
    n_loose = len(detect(_frame(), loose, persons, OracleNoise())[0])
    n_tight = len(detect(_frame(), tight, persons, OracleNoise())[0])
    assert n_tight <= n_loose
    assert (n_loose, n_tight) == (2, 1)


def test_t_f_grows_affinely_with_proposals():
    # Per-object verification cost makes the slope exact and positive.
    query = SemanticQuery("person")
    xs, ys = [], []
    for n in range(0, 21, 4):
        persons = _persons(*[BBox(10 + 25 * i, 10, 20, 40) for i in range(n)])
        _, timings = detect(
            _frame(), query, persons, OracleNoise(), simulated_stage2_cost=1e-3
        )
        xs.append(n)
        ys.append(timings.t_f)
    slope = np.polyfit(xs, ys, 1)[0]
    assert slope > 0
    assert slope == pytest.approx(1e-3, rel=0.2)


def test_detect_skips_proposals_outside_frame():
    # A truth box outside the frame cannot be cropped; it is skipped, not fatal.
    outside = PersonAttrs(box=BBox(10_000, 10_000, 20, 20))
    dets, _ = detect(_frame(), SemanticQuery("person"), [outside], OracleNoise())
    assert dets == []


def test_attrs_satisfying_consistency():
    attrs = attrs_satisfying({"injured": True, "shirt_color": "blue"})
    assert predicate_match({"injured": True, "shirt_color": "blue"}, attrs)[0]
    attrs2 = attrs_satisfying({})
    assert predicate_match({}, attrs2)[0]
