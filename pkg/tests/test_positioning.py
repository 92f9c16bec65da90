import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdrfm.core import Pose2D, RfObservation, Step, Trajectory
from crowdrfm.positioning import (
    Rfm,
    RfmEntry,
    build_rfm,
    knn_locate,
    locate_many,
    read_rfm_jsonl,
    write_rfm_jsonl,
)


def entry(x, y, floor=0, **readings):
    return RfmEntry(x, y, floor, RfObservation(readings))


RFM = Rfm((
    entry(0.0, 0.0, a=-40, b=-80),
    entry(10.0, 0.0, a=-60, b=-60),
    entry(20.0, 0.0, a=-80, b=-40),
    entry(5.0, 8.0, 1, c=-50),
))


def test_k1_returns_exact_match_position():
    est = knn_locate(RFM, RfObservation({"a": -60, "b": -60}), k=1)
    assert (est.x, est.y, est.floor) == (10.0, 0.0, 0)
    assert est.neighbors[0].index == 1 and est.neighbors[0].distance == 0.0


def test_k2_is_plain_mean():
    est = knn_locate(RFM, RfObservation({"a": -45, "b": -75}), k=2)
    assert [n.index for n in est.neighbors] == [0, 1]
    assert (est.x, est.y) == (5.0, 0.0)


def test_weighted_pulls_to_closer_match():
    q = RfObservation({"a": -42, "b": -78})
    plain = knn_locate(RFM, q, k=2)
    weighted = knn_locate(RFM, q, k=2, weighted=True)
    assert weighted.x < plain.x


def test_floor_vote_majority_and_tie():
    rfm = Rfm((entry(0, 0, 1, a=-50), entry(1, 0, 0, a=-52), entry(2, 0, 0, a=-53)))
    assert knn_locate(rfm, RfObservation({"a": -50}), k=3).floor == 0
    # 1-1 tie: the nearest neighbour's floor wins
    assert knn_locate(rfm, RfObservation({"a": -50}), k=2).floor == 1


def test_k_larger_than_rfm_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="crowdrfm.positioning"):
        est = knn_locate(RFM, RfObservation({"a": -60}), k=10)
    assert len(est.neighbors) == 4
    assert "exceeds RFM size" in caplog.text


def test_errors():
    with pytest.raises(ValueError):
        knn_locate(Rfm(), RfObservation({"a": -50}))
    with pytest.raises(ValueError):
        knn_locate(RFM, RfObservation({"a": -50}), k=0)
    with pytest.raises(ValueError):
        RfmEntry(0, 0, 0, RfObservation({}))
    assert locate_many(RFM, [], k=2) == []


readings = st.dictionaries(st.sampled_from("abcdef"), st.floats(-95, -35), min_size=1, max_size=6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50), readings), min_size=3, max_size=15),
       readings, st.integers(1, 5), st.randoms(use_true_random=False))
def test_estimate_in_convex_hull_and_order_free(rows, q, k, rnd):
    entries = [entry(x, y, **r) for x, y, r in rows]
    query = RfObservation(q)
    est = knn_locate(Rfm(tuple(entries)), query, k=k)
    pts = np.array([(e.x, e.y) for e in entries])
    # the estimate is a mean of rfm positions, so it lies inside their bounding box
    assert pts[:, 0].min() - 1e-9 <= est.x <= pts[:, 0].max() + 1e-9
    assert pts[:, 1].min() - 1e-9 <= est.y <= pts[:, 1].max() + 1e-9
    # reordering the map changes nothing unless neighbour distances tie at the k boundary
    dist = sorted(n.distance for n in knn_locate(Rfm(tuple(entries)), query, k=len(entries)).neighbors)
    if len(dist) > k and dist[k - 1] == dist[k]:
        return
    shuffled = list(entries)
    rnd.shuffle(shuffled)
    other = knn_locate(Rfm(tuple(shuffled)), query, k=k)
    assert other.x == pytest.approx(est.x, abs=1e-9) and other.y == pytest.approx(est.y, abs=1e-9)


def test_build_rfm_skips_steps_without_radio():
    steps = (Step(Pose2D(0, 0), RfObservation({"a": -50}), 0.0), Step(Pose2D(1, 0), None, 1.0),
             Step(Pose2D(2, 0), RfObservation({}), 2.0), Step(Pose2D(3, 0), RfObservation({"b": -70}), 3.0))
    rfm = build_rfm([Trajectory("T", 2, steps)])
    assert len(rfm) == 2
    np.testing.assert_array_equal(rfm.positions, [[0, 0], [3, 0]])
    np.testing.assert_array_equal(rfm.floors, [2, 2])


def test_jsonl_roundtrip(tmp_path):
    p = tmp_path / "rfm.jsonl"
    write_rfm_jsonl(RFM, p)
    assert read_rfm_jsonl(p).entries == RFM.entries
    p.write_text('{"x": 1}\n')
    with pytest.raises(ValueError, match="bad RFM record"):
        read_rfm_jsonl(p)
