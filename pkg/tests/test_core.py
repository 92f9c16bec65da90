import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdrfm.core import Pose2D, RfObservation, Step, Trajectory, euclidean_distance, wrap_angle, wrap_angles

angles = st.floats(-1e4, 1e4, allow_nan=False)
coords = st.floats(-1e3, 1e3, allow_nan=False)


def test_wrap_examples():
    assert wrap_angle(0.0) == 0.0
    assert abs(wrap_angle(3 * math.pi) - math.pi) < 1e-12
    assert abs(wrap_angle(-3.5 * math.pi) - 0.5 * math.pi) < 1e-12
    assert wrap_angle(-math.pi) == math.pi


@settings(max_examples=300, deadline=None)
@given(angles)
def test_wrap_range_and_congruence(t):
    w = wrap_angle(t)
    assert -math.pi < w <= math.pi
    k = (t - w) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(angles, min_size=1, max_size=20))
def test_vectorized_wrap_matches_scalar(ts):
    np.testing.assert_array_equal(wrap_angles(np.array(ts)), [wrap_angle(t) for t in ts])


def test_distance_examples():
    assert euclidean_distance(Pose2D(0, 0, 1.0), Pose2D(0, 0, -2.0)) == 0.0
    assert euclidean_distance(Pose2D(0, 0, 0), Pose2D(3, 4, 0)) == 5.0
    assert abs(euclidean_distance(Pose2D(1, 1, 0), Pose2D(-2, 5, 1.2)) - 5.0) < 1e-12


def test_pose_validation_and_wrapping():
    assert Pose2D(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        Pose2D(float("nan"), 0.0)
    with pytest.raises(ValueError):
        Pose2D(0.0, 0.0, float("inf"))


@settings(max_examples=200, deadline=None)
@given(coords, coords, angles, st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3))
def test_compose_increment_roundtrip(x, y, th, dx, dy, dth):
    p = Pose2D(x, y, th)
    q = p.compose(dx, dy, dth)
    ex, ey, eth = p.increment_to(q)
    assert abs(ex - dx) < 1e-8 and abs(ey - dy) < 1e-8
    assert abs(wrap_angle(eth - dth)) < 1e-9


def test_observation_is_value_object():
    a = RfObservation({"x": -50, "y": -60.5})
    assert a == RfObservation({"y": -60.5, "x": -50.0})
    assert hash(a) == hash(RfObservation({"y": -60.5, "x": -50.0}))
    assert a.ids == frozenset({"x", "y"})
    assert not a.is_empty() and RfObservation({}).is_empty()
    with pytest.raises(TypeError):
        a.readings["x"] = 0.0
    with pytest.raises(ValueError):
        RfObservation({"x": float("nan")})


def _traj(n=5, rf=(0, 2, 4)):
    obs = [RfObservation({"a": -50.0 - k}) if k in rf else None for k in range(n)]
    return Trajectory.from_increments("T", 0, [(0, 0, 0)] + [(1.0, 0.0, 0.1)] * (n - 1), list(range(n)), obs)


def test_trajectory_invariants():
    t = _traj()
    assert len(t) == 5 and t.rf_indices() == [0, 2, 4]
    assert t.steps[0].pose == Pose2D(0, 0, 0)
    np.testing.assert_allclose(t.increments()[:, 0], 1.0)
    with pytest.raises(ValueError, match="at least 2"):
        Trajectory("T", 0, (Step(Pose2D(0, 0)),))
    with pytest.raises(ValueError, match="strictly increase"):
        Trajectory("T", 0, (Step(Pose2D(0, 0), None, 1.0), Step(Pose2D(1, 0), None, 1.0)))


def test_empty_observation_is_not_rf():
    t = Trajectory("T", 0, (Step(Pose2D(0, 0), RfObservation({}), 0.0), Step(Pose2D(1, 0), None, 1.0)))
    assert t.rf_indices() == []


def test_with_poses_keeps_observations():
    t = _traj()
    moved = t.with_poses(Pose2D(p.x + 10, p.y, p.theta) for p in t.poses)
    assert [s.observation for s in moved.steps] == [s.observation for s in t.steps]
    assert moved.steps[3].pose.x == pytest.approx(t.steps[3].pose.x + 10)
    with pytest.raises(ValueError):
        t.with_poses(t.poses[:2])
