"""Domain types shared across the package.

All types are immutable value objects. Poses are planar; headings are kept
wrapped to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(t: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    w = math.fmod(t, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    elif w > math.pi:
        w -= TWO_PI
    return w


def wrap_angles(t: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle`."""
    w = np.fmod(t, TWO_PI)
    w = np.where(w <= -np.pi, w + TWO_PI, w)
    return np.where(w > np.pi, w - TWO_PI, w)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose: position in meters, heading in radians."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"pose coordinates must be finite, got ({self.x}, {self.y})")
        if not math.isfinite(self.theta):
            raise ValueError(f"pose heading must be finite, got {self.theta}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> Pose2D:
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def compose(self, dx: float, dy: float, dtheta: float) -> Pose2D:
        """Apply a body-frame increment (dx forward, dy left, dtheta)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.theta + dtheta)

    def increment_to(self, other: Pose2D) -> tuple[float, float, float]:
        """Body-frame increment that takes ``self`` to ``other``; inverse of :meth:`compose`."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        ex, ey = other.x - self.x, other.y - self.y
        return c * ex + s * ey, -s * ex + c * ey, wrap_angle(other.theta - self.theta)


def euclidean_distance(a: Pose2D, b: Pose2D) -> float:
    """Planar distance between two poses; heading is ignored."""
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class RfObservation:
    """One radio scan: source identifier -> signal strength in dBm.

    Sources that were not heard are simply absent.
    """

    readings: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for k, v in dict(self.readings).items():
            v = float(v)
            if not math.isfinite(v):
                raise ValueError(f"reading for {k!r} must be finite, got {v}")
            clean[str(k)] = v
        object.__setattr__(self, "readings", MappingProxyType(clean))

    @property
    def ids(self) -> frozenset[str]:
        return frozenset(self.readings)

    def __len__(self) -> int:
        return len(self.readings)

    def is_empty(self) -> bool:
        return not self.readings

    def to_dict(self) -> dict[str, float]:
        return dict(self.readings)

    def __eq__(self, other):
        if not isinstance(other, RfObservation):
            return NotImplemented
        return dict(self.readings) == dict(other.readings)

    def __hash__(self):
        return hash(frozenset(self.readings.items()))


@dataclass(frozen=True)
class Step:
    pose: Pose2D
    observation: RfObservation | None = None
    timestamp: float = 0.0

    @property
    def has_rf(self) -> bool:
        return self.observation is not None and not self.observation.is_empty()


@dataclass(frozen=True)
class Trajectory:
    """A dead-reckoned trace: local-frame poses plus optional radio scans."""

    id: str
    floor: int
    steps: tuple[Step, ...]

    def __post_init__(self):
        steps = tuple(self.steps)
        if len(steps) < 2:
            raise ValueError(f"trajectory {self.id!r} needs at least 2 steps, got {len(steps)}")
        ts = [s.timestamp for s in steps]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"trajectory {self.id!r}: timestamps must strictly increase")
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def poses(self) -> list[Pose2D]:
        return [s.pose for s in self.steps]

    def rf_indices(self) -> list[int]:
        return [k for k, s in enumerate(self.steps) if s.has_rf]

    def pose_array(self) -> np.ndarray:
        return np.array([[s.pose.x, s.pose.y, s.pose.theta] for s in self.steps])

    def increments(self) -> np.ndarray:
        """Body-frame increments between consecutive steps, shape (n-1, 3)."""
        p = self.steps
        return np.array([p[k].pose.increment_to(p[k + 1].pose) for k in range(len(p) - 1)])

    def with_poses(self, poses: Iterable[Pose2D]) -> Trajectory:
        poses = list(poses)
        if len(poses) != len(self.steps):
            raise ValueError("pose count does not match step count")
        steps = tuple(Step(p, s.observation, s.timestamp) for p, s in zip(poses, self.steps))
        return Trajectory(self.id, self.floor, steps)

    @classmethod
    def from_increments(
        cls,
        traj_id: str,
        floor: int,
        increments: Sequence[Sequence[float]],
        timestamps: Sequence[float],
        observations: Sequence[RfObservation | None],
    ) -> Trajectory:
        """Integrate body-frame increments from the origin.

        The first increment is applied to the identity pose, so a leading
        ``(0, 0, 0)`` places step 0 at the local origin.
        """
        pose = Pose2D(0.0, 0.0, 0.0)
        steps = []
        for inc, t, obs in zip(increments, timestamps, observations, strict=True):
            pose = pose.compose(*inc)
            steps.append(Step(pose, obs, float(t)))
        return cls(traj_id, floor, tuple(steps))
