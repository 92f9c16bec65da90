"""Synthetic indoor environments and crowd-sourced traces.

Access points follow a log-distance path-loss model with log-normal
shadowing. Pedestrians do bounded random walks; their dead-reckoned
trajectories integrate noisy, heading-biased step increments while radio
scans are taken at the true positions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from crowdrfm.core import Pose2D, RfObservation, Step, Trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AccessPoint:
    id: str
    x: float
    y: float
    floor: int
    tx_power: float = -40.0  # dBm at reference distance d0
    path_loss_exponent: float = 2.5


@dataclass(frozen=True)
class Environment:
    width: float
    height: float
    floors: int
    aps: tuple[AccessPoint, ...]
    shadowing_sigma: float = 4.0
    dropout_floor: float = -95.0
    d0: float = 1.0
    p_drop: float = 0.1
    floor_penalty: float = 15.0
    floor_height: float = 4.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("environment extent must be positive")
        if self.floors < 1:
            raise ValueError("need at least one floor")
        if not self.aps:
            raise ValueError("environment has no access points")
        if self.shadowing_sigma < 0:
            raise ValueError("shadowing_sigma must be >= 0")
        for ap in self.aps:
            if not (0 <= ap.x <= self.width and 0 <= ap.y <= self.height):
                raise ValueError(f"AP {ap.id} lies outside the extent")
            if not 1.5 <= ap.path_loss_exponent <= 6:
                raise ValueError(f"AP {ap.id}: path-loss exponent out of [1.5, 6]")
        object.__setattr__(self, "aps", tuple(self.aps))

    def ap_arrays(self):
        """Columns (x, y, floor, tx_power, n) as numpy arrays."""
        a = np.array([(ap.x, ap.y, ap.floor, ap.tx_power, ap.path_loss_exponent) for ap in self.aps])
        return a[:, 0], a[:, 1], a[:, 2].astype(int), a[:, 3], a[:, 4]


@dataclass(frozen=True)
class SimTrajectory:
    truth: tuple[Pose2D, ...]
    trajectory: Trajectory

    def __post_init__(self):
        if len(self.truth) != len(self.trajectory.steps):
            raise ValueError("truth and trajectory lengths differ")


@dataclass(frozen=True)
class OdometryNoise:
    position_sigma: float = 0.05  # meters per step, per axis
    heading_sigma_deg: float = 0.3  # per step
    max_bias_deg: float = 0.2  # per step; each trace draws uniformly in [-max, max]


@dataclass(frozen=True)
class WalkParams:
    step_len: float = 0.7
    turn_sigma_deg: float = 8.0
    step_dt: float = 0.5
    margin: float = 0.5


def generate_environment(
    seed: int,
    width: float = 100.0,
    height: float = 50.0,
    floors: int = 1,
    n_aps_per_floor: int = 30,
    tx_power: float = -40.0,
    path_loss_exponent: float = 2.5,
    **radio,
) -> Environment:
    """Place APs uniformly at random on every floor; ids are prefixed by floor."""
    if n_aps_per_floor < 1:
        raise ValueError("need at least one AP per floor")
    if width <= 0 or height <= 0 or floors < 1:
        raise ValueError("extent and floor count must be positive")
    rng = np.random.default_rng(seed)
    aps = []
    for f in range(floors):
        xs = rng.uniform(0, width, n_aps_per_floor)
        ys = rng.uniform(0, height, n_aps_per_floor)
        for k in range(n_aps_per_floor):
            aps.append(AccessPoint(f"F{f}-AP{k:03d}", float(xs[k]), float(ys[k]), f, tx_power, path_loss_exponent))
    return Environment(width, height, floors, tuple(aps), **radio)


def mean_rssi(env: Environment, x, y, floor: int) -> np.ndarray:
    """Noise-free received power from every AP, shape (..., n_aps)."""
    ax, ay, af, p0, n = env.ap_arrays()
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    dz = (af - floor) * env.floor_height
    d = np.sqrt((x - ax) ** 2 + (y - ay) ** 2 + dz**2)
    loss = 10.0 * n * np.log10(np.maximum(d, env.d0) / env.d0)
    return p0 - loss - env.floor_penalty * np.abs(af - floor)


def simulate_observation(
    env: Environment,
    pos: tuple[float, float, int],
    rng: np.random.Generator | int | None = None,
) -> RfObservation:
    rng = np.random.default_rng(rng)
    x, y, floor = pos
    rssi = mean_rssi(env, x, y, int(floor))
    rssi = rssi + rng.normal(0.0, 1.0, rssi.shape) * env.shadowing_sigma
    keep = (rssi >= env.dropout_floor) & (rng.random(rssi.shape) >= env.p_drop)
    return RfObservation({ap.id: float(v) for ap, v, k in zip(env.aps, rssi, keep) if k})


def _random_walk(env: Environment, n_steps: int, walk: WalkParams, rng: np.random.Generator) -> list[Pose2D]:
    m = walk.margin
    lo_x, hi_x, lo_y, hi_y = m, env.width - m, m, env.height - m
    x, y = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
    heading = rng.uniform(-math.pi, math.pi)
    turn = math.radians(walk.turn_sigma_deg)
    xs, ys = [x], [y]
    for _ in range(n_steps - 1):
        heading += rng.normal(0.0, turn)
        nx, ny = x + walk.step_len * math.cos(heading), y + walk.step_len * math.sin(heading)
        # reflect off walls
        if nx < lo_x or nx > hi_x:
            heading = math.pi - heading
            nx = x + walk.step_len * math.cos(heading)
        if ny < lo_y or ny > hi_y:
            heading = -heading
            ny = y + walk.step_len * math.sin(heading)
        x, y = min(max(nx, lo_x), hi_x), min(max(ny, lo_y), hi_y)
        xs.append(x)
        ys.append(y)
    # heading of each pose = direction of travel out of it
    pts = np.column_stack([xs, ys])
    d = np.diff(pts, axis=0)
    hd = np.arctan2(d[:, 1], d[:, 0])
    hd = np.append(hd, hd[-1])
    return [Pose2D(px, py, h) for (px, py), h in zip(pts, hd)]


def generate_trajectories(
    env: Environment,
    n_traj: int,
    steps: int,
    seed: int,
    step_len: float = 0.7,
    noise: OdometryNoise = OdometryNoise(),
    rf_period: int = 4,
    walk: WalkParams | None = None,
    floors: list[int] | None = None,
) -> list[SimTrajectory]:
    """Bounded random walks with drifting odometry and scans at the true positions.

    Every trace gets its own seed derived from ``seed``, so output does not
    depend on generation order.
    """
    if n_traj < 1 or steps < 2 or rf_period < 1 or step_len <= 0:
        raise ValueError("n_traj >= 1, steps >= 2, rf_period >= 1 and step_len > 0 required")
    walk = walk or WalkParams()
    if walk.step_len != step_len:
        walk = WalkParams(step_len, walk.turn_sigma_deg, walk.step_dt, walk.margin)
    children = np.random.SeedSequence(seed).spawn(n_traj)
    out = []
    for i, child in enumerate(children):
        rng_walk, rng_odo, rng_rf = (np.random.default_rng(s) for s in child.spawn(3))
        floor = floors[i % len(floors)] if floors else int(rng_walk.integers(env.floors))
        truth = _random_walk(env, steps, walk, rng_walk)
        bias = math.radians(noise.max_bias_deg) * rng_odo.uniform(-1.0, 1.0)
        head_sig = math.radians(noise.heading_sigma_deg)
        local = Pose2D(0.0, 0.0, 0.0)
        records = []
        for k in range(steps):
            if k > 0:
                dx, dy, dth = truth[k - 1].increment_to(truth[k])
                dx += rng_odo.normal(0.0, noise.position_sigma)
                dy += rng_odo.normal(0.0, noise.position_sigma)
                dth += rng_odo.normal(0.0, head_sig) + bias
                local = local.compose(dx, dy, dth)
            obs = None
            if k % rf_period == 0:
                obs = simulate_observation(env, (truth[k].x, truth[k].y, floor), rng_rf)
            records.append(Step(local, obs, k * walk.step_dt))
        traj = Trajectory(f"T{i:04d}", floor, tuple(records))
        out.append(SimTrajectory(tuple(truth), traj))
    return out


def generate_queries(env: Environment, n: int, seed: int, floors: list[int] | None = None):
    """Held-out test points: list of (observation, x, y, floor)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        f = int(rng.choice(floors)) if floors else int(rng.integers(env.floors))
        x, y = rng.uniform(0, env.width), rng.uniform(0, env.height)
        out.append((simulate_observation(env, (x, y, f), rng), float(x), float(y), f))
    return out
