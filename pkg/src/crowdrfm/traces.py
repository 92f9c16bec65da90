"""JSON Lines trace and ground-truth files.

A trace file holds one record per step::

    {"traj_id": "T0000", "floor": 0, "t": 0.5, "dx": 0.7, "dy": 0.0, "dth": 0.01,
     "rf": {"F0-AP001": -61.2} | null}

``dx, dy, dth`` are body-frame increments from the previous step (for the
first step, from the local origin). Records of one trajectory must be
contiguous and in time order. Truth files hold ``{traj_id, step, x, y,
theta, floor}`` per step.
"""

from __future__ import annotations

import json
import math
from typing import Iterable, Sequence

import numpy as np

from crowdrfm.core import Pose2D, RfObservation, Trajectory


class TraceFormatError(ValueError):
    pass


def _num(v: float) -> float:
    # keep files stable across platforms: plain repr of a float, -0.0 folded
    return 0.0 if v == 0 else float(v)


def write_traces(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w") as fh:
        for t in trajectories:
            prev = Pose2D(0.0, 0.0, 0.0)
            for s in t.steps:
                dx, dy, dth = prev.increment_to(s.pose)
                prev = s.pose
                rec = {
                    "traj_id": t.id,
                    "floor": t.floor,
                    "t": _num(s.timestamp),
                    "dx": _num(dx),
                    "dy": _num(dy),
                    "dth": _num(dth),
                    "rf": s.observation.to_dict() if s.observation is not None else None,
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_traces(path) -> list[Trajectory]:
    groups: dict[str, dict] = {}
    order: list[str] = []
    closed: set[str] = set()
    current = None
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                tid = str(d["traj_id"])
                floor = int(d["floor"])
                t = float(d["t"])
                inc = (float(d["dx"]), float(d["dy"]), float(d["dth"]))
                rf = d.get("rf")
                obs = None if rf is None else RfObservation({str(a): float(v) for a, v in rf.items()})
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise TraceFormatError(f"{path}:{n}: bad trace record ({exc})") from exc
            if not all(math.isfinite(v) for v in (t, *inc)):
                raise TraceFormatError(f"{path}:{n}: non-finite value")
            if tid != current:
                if tid in closed or tid in groups:
                    raise TraceFormatError(f"{path}:{n}: records of {tid!r} are not contiguous")
                if current is not None:
                    closed.add(current)
                groups[tid] = {"floor": floor, "inc": [], "t": [], "obs": []}
                order.append(tid)
                current = tid
            g = groups[tid]
            if g["floor"] != floor:
                raise TraceFormatError(f"{path}:{n}: floor changes within {tid!r}")
            g["inc"].append(inc)
            g["t"].append(t)
            g["obs"].append(obs)
    out = []
    for tid in order:
        g = groups[tid]
        try:
            out.append(Trajectory.from_increments(tid, g["floor"], g["inc"], g["t"], g["obs"]))
        except ValueError as exc:
            raise TraceFormatError(str(exc)) from exc
    return out


def write_truth(path, ids: Sequence[str], floors: Sequence[int], truths: Sequence[Sequence[Pose2D]]) -> None:
    with open(path, "w") as fh:
        for tid, floor, poses in zip(ids, floors, truths, strict=True):
            for k, p in enumerate(poses):
                rec = {"traj_id": tid, "step": k, "x": _num(p.x), "y": _num(p.y), "theta": _num(p.theta), "floor": floor}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_truth(path) -> dict[str, np.ndarray]:
    """Truth poses per trajectory id as (n, 3) arrays ordered by step."""
    rows: dict[str, list[tuple[int, float, float, float]]] = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rows.setdefault(str(d["traj_id"]), []).append(
                    (int(d["step"]), float(d["x"]), float(d["y"]), float(d["theta"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceFormatError(f"{path}:{n}: bad truth record ({exc})") from exc
    out = {}
    for tid, r in rows.items():
        r.sort()
        if [s for s, *_ in r] != list(range(len(r))):
            raise TraceFormatError(f"truth for {tid!r} has missing or duplicate steps")
        out[tid] = np.array([v for _, *v in r], dtype=float)
    return out


def write_queries(path, queries) -> None:
    """Held-out queries ``(observation, x, y, floor)``; position fields are the truth."""
    with open(path, "w") as fh:
        for obs, x, y, floor in queries:
            fh.write(json.dumps({"x": _num(x), "y": _num(y), "floor": int(floor), "rf": obs.to_dict()}, sort_keys=True) + "\n")


def read_queries(path) -> list[tuple[RfObservation, float, float, int]]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                obs = RfObservation({str(a): float(v) for a, v in d["rf"].items()})
                out.append((obs, float(d.get("x", "nan")), float(d.get("y", "nan")), int(d.get("floor", -1))))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise TraceFormatError(f"{path}:{n}: bad query record ({exc})") from exc
    return out
