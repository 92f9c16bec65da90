"""Trajectory fusion: build the pose graph, initialize, optimize, prune.

Each floor is fused on its own. Within a floor every trajectory starts from
its dead-reckoned local frame and is then registered greedily against the
trajectories already placed, using the endpoints of its closures.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from crowdrfm.core import Pose2D, Trajectory, wrap_angles
from crowdrfm.geomodel import GeoModel
from crowdrfm.graph import (
    IMU_INFO_HEADING,
    IMU_INFO_POS,
    ImuEdge,
    OptimizeReport,
    PoseGraph,
    RfEdge,
    SolverConfig,
    gauge_transform,
    imu_predict,
    optimize,
    prune_edges,
)
from crowdrfm.loopclosure import ClosureConfig, build_closures, node_offsets
from crowdrfm.similarity import DEFAULT_SIMILARITY, SimilarityConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    imu_a: float = IMU_INFO_POS
    imu_b: float = IMU_INFO_HEADING
    prune_chi2: float | None = 5.99
    min_registration_closures: int = 3


@dataclass
class FusionResult:
    trajectories: list[Trajectory]  # poses in the common frame
    graph: PoseGraph
    reports: list[OptimizeReport] = field(default_factory=list)
    pruned: int = 0
    n_closures: int = 0
    initial_poses: np.ndarray | None = None


def build_graph(trajectories: Sequence[Trajectory], closures: Sequence[RfEdge],
                cfg: FusionConfig = FusionConfig()) -> PoseGraph:
    """Nodes in local frames plus odometry edges and the given radio edges.

    Odometry measurements are produced by :func:`imu_predict` on the
    dead-reckoned poses, i.e. with the same convention the residual uses.
    """
    offsets = node_offsets(trajectories)
    nodes, keys, imu = [], [], []
    for t, off in zip(trajectories, offsets):
        poses = t.poses
        for k, p in enumerate(poses):
            nodes.append(p.as_array())
            keys.append((t.id, k))
        for k in range(len(poses) - 1):
            z = imu_predict(poses[k], poses[k + 1])
            imu.append(ImuEdge(off + k, off + k + 1, tuple(z), cfg.imu_a, cfg.imu_b))
    g = PoseGraph(np.array(nodes).reshape(-1, 3), imu, list(closures), set(), keys)
    g.validate()
    return g


def _weighted_procrustes(src: np.ndarray, dst: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    """Rotation angle and translation minimizing sum w |R src + t - dst|^2."""
    w = w / w.sum()
    cs, cd = w @ src, w @ dst
    a, b = src - cs, dst - cd
    sxx = np.sum(w * (a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
    sxy = np.sum(w * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    phi = math.atan2(sxy, sxx)
    c, s = math.cos(phi), math.sin(phi)
    t = cd - np.array([c * cs[0] - s * cs[1], s * cs[0] + c * cs[1]])
    return phi, t


def _register(src: np.ndarray, dst: np.ndarray, w: np.ndarray, scale: np.ndarray, iters: int = 5):
    """Robust (Huber-reweighted) rigid fit of closure endpoints."""
    phi, t = _weighted_procrustes(src, dst, w)
    for _ in range(iters):
        c, s = math.cos(phi), math.sin(phi)
        moved = src @ np.array([[c, s], [-s, c]]) + t
        r = np.hypot(*(moved - dst).T) / scale
        rw = np.where(r <= 1.0, 1.0, 1.0 / np.maximum(r, 1e-12))
        phi, t = _weighted_procrustes(src, dst, w * rw)
    return phi, t


def initialize(graph: PoseGraph, trajectories: Sequence[Trajectory], cfg: FusionConfig = FusionConfig()) -> list[int]:
    """Greedy registration of trajectories into a common frame.

    Returns the anchor nodes (one per group of mutually connected
    trajectories). The longest trajectory of each group keeps its local frame.
    """
    offsets = node_offsets(trajectories)
    spans = [(off, off + len(t.steps)) for t, off in zip(trajectories, offsets)]
    owner = np.empty(graph.n_nodes, dtype=np.int64)
    for ti, (a, b) in enumerate(spans):
        owner[a:b] = ti
    ei = np.array([e.i for e in graph.rf_edges], dtype=np.int64)
    ej = np.array([e.j for e in graph.rf_edges], dtype=np.int64)
    emu = np.array([e.mu_d for e in graph.rf_edges], dtype=float)
    ew = np.array([e.info_scalar for e in graph.rf_edges], dtype=float)
    esim = np.array([e.similarity for e in graph.rf_edges], dtype=float)
    ti_of, tj_of = owner[ei], owner[ej]

    placed = np.zeros(len(trajectories), dtype=bool)
    anchors = []
    x = graph.nodes
    while not placed.all():
        cross_i = placed[ti_of] & ~placed[tj_of]
        cross_j = placed[tj_of] & ~placed[ti_of]
        cross = cross_i | cross_j
        if not cross.any():
            # new group: longest unplaced trajectory keeps its local frame
            cand = [k for k in range(len(trajectories)) if not placed[k]]
            ref = max(cand, key=lambda k: (len(trajectories[k].steps), -k))
            placed[ref] = True
            anchors.append(spans[ref][0])
            continue
        unplaced_end = np.where(cross_i, tj_of, ti_of)
        weight = np.bincount(unplaced_end[cross], weights=ew[cross], minlength=len(trajectories))
        count = np.bincount(unplaced_end[cross], minlength=len(trajectories))
        nxt = int(np.argmax(weight))
        sel = cross & (unplaced_end == nxt)
        moving = np.where(cross_i[sel], ej[sel], ei[sel])
        fixed = np.where(cross_i[sel], ei[sel], ej[sel])
        lo, hi = spans[nxt]
        if count[nxt] >= cfg.min_registration_closures:
            phi, t = _register(x[moving, :2], x[fixed, :2], ew[sel], np.maximum(emu[sel], 1.0))
        else:
            # single strongest closure: translate so its endpoints sit mu apart
            # along their current bearing, keep the local orientation
            k = int(np.lexsort((fixed, -esim[sel]))[0])
            pm, pf = x[moving[k], :2], x[fixed[k], :2]
            v = pm - pf
            n = np.hypot(*v)
            u = v / n if n > 1e-9 else np.array([1.0, 0.0])
            phi, t = 0.0, pf + emu[sel][k] * u - pm
        x[lo:hi] = gauge_transform(x[lo:hi], phi, t)
        placed[nxt] = True
    graph.nodes = x
    return anchors


def physical_headings(local: np.ndarray, fused: np.ndarray) -> np.ndarray:
    """Map solver headings back to travel headings in the common frame.

    A trajectory moved by the odometry-model symmetry (rotation ``phi``) has
    solver heading ``theta_local - phi``; its travel heading is
    ``theta_local + phi``.
    """
    return wrap_angles(2.0 * local - fused)


def fuse_floor(
    trajectories: Sequence[Trajectory],
    model: GeoModel,
    simcfg: SimilarityConfig = DEFAULT_SIMILARITY,
    closure_cfg: ClosureConfig = ClosureConfig(),
    solver_cfg: SolverConfig = SolverConfig(),
    cfg: FusionConfig = FusionConfig(),
    closures: Sequence[RfEdge] | None = None,
) -> FusionResult:
    """Fuse trajectories recorded on one floor into a common frame."""
    trajectories = list(trajectories)
    if closures is None:
        closures = build_closures(trajectories, model, simcfg, closure_cfg)
    graph = build_graph(trajectories, closures, cfg)
    local = graph.nodes.copy()
    graph.anchored = set(initialize(graph, trajectories, cfg))
    init = graph.nodes.copy()
    reports = [optimize(graph, solver_cfg)]
    pruned = 0
    if cfg.prune_chi2 is not None and graph.rf_edges:
        pruned = prune_edges(graph, cfg.prune_chi2, solver_cfg.huber_delta)
        logger.info("pruned %d of %d radio edges", pruned, len(closures))
        if pruned:
            reports.append(optimize(graph, solver_cfg))
    heading = physical_headings(local[:, 2], graph.nodes[:, 2])
    out = []
    for t, off in zip(trajectories, node_offsets(trajectories)):
        sl = slice(off, off + len(t.steps))
        xy = graph.nodes[sl, :2]
        out.append(t.with_poses(Pose2D(px, py, h) for (px, py), h in zip(xy, heading[sl])))
    return FusionResult(out, graph, reports, pruned, len(closures), init)


def fuse(
    trajectories: Sequence[Trajectory],
    model: GeoModel,
    simcfg: SimilarityConfig = DEFAULT_SIMILARITY,
    closure_cfg: ClosureConfig = ClosureConfig(),
    solver_cfg: SolverConfig = SolverConfig(),
    cfg: FusionConfig = FusionConfig(),
) -> dict[int, FusionResult]:
    """Per-floor fusion; keys are floor labels."""
    floors: dict[int, list[Trajectory]] = {}
    for t in trajectories:
        floors.setdefault(t.floor, []).append(t)
    return {f: fuse_floor(ts, model, simcfg, closure_cfg, solver_cfg, cfg) for f, ts in sorted(floors.items())}
