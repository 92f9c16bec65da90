"""Radio loop closures: similarity-thresholded range edges between nodes.

Node ids follow :func:`node_offsets`: trajectories in input order, steps
consecutive within a trajectory.

Selection runs in three stages:

1. candidates: same-floor pairs of radio-tagged nodes with similarity at or
   above the threshold (intra-trajectory pairs only when far enough apart in
   step index);
2. thinning: the admissible pairs (any similarity) are counted per
   similarity band of width ``1 / n_bands``. A pair in a band holding ``n``
   pairs survives when its fixed pseudo-random draw (derived from ``seed``)
   is below ``band_budget / n``, so every band keeps about ``band_budget``
   pairs and sparse high-similarity bands are kept whole. Neither the draw
   nor the band counts depend on the threshold, so the surviving sets are
   nested across thresholds;
3. degree cap: survivors are accepted strongest first (ties by smaller id
   pair) while both endpoints have fewer than ``max_edges_per_node`` edges.

Stage 3 only ever appends weaker edges when the threshold is lowered, so the
edge count is monotone in the threshold.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from crowdrfm.core import RfObservation, Trajectory
from crowdrfm.geomodel import GeoModel, predict
from crowdrfm.graph import RfEdge
from crowdrfm.similarity import (
    DEFAULT_SIMILARITY,
    SignalMatrix,
    SimilarityConfig,
    harmonic_combine,
    row_block_components,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClosureConfig:
    threshold: float = 0.45
    max_edges_per_node: int = 50
    min_intra_step_gap: int = 30
    seed: int = 0
    band_budget: int | None = 1000
    n_bands: int = 20
    jaccard_prefilter: float | None = None

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.max_edges_per_node < 1:
            raise ValueError("max_edges_per_node must be >= 1")
        if self.min_intra_step_gap < 1:
            raise ValueError("min_intra_step_gap must be >= 1")
        if self.band_budget is not None and self.band_budget < 1:
            raise ValueError("band_budget must be >= 1 or None")
        if self.n_bands < 1:
            raise ValueError("n_bands must be >= 1")


def node_offsets(trajectories: Sequence[Trajectory]) -> list[int]:
    """Dense id of step 0 of every trajectory."""
    out, total = [], 0
    for t in trajectories:
        out.append(total)
        total += len(t.steps)
    return out


def pair_uniform(seed: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Deterministic uniform [0, 1) draw per unordered node pair (splitmix64)."""
    lo = np.minimum(a, b).astype(np.uint64)
    hi = np.maximum(a, b).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = (lo * np.uint64(0x9E3779B97F4A7C15)) ^ (hi + np.uint64(0xD1B54A32D192ED03)) ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


@dataclass
class RadioNodes:
    """Flattened radio-tagged nodes of a trajectory set."""

    node: np.ndarray  # dense node id
    traj: np.ndarray  # trajectory index
    step: np.ndarray
    floor: np.ndarray
    observations: list[RfObservation]
    matrix: SignalMatrix

    @classmethod
    def collect(cls, trajectories: Sequence[Trajectory]) -> RadioNodes:
        offsets = node_offsets(trajectories)
        node, traj, step, floor, obs = [], [], [], [], []
        for ti, t in enumerate(trajectories):
            for k in t.rf_indices():
                node.append(offsets[ti] + k)
                traj.append(ti)
                step.append(k)
                floor.append(t.floor)
                obs.append(t.steps[k].observation)
        return cls(np.array(node, dtype=np.int64), np.array(traj, dtype=np.int64),
                   np.array(step, dtype=np.int64), np.array(floor, dtype=np.int64),
                   obs, SignalMatrix(obs))


@dataclass(frozen=True)
class CandidateSet:
    """Admissible pairs at or above some similarity, reusable across higher thresholds."""

    a: np.ndarray  # dense ids, a < b
    b: np.ndarray
    similarity: np.ndarray
    draw: np.ndarray
    band_counts: np.ndarray  # admissible pairs per similarity band, any similarity


def band_of(similarity, n_bands: int) -> np.ndarray:
    return np.minimum((np.asarray(similarity) * n_bands).astype(np.int64), n_bands - 1)


def keep_probability(cands: CandidateSet, cfg: ClosureConfig) -> np.ndarray:
    if cfg.band_budget is None:
        return np.ones(len(cands.a))
    n = cands.band_counts[band_of(cands.similarity, len(cands.band_counts))]
    return np.minimum(1.0, cfg.band_budget / np.maximum(n, 1))


def candidate_pairs(nodes: RadioNodes, simcfg: SimilarityConfig, cfg: ClosureConfig,
                    min_similarity: float = 0.0) -> CandidateSet:
    n = len(nodes.node)
    parts_a, parts_b, parts_g = [], [], []
    band_counts = np.zeros(cfg.n_bands, dtype=np.int64)
    block = 1024
    for s in range(0, n, block):
        rows = np.arange(s, min(s + block, n))
        g_jac, g_l1 = row_block_components(nodes.matrix, rows, simcfg)
        g = harmonic_combine(g_jac, g_l1, simcfg.beta)
        col = np.arange(n)[None, :]
        ok = col > rows[:, None]
        ok &= nodes.floor[rows][:, None] == nodes.floor[None, :]
        same = nodes.traj[rows][:, None] == nodes.traj[None, :]
        gap = np.abs(nodes.step[rows][:, None] - nodes.step[None, :])
        ok &= ~same | (gap >= cfg.min_intra_step_gap)
        if cfg.jaccard_prefilter is not None:
            ok &= g_jac >= cfg.jaccard_prefilter
        band_counts += np.bincount(band_of(g[ok], cfg.n_bands), minlength=cfg.n_bands)
        ok &= g >= min_similarity
        r, c = np.nonzero(ok)
        parts_a.append(nodes.node[rows[r]])
        parts_b.append(nodes.node[c])
        parts_g.append(g[r, c])
    a = np.concatenate(parts_a) if parts_a else np.zeros(0, dtype=np.int64)
    b = np.concatenate(parts_b) if parts_b else np.zeros(0, dtype=np.int64)
    g = np.concatenate(parts_g) if parts_g else np.zeros(0)
    return CandidateSet(a, b, g, pair_uniform(cfg.seed, a, b), band_counts)


def select_closures(cands: CandidateSet, model: GeoModel, cfg: ClosureConfig) -> list[RfEdge]:
    keep = (cands.similarity >= cfg.threshold) & (cands.draw < keep_probability(cands, cfg))
    a, b, g = cands.a[keep], cands.b[keep], cands.similarity[keep]
    order = np.lexsort((b, a, -g))
    cap = cfg.max_edges_per_node
    degree: dict[int, int] = {}
    chosen = []
    for k in order:
        i, j = int(a[k]), int(b[k])
        if degree.get(i, 0) < cap and degree.get(j, 0) < cap:
            degree[i] = degree.get(i, 0) + 1
            degree[j] = degree.get(j, 0) + 1
            chosen.append(k)
    chosen = np.array(sorted(chosen, key=lambda k: (a[k], b[k])), dtype=np.int64)
    if len(chosen) == 0:
        logger.warning("no closures at threshold %.2f: graph will not fuse", cfg.threshold)
        return []
    gs = np.clip(g[chosen], 0.0, 1.0)
    mu, var = predict(model, gs)
    return [RfEdge(int(a[k]), int(b[k]), float(m), float(1.0 / v), float(s))
            for k, m, v, s in zip(chosen, mu, var, gs)]


def build_closures(
    trajectories: Sequence[Trajectory],
    model: GeoModel,
    simcfg: SimilarityConfig = DEFAULT_SIMILARITY,
    cfg: ClosureConfig = ClosureConfig(),
) -> list[RfEdge]:
    """Range edges between radio-tagged nodes, sorted by node-id pair."""
    if model is None:
        raise ValueError("a fitted GeoModel is required")
    nodes = RadioNodes.collect(trajectories)
    cands = candidate_pairs(nodes, simcfg, cfg, min_similarity=cfg.threshold)
    return select_closures(cands, model, cfg)


def threshold_curve(
    trajectories: Sequence[Trajectory],
    model: GeoModel,
    thresholds: Sequence[float],
    simcfg: SimilarityConfig = DEFAULT_SIMILARITY,
    cfg: ClosureConfig = ClosureConfig(),
) -> list[tuple[float, int]]:
    """Edge count per threshold; the candidate similarities are computed once."""
    nodes = RadioNodes.collect(trajectories)
    cands = candidate_pairs(nodes, simcfg, cfg, min_similarity=min(thresholds))
    out = []
    for t in thresholds:
        sub = replace(cfg, threshold=float(t))
        out.append((float(t), len(select_closures(cands, model, sub))))
    return out


def write_closures_csv(path, edges: Sequence[RfEdge], keys: Sequence[tuple[str, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_traj", "from_step", "to_traj", "to_step", "similarity", "mu_d", "var_d"])
        for e in edges:
            (ta, sa), (tb, sb) = keys[e.i], keys[e.j]
            w.writerow([ta, sa, tb, sb, repr(e.similarity), repr(e.mu_d), repr(1.0 / e.info_scalar)])


def read_closures_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["from_step"], r["to_step"] = int(r["from_step"]), int(r["to_step"])
        for k in ("similarity", "mu_d", "var_d"):
            r[k] = float(r[k])
    return rows
