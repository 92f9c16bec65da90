"""Stage functions shared by the CLI and the end-to-end tests."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from crowdrfm.config import PipelineConfig, ScenarioConfig
from crowdrfm.core import Pose2D, RfObservation, Trajectory, wrap_angle
from crowdrfm.evaluation import ErrorSummary, ate, positioning_errors, rigid_align, summarize
from crowdrfm.fusion import FusionResult, fuse
from crowdrfm.geomodel import FitDiagnostics, GeoModel, fit_geomodel
from crowdrfm.graph import dump_graph
from crowdrfm.loopclosure import write_closures_csv
from crowdrfm.positioning import Rfm, build_rfm, locate_many, write_rfm_jsonl
from crowdrfm.simulator import (
    Environment,
    OdometryNoise,
    SimTrajectory,
    WalkParams,
    generate_environment,
    generate_queries,
    generate_trajectories,
)
from crowdrfm.traces import write_queries, write_traces, write_truth

logger = logging.getLogger(__name__)

SWEEP_THRESHOLDS = tuple(round(0.05 + 0.1 * i, 2) for i in range(10))

Query = tuple[RfObservation, float, float, int]


@dataclass
class Scenario:
    env: Environment
    sims: list[SimTrajectory]
    queries: list[Query]

    @property
    def trajectories(self) -> list[Trajectory]:
        return [s.trajectory for s in self.sims]

    def truth_map(self) -> dict[str, np.ndarray]:
        return {s.trajectory.id: np.array([p.as_array() for p in s.truth]) for s in self.sims}


def simulate(cfg: ScenarioConfig) -> Scenario:
    env = generate_environment(
        cfg.seed, cfg.width, cfg.height, cfg.floors, cfg.n_aps_per_floor, cfg.tx_power, cfg.path_loss_exponent,
        shadowing_sigma=cfg.shadowing_sigma, dropout_floor=cfg.dropout_floor, d0=cfg.d0, p_drop=cfg.p_drop,
        floor_penalty=cfg.floor_penalty, floor_height=cfg.floor_height,
    )
    noise = OdometryNoise(cfg.position_sigma, cfg.heading_sigma_deg, cfg.max_bias_deg)
    walk = WalkParams(cfg.step_len, cfg.turn_sigma_deg)
    sims = generate_trajectories(env, cfg.n_traj, cfg.steps, cfg.trajectory_seed, cfg.step_len, noise,
                                 cfg.rf_period, walk)
    queries = generate_queries(env, cfg.n_queries, cfg.query_seed)
    return Scenario(env, sims, queries)


def write_scenario(scn: Scenario, outdir: Path) -> dict[str, Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"traces": outdir / "traces.jsonl", "truth": outdir / "truth.jsonl", "queries": outdir / "queries.jsonl"}
    write_traces(paths["traces"], scn.trajectories)
    write_truth(paths["truth"], [s.trajectory.id for s in scn.sims], [s.trajectory.floor for s in scn.sims],
                [s.truth for s in scn.sims])
    write_queries(paths["queries"], scn.queries)
    return paths


# -- model ------------------------------------------------------------------------


def fit_model(trajectories: Sequence[Trajectory], cfg: PipelineConfig) -> tuple[GeoModel, FitDiagnostics]:
    g = cfg.geomodel
    return fit_geomodel(trajectories, cfg.similarity, g.n_bins, g.min_count, g.n_per_traj, g.method, g.seed)


def write_model(model: GeoModel, diag: FitDiagnostics, outdir: Path) -> dict[str, Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"geomodel": outdir / "geomodel.json", "bins": outdir / "geomodel_bins.csv"}
    paths["geomodel"].write_text(model.to_json() + "\n")
    with open(paths["bins"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["center", "zeta", "count"])
        for c, z, n in diag.rows():
            w.writerow([repr(c), repr(z), n])
    return paths


# -- fusion -----------------------------------------------------------------------


def run_fusion(trajectories: Sequence[Trajectory], model: GeoModel, cfg: PipelineConfig) -> dict[int, FusionResult]:
    simcfg = replace(cfg.similarity, beta=model.beta, sigma_kernel=model.sigma_kernel)
    return fuse(trajectories, model, simcfg, cfg.closure, cfg.solver, cfg.fusion)


def fused_trajectories(results: dict[int, FusionResult]) -> list[Trajectory]:
    return [t for f in sorted(results) for t in results[f].trajectories]


def georeference(results: dict[int, FusionResult], truth: dict[str, np.ndarray]) -> list[Trajectory]:
    """Fused trajectories moved into the building frame, one rigid transform per floor.

    The fused frame is only defined up to a rigid motion; this plays the part
    of projecting the fused map onto a floor plan.
    """
    out = []
    for f in sorted(results):
        trajs = results[f].trajectories
        est = np.concatenate([t.pose_array()[:, :2] for t in trajs])
        ref = np.concatenate([truth[t.id][:, :2] for t in trajs])
        r, shift = rigid_align(est, ref)
        rot = float(np.arctan2(r[1, 0], r[0, 0]))
        for t in trajs:
            p = t.pose_array()
            xy = p[:, :2] @ r.T + shift
            out.append(t.with_poses(Pose2D(x, y, wrap_angle(h + rot)) for (x, y), h in zip(xy, p[:, 2])))
    return out


def fusion_ate(results: dict[int, FusionResult], truth: dict[str, np.ndarray]) -> float:
    """Pooled RMSE; each floor is rigidly aligned on its own."""
    sq, n = 0.0, 0
    for res in results.values():
        est = np.concatenate([t.pose_array()[:, :2] for t in res.trajectories])
        ref = np.concatenate([truth[t.id][:, :2] for t in res.trajectories])
        e = ate(est, ref)
        sq += e * e * len(est)
        n += len(est)
    return float(np.sqrt(sq / n))


def write_fusion(results: dict[int, FusionResult], outdir: Path,
                 truth: dict[str, np.ndarray] | None = None) -> dict[str, Path]:
    """Write aligned poses, RFM, graphs and closures; with truth, poses and RFM are georeferenced."""
    outdir.mkdir(parents=True, exist_ok=True)
    trajs = fused_trajectories(results) if truth is None else georeference(results, truth)
    paths = {"aligned": outdir / "aligned.jsonl", "rfm": outdir / "rfm.jsonl"}
    write_truth(paths["aligned"], [t.id for t in trajs], [t.floor for t in trajs], [t.poses for t in trajs])
    write_rfm_jsonl(build_rfm(trajs), paths["rfm"])
    for f, res in sorted(results.items()):
        paths[f"graph_floor{f}"] = outdir / f"graph_floor{f}.txt"
        dump_graph(res.graph, paths[f"graph_floor{f}"])
        paths[f"closures_floor{f}"] = outdir / f"closures_floor{f}.csv"
        write_closures_csv(paths[f"closures_floor{f}"], res.graph.rf_edges, res.graph.keys)
    return paths


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    edges: int
    kept: int
    ate: float | None


def threshold_sweep(trajectories: Sequence[Trajectory], model: GeoModel, cfg: PipelineConfig,
                    truth: dict[str, np.ndarray] | None = None,
                    thresholds: Sequence[float] = SWEEP_THRESHOLDS) -> list[SweepRow]:
    rows = []
    for t in thresholds:
        sub = cfg.override("closure", threshold=float(t))
        res = run_fusion(trajectories, model, sub)
        edges = sum(r.n_closures for r in res.values())
        kept = sum(len(r.graph.rf_edges) for r in res.values())
        err = fusion_ate(res, truth) if truth is not None else None
        logger.info("sweep threshold %.2f: %d edges, ATE %s", t, edges, err)
        rows.append(SweepRow(float(t), edges, kept, err))
    return rows


def write_sweep(rows: Sequence[SweepRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "edges", "edges_after_pruning", "ate_rmse"])
        for r in rows:
            w.writerow([r.threshold, r.edges, r.kept, "" if r.ate is None else repr(r.ate)])


# -- positioning --------------------------------------------------------------------


def truth_rfm(trajectories: Sequence[Trajectory], truth: dict[str, np.ndarray]) -> Rfm:
    """Fingerprints placed at their true positions (the surveyed-map analogue)."""
    placed = [t.with_poses(Pose2D(*p) for p in truth[t.id]) for t in trajectories]
    return build_rfm(placed)


def evaluate_rfm(rfm: Rfm, queries: Sequence[Query], cfg: PipelineConfig) -> tuple[list, ErrorSummary]:
    est = locate_many(rfm, [q[0] for q in queries], cfg.positioning.k, cfg.similarity, cfg.positioning.weighted)
    err, hits = positioning_errors(est, [(x, y, f) for _, x, y, f in queries])
    return est, summarize(err, hits)


def write_estimates(est, queries: Sequence[Query], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "x", "y", "floor", "true_x", "true_y", "true_floor"])
        for i, (e, q) in enumerate(zip(est, queries)):
            w.writerow([i, repr(e.x), repr(e.y), e.floor, repr(q[1]), repr(q[2]), q[3]])


def comparison_report(mss: ErrorSummary, ccs: ErrorSummary) -> dict:
    """Side-by-side statistics of the surveyed and crowd-sourced maps."""
    def row(s: ErrorSummary) -> dict:
        return {"min": s.min, "mean": s.mean, "cep68": s.cep68, "cep95": s.cep95,
                "floor_accuracy": s.floor_accuracy, "n": s.n}

    return {"MSS": row(mss), "CCS": row(ccs), "cep68_ratio": ccs.cep68 / mss.cep68 if mss.cep68 > 0 else None}


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
