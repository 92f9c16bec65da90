"""Command-line entry point: ``crowdrfm <subcommand> ...``.

Every subcommand writes into a run directory and records a ``manifest.json``
with its inputs (and their hashes), the seeds, and the config digest.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from crowdrfm import __version__
from crowdrfm.config import ConfigError, PipelineConfig, load_config
from crowdrfm.geomodel import GeoModel, InsufficientDataError
from crowdrfm.graph import NumericalError, UnderconstrainedGraphError
from crowdrfm import pipeline as pl
from crowdrfm.positioning import read_rfm_jsonl
from crowdrfm.traces import TraceFormatError, read_queries, read_traces, read_truth

logger = logging.getLogger("crowdrfm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class DataError(ValueError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, cfg: PipelineConfig, inputs: dict, outputs: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seeds": {
            "scenario": cfg.scenario.seed,
            "trajectories": cfg.scenario.trajectory_seed,
            "queries": cfg.scenario.query_seed,
            "geomodel": cfg.geomodel.seed,
            "closure": cfg.closure.seed,
        },
        "inputs": {k: {"path": str(p), "sha256": _sha256(Path(p))} for k, p in sorted(inputs.items())},
        "outputs": {k: str(Path(p).relative_to(outdir)) for k, p in sorted(outputs.items())},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override("scenario", seed=args.seed)
    if getattr(args, "threshold", None) is not None:
        cfg = cfg.override("closure", threshold=args.threshold)
    if getattr(args, "k", None) is not None:
        cfg = cfg.override("positioning", k=args.k)
    return cfg


def _load_model(path: Path) -> GeoModel:
    try:
        return GeoModel.from_json(path.read_text())
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad geomodel file {path}: {exc}") from exc


# -- subcommands ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    scn = pl.simulate(cfg.scenario)
    paths = pl.write_scenario(scn, out)
    _write_manifest(out, "simulate", cfg, {}, paths)
    print(f"wrote {len(scn.sims)} trajectories and {len(scn.queries)} queries to {out}")
    return EXIT_OK


def cmd_fit_model(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    traces = _require(args.traces, "traces")
    model, diag = pl.fit_model(read_traces(traces), cfg)
    paths = pl.write_model(model, diag, out)
    _write_manifest(out, "fit-model", cfg, {"traces": traces}, paths)
    print(f"w0={model.w0:.6f} w1={model.w1:.6f} ({model.n_samples} pairs, {model.n_bins} bins)")
    return EXIT_OK


def cmd_fuse(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    traces = _require(args.traces, "traces")
    model_path = _require(args.model, "model")
    trajs = read_traces(traces)
    model = _load_model(model_path)
    inputs = {"traces": traces, "model": model_path}
    truth = None
    if args.truth:
        inputs["truth"] = _require(args.truth, "truth")
        truth = read_truth(inputs["truth"])
    results = pl.run_fusion(trajs, model, cfg)
    if truth is not None:
        truth = _truth_for(trajs, truth)
    paths = pl.write_fusion(results, out, truth)
    summary = {"floors": {}, "frame": "fused" if truth is None else "building"}
    for f, r in sorted(results.items()):
        summary["floors"][str(f)] = {
            "closures": r.n_closures, "pruned": r.pruned,
            "final_cost": r.reports[-1].final_cost, "termination": r.reports[-1].termination,
        }
    if truth is not None:
        summary["ate_rmse"] = pl.fusion_ate(results, truth)
    if args.sweep:
        rows = pl.threshold_sweep(trajs, model, cfg, truth)
        paths["sweep"] = out / "threshold_sweep.csv"
        pl.write_sweep(rows, paths["sweep"])
    paths["fusion_summary"] = out / "fusion_summary.json"
    pl.write_json(summary, paths["fusion_summary"])
    _write_manifest(out, "fuse", cfg, inputs, paths)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _truth_for(trajs, truth):
    missing = [t.id for t in trajs if t.id not in truth]
    if missing:
        raise DataError(f"truth missing for trajectories: {', '.join(missing[:5])}")
    for t in trajs:
        if len(truth[t.id]) != len(t.steps):
            raise DataError(f"truth length mismatch for {t.id}")
    return truth


def cmd_position(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rfm_path = _require(args.rfm, "rfm")
    q_path = _require(args.queries, "queries")
    rfm = read_rfm_jsonl(rfm_path)
    if len(rfm) == 0:
        raise DataError("empty RFM")
    queries = read_queries(q_path)
    est, summary = pl.evaluate_rfm(rfm, queries, cfg)
    paths = {"estimates": out / "estimates.csv", "summary": out / "summary.json", "ecdf": out / "ecdf.csv"}
    pl.write_estimates(est, queries, paths["estimates"])
    paths["summary"].write_text(summary.to_json() + "\n")
    summary.write_ecdf_csv(paths["ecdf"])
    _write_manifest(out, "position", cfg, {"rfm": rfm_path, "queries": q_path}, paths)
    print(summary.to_json())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    """Surveyed-map versus crowd-sourced-map comparison on one query set."""
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = _require(args.traces, "traces")
    truth_path = _require(args.truth, "truth")
    rfm_path = _require(args.rfm, "rfm")
    q_path = _require(args.queries, "queries")
    trajs = read_traces(traces)
    truth = _truth_for(trajs, read_truth(truth_path))
    queries = read_queries(q_path)
    _, mss = pl.evaluate_rfm(pl.truth_rfm(trajs, truth), queries, cfg)
    _, ccs = pl.evaluate_rfm(read_rfm_jsonl(rfm_path), queries, cfg)
    report = pl.comparison_report(mss, ccs)
    paths = {"report": out / "comparison.json", "ecdf_mss": out / "ecdf_mss.csv", "ecdf_ccs": out / "ecdf_ccs.csv"}
    pl.write_json(report, paths["report"])
    mss.write_ecdf_csv(paths["ecdf_mss"])
    ccs.write_ecdf_csv(paths["ecdf_ccs"])
    _write_manifest(out, "evaluate", cfg, {"traces": traces, "truth": truth_path, "rfm": rfm_path, "queries": q_path}, paths)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    """simulate -> fit-model -> fuse -> evaluate in one run directory."""
    cfg = _config(args)
    out = Path(args.out)
    scn = pl.simulate(cfg.scenario)
    paths = pl.write_scenario(scn, out / "data")
    trajs = scn.trajectories
    model, diag = pl.fit_model(trajs, cfg)
    paths.update(pl.write_model(model, diag, out / "model"))
    results = pl.run_fusion(trajs, model, cfg)
    truth = scn.truth_map()
    paths.update(pl.write_fusion(results, out / "fusion", truth))
    ate_rmse = pl.fusion_ate(results, truth)
    _, mss = pl.evaluate_rfm(pl.truth_rfm(trajs, truth), scn.queries, cfg)
    _, ccs = pl.evaluate_rfm(pl.build_rfm(pl.georeference(results, truth)), scn.queries, cfg)
    report = pl.comparison_report(mss, ccs)
    report["ate_rmse"] = ate_rmse
    paths["report"] = out / "comparison.json"
    pl.write_json(report, paths["report"])
    if args.sweep:
        paths["sweep"] = out / "fusion" / "threshold_sweep.csv"
        pl.write_sweep(pl.threshold_sweep(trajs, model, cfg, truth), paths["sweep"])
    _write_manifest(out, "pipeline", cfg, {}, paths)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdrfm", description="Crowd-sourced radio map construction by pose-graph fusion.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=False):
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--out", required=True, help="run directory")
        if seed:
            sp.add_argument("--seed", type=int, help="scenario seed (overrides config)")

    sp = sub.add_parser("simulate", help="generate synthetic traces, truth and queries")
    common(sp, seed=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit-model", help="fit the similarity-to-distance model")
    common(sp)
    sp.add_argument("--traces")
    sp.set_defaults(func=cmd_fit_model)

    sp = sub.add_parser("fuse", help="align trajectories and build the RFM")
    common(sp)
    sp.add_argument("--traces")
    sp.add_argument("--model")
    sp.add_argument("--truth", help="optional ground truth for ATE")
    sp.add_argument("--threshold", type=float, help="closure similarity threshold")
    sp.add_argument("--sweep", action="store_true", help="also run the 0.05..0.95 threshold sweep")
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("position", help="kNN positioning of queries against an RFM")
    common(sp)
    sp.add_argument("--rfm")
    sp.add_argument("--queries")
    sp.add_argument("-k", type=int, help="neighbours (5 and 10 are the usual settings)")
    sp.set_defaults(func=cmd_position)

    sp = sub.add_parser("evaluate", help="compare a surveyed map and the fused map")
    common(sp)
    sp.add_argument("--traces")
    sp.add_argument("--truth")
    sp.add_argument("--rfm")
    sp.add_argument("--queries")
    sp.add_argument("-k", type=int)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("pipeline", help="run every stage on a simulated scenario")
    common(sp, seed=True)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("-k", type=int)
    sp.add_argument("--sweep", action="store_true")
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, UnderconstrainedGraphError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, TraceFormatError, InsufficientDataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
