"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the lines appear in the
"acceptance criteria" section of the terminal summary.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from crowdrfm import pipeline as pl
from crowdrfm.config import PipelineConfig
from crowdrfm.core import RfObservation
from crowdrfm.evaluation import ate, summarize
from crowdrfm.fusion import fuse_floor
from crowdrfm.geomodel import (
    MEAN_FACTOR,
    VAR_FACTOR,
    GeoModel,
    PairSample,
    bin_samples,
    estimate_zeta,
    fit_log_linear,
    predict,
)
from crowdrfm.graph import RfEdge, optimize
from crowdrfm.loopclosure import ClosureConfig, build_closures, threshold_curve
from crowdrfm.similarity import compound_similarity, harmonic_combine, jaccard, kernelized_l1

from test_evaluation import count_oracle
from test_graph import _fd_check, chain_graph, random_states

pytestmark = pytest.mark.slow


# -- 1 ------------------------------------------------------------------------------


def test_criterion_1_similarity(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    ids = [f"ap{i}" for i in range(12)]

    def rand_obs():
        return RfObservation({a: float(rng.uniform(-99, -30)) for a in ids if rng.random() < 0.5})

    props = True
    for _ in range(500):
        a, b = rand_obs(), rand_obs()
        g = compound_similarity(a, b)
        props &= g == compound_similarity(b, a) and 0.0 <= g <= 1.0
        if not a.is_empty():
            props &= compound_similarity(a, a) == 1.0
    for x, y in rng.uniform(0.01, 1, (200, 2)):
        props &= abs(harmonic_combine(x, y) - 2 * x * y / (x + y)) <= 1e-12
    ex1 = abs(kernelized_l1(RfObservation({"a": -50}), RfObservation({"a": -60})) - math.exp(-0.5))
    half_a = RfObservation({"b": -60, "c": -70, "a": -100})
    half_b = RfObservation({"b": -60, "c": -70, "d": -100})
    ex2 = abs(compound_similarity(half_a, half_b) - 2 / 3)
    ex3 = abs(jaccard(half_a, half_b) - 0.5)
    dt = time.perf_counter() - t0
    ok = bool(props) and max(ex1, ex2, ex3) <= 1e-12 and dt < 1.0
    acceptance(1, ok, f"properties {'hold' if props else 'VIOLATED'}; hand examples max err {max(ex1, ex2, ex3):.1e}", dt)
    assert ok


# -- 2 ------------------------------------------------------------------------------


def test_criterion_2_rayleigh(acceptance):
    t0 = time.perf_counter()
    zeta = estimate_zeta(np.random.default_rng(12345).rayleigh(3.0, 10_000))
    mu, var = predict(GeoModel(math.log(3.0), 0.0), 0.5)
    e_mu = abs(mu / 3.0 - math.sqrt(math.pi / 2))
    e_var = abs(var / 9.0 - (4 - math.pi) / 2)
    consts = max(abs(MEAN_FACTOR - math.sqrt(math.pi / 2)), abs(VAR_FACTOR - (4 - math.pi) / 2), e_mu, e_var)
    dt = time.perf_counter() - t0
    ok = 2.94 <= zeta <= 3.06 and consts <= 1e-12 and dt < 1.0
    acceptance(2, ok, f"zeta_hat={zeta:.4f} (range [2.94, 3.06]); moment constants err {consts:.1e}", dt)
    assert ok


# -- 3 ------------------------------------------------------------------------------


def test_criterion_3_model_recovery(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    s = rng.uniform(0.0, 1.0, 10_000)
    d = rng.rayleigh(np.exp(1.5 - 3.0 * s))
    model = fit_log_linear(bin_samples([PairSample(float(a), float(b)) for a, b in zip(d, s)], 20, 30))
    e0, e1 = abs(model.w0 - 1.5) / 1.5, abs(model.w1 + 3.0) / 3.0
    mu = predict(model, np.linspace(0, 1, 101))[0]
    decreasing = bool(np.all(np.diff(mu) < 0))
    dt = time.perf_counter() - t0
    ok = max(e0, e1) <= 0.05 and decreasing and dt < 5.0
    acceptance(3, ok, f"w0={model.w0:.4f} ({e0:.1%}), w1={model.w1:.4f} ({e1:.1%}); mu strictly decreasing: {decreasing}", dt)
    assert ok


# -- 4 ------------------------------------------------------------------------------


def _grid_case():
    from test_graph import TestOptimize  # the grid oracle lives with the unit tests

    try:
        TestOptimize().test_three_node_grid_oracle()
        return True
    except AssertionError:
        return False


def test_criterion_4_solver(acceptance):
    t0 = time.perf_counter()
    jac = max(_fd_check(x, ea) for x, ea in random_states(100))
    g, truth = chain_graph(50, seed=3, noise=0.3)
    optimize(g)
    diff = g.nodes - truth
    diff[:, 2] = np.angle(np.exp(1j * diff[:, 2]))
    chain = float(np.max(np.abs(diff)))
    grid = _grid_case()
    mono = True
    rng = np.random.default_rng(11)
    for trial in range(20):
        g, truth = chain_graph(30, seed=trial, noise=0.5)
        for _ in range(15):
            i, j = rng.choice(30, 2, replace=False)
            dd = float(np.hypot(*(truth[i, :2] - truth[j, :2])))
            g.rf_edges.append(RfEdge(int(i), int(j), max(dd + rng.normal(0, 1.0), 0.1), float(rng.uniform(0.2, 2))))
        h = np.array(optimize(g).cost_history)
        mono &= bool(np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, h[:-1])))
    dt = time.perf_counter() - t0
    ok = jac <= 1e-6 and chain <= 1e-9 and grid and mono and dt < 30
    acceptance(4, ok, f"(a) jacobian rel err {jac:.1e}; (b) chain err {chain:.1e}; (c) grid oracle {'ok' if grid else 'MISMATCH'}; "
                      f"(d) cost non-increasing {mono}", dt)
    assert ok


# -- 5 ------------------------------------------------------------------------------


def test_criterion_5_pruning(acceptance):
    t0 = time.perf_counter()
    cfg = PipelineConfig().override("scenario", n_traj=5)
    scn = pl.simulate(cfg.scenario)
    trajs = scn.trajectories
    model, _ = pl.fit_model(trajs, cfg)
    # every candidate above the threshold, capped at 10 per node, so the 5 % are a few dozen edges
    edges = build_closures(trajs, model, cfg.similarity, ClosureConfig(band_budget=None, max_edges_per_node=10))
    rng = np.random.default_rng(0)
    bad = set(rng.choice(len(edges), round(0.05 * len(edges)), replace=False).tolist())
    closures = [replace(e, mu_d=e.mu_d + 50.0) if k in bad else e for k, e in enumerate(edges)]
    res = fuse_floor(trajs, model, cfg.similarity, closures=closures)
    kept = {(e.i, e.j) for e in res.graph.rf_edges}
    bad_pairs = {(closures[k].i, closures[k].j) for k in bad}
    removed_bad = sum(p not in kept for p in bad_pairs)
    removed_clean = sum((e.i, e.j) not in kept for e in closures) - removed_bad
    frac_bad = removed_bad / len(bad)
    frac_clean = removed_clean / (len(closures) - len(bad))
    dt = time.perf_counter() - t0
    ok = frac_bad >= 0.9 and frac_clean <= 0.05 and dt < 60
    acceptance(5, ok, f"{len(closures)} closures, {len(bad)} corrupted: removed {frac_bad:.1%} of corrupted, "
                      f"{frac_clean:.2%} of clean", dt)
    assert ok


# -- 6, 7 -------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def default_scenario():
    cfg = PipelineConfig()
    scn = pl.simulate(cfg.scenario)
    model, _ = pl.fit_model(scn.trajectories, cfg)
    return cfg, scn, model


def test_criterion_6_end_to_end(acceptance, default_scenario):
    t0 = time.perf_counter()
    cfg, scn, model = default_scenario
    trajs, truth = scn.trajectories, scn.truth_map()
    results = pl.run_fusion(trajs, model, cfg)
    ate_rmse = pl.fusion_ate(results, truth)
    _, mss = pl.evaluate_rfm(pl.truth_rfm(trajs, truth), scn.queries, cfg)
    _, ccs = pl.evaluate_rfm(pl.build_rfm(pl.georeference(results, truth)), scn.queries, cfg)
    dt = time.perf_counter() - t0
    finite = math.isfinite(mss.cep68) and math.isfinite(ccs.cep68)
    ok = ate_rmse <= 3.0 and finite and ccs.cep68 <= 2.0 * mss.cep68 and mss.cep68 <= 5.0 and dt < 300
    acceptance(6, ok, f"ATE {ate_rmse:.3f} m (<= 3); MSS CEP68 {mss.cep68:.3f} m (<= 5); CCS CEP68 {ccs.cep68:.3f} m "
                      f"(ratio {ccs.cep68 / mss.cep68:.3f} <= 2)", dt)
    assert ok


def test_criterion_7_threshold_sweep(acceptance, default_scenario):
    t0 = time.perf_counter()
    cfg, scn, model = default_scenario
    trajs, truth = scn.trajectories, scn.truth_map()
    counts = [n for _, n in threshold_curve(trajs, model, pl.SWEEP_THRESHOLDS, cfg.similarity, cfg.closure)]
    strictly = all(a > b for a, b in zip(counts, counts[1:]))
    ates = {t: pl.fusion_ate(pl.run_fusion(trajs, model, cfg.override("closure", threshold=t)), truth)
            for t in (0.05, 0.45, 0.85)}
    dt = time.perf_counter() - t0
    ok = strictly and ates[0.45] < ates[0.05] and ates[0.45] < ates[0.85] and dt < 600
    acceptance(7, ok, f"edges {counts} strictly decreasing: {strictly}; ATE 0.05/0.45/0.85 = "
                      f"{ates[0.05]:.3f}/{ates[0.45]:.3f}/{ates[0.85]:.3f} m", dt)
    assert ok


# -- 8 ------------------------------------------------------------------------------


def _floor_accuracy(scenario_overrides: dict) -> float:
    cfg = PipelineConfig().override("scenario", floors=2, n_traj=20, **scenario_overrides)
    scn = pl.simulate(cfg.scenario)
    _, summary = pl.evaluate_rfm(pl.truth_rfm(scn.trajectories, scn.truth_map()), scn.queries, cfg)
    return summary.floor_accuracy


def test_criterion_8_floor_identification(acceptance):
    t0 = time.perf_counter()
    # a 200 dB penalty puts every other-floor reading below the -95 dBm cut: disjoint AP sets
    clean = _floor_accuracy(dict(floor_penalty=200.0, shadowing_sigma=0.0, p_drop=0.0))
    noisy = _floor_accuracy(dict(floor_penalty=15.0))
    dt = time.perf_counter() - t0
    ok = clean == 1.0 and noisy >= 0.95 and dt < 120
    acceptance(8, ok, f"disjoint/clean floor accuracy {clean:.1%} (= 100%); 15 dB + noise {noisy:.1%} (>= 95%)", dt)
    assert ok


# -- 9 ------------------------------------------------------------------------------


def test_criterion_9_metrics(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    exact = True
    for _ in range(1000):
        e = rng.exponential(3.0, int(rng.integers(1, 80))).round(int(rng.integers(0, 3)))
        s = summarize(e)
        exact &= s.cep68 == count_oracle(list(e), 0.68) and s.cep95 == count_oracle(list(e), 0.95)
    worst = 0.0
    for _ in range(100):
        truth = rng.uniform(-50, 50, (40, 2))
        est = truth + rng.normal(0, 1.0, truth.shape)
        phi = rng.uniform(-math.pi, math.pi)
        r = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        worst = max(worst, abs(ate(est @ r.T + rng.uniform(-500, 500, 2), truth) - ate(est, truth)))
    dt = time.perf_counter() - t0
    ok = bool(exact) and worst <= 1e-9
    acceptance(9, ok, f"CEP vs sort-and-count oracle exact on 1000 sets: {bool(exact)}; ATE rigid invariance err {worst:.1e}", dt)
    assert ok
