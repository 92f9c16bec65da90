"""Self-supervised similarity -> distance model.

Pairs of radio-tagged steps are drawn from inside each trajectory, where
dead-reckoned positions are locally consistent. Their distances are grouped
by similarity, each group is summarised by the scale ``zeta`` of a Rayleigh
distribution, and ``log(zeta)`` is fitted as a linear function of similarity.
The fitted model yields an expected distance and its variance for any
similarity value::

    zeta(s)  = exp(w0 + w1 * s)
    mu_d     = zeta * sqrt(pi / 2)
    var_d    = (4 - pi) / 2 * zeta**2
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import gaussian_kde

from crowdrfm.core import Trajectory, euclidean_distance
from crowdrfm.similarity import DEFAULT_SIMILARITY, SimilarityConfig, compound_similarity

logger = logging.getLogger(__name__)

MEAN_FACTOR = math.sqrt(math.pi / 2.0)
VAR_FACTOR = (4.0 - math.pi) / 2.0
METHODS = ("mle", "kde")


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PairSample:
    distance: float
    similarity: float

    def __post_init__(self):
        if not self.distance >= 0:
            raise ValueError(f"distance must be >= 0, got {self.distance}")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError(f"similarity must lie in [0, 1], got {self.similarity}")


@dataclass(frozen=True)
class SimilarityBin:
    center: float
    half_width: float
    distances: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class GeoModel:
    w0: float
    w1: float
    n_bins: int = 0
    n_samples: int = 0
    method: str = "mle"
    beta: float = DEFAULT_SIMILARITY.beta
    sigma_kernel: float = DEFAULT_SIMILARITY.sigma_kernel

    def predict_zeta(self, s):
        return np.exp(self.w0 + self.w1 * np.asarray(s, dtype=float))

    def to_json(self) -> str:
        d = {"w0": self.w0, "w1": self.w1, "C": self.n_bins, "N": self.n_samples,
             "method": self.method, "beta": self.beta, "sigma_kernel": self.sigma_kernel}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> GeoModel:
        d = json.loads(text)
        return cls(float(d["w0"]), float(d["w1"]), int(d.get("C", 0)), int(d.get("N", 0)),
                   str(d.get("method", "mle")), float(d.get("beta", DEFAULT_SIMILARITY.beta)),
                   float(d.get("sigma_kernel", DEFAULT_SIMILARITY.sigma_kernel)))

    def similarity_config(self, missing_value: float = DEFAULT_SIMILARITY.missing_value) -> SimilarityConfig:
        return SimilarityConfig(self.beta, self.sigma_kernel, missing_value)


def rayleigh_moments(zeta):
    """(mean, variance) of a Rayleigh distribution with scale ``zeta``."""
    zeta = np.asarray(zeta, dtype=float)
    mu, var = zeta * MEAN_FACTOR, VAR_FACTOR * zeta * zeta
    if mu.ndim == 0:
        return float(mu), float(var)
    return mu, var


def predict(model: GeoModel, s) -> tuple:
    """Expected distance and its variance for similarity ``s`` (scalar or array)."""
    s_arr = np.asarray(s, dtype=float)
    if np.any((s_arr < 0) | (s_arr > 1)):
        raise ValueError("similarity must lie in [0, 1]")
    return rayleigh_moments(model.predict_zeta(s_arr))


# -- step 1 + 2: sampling and metrics ------------------------------------------


def sample_pairs(
    trajectories: Sequence[Trajectory],
    n_per_traj: int = 100,
    seed: int = 0,
    simcfg: SimilarityConfig = DEFAULT_SIMILARITY,
    max_pair_gap: float | None = None,
) -> list[PairSample]:
    """Random intra-trajectory pairs of radio-tagged steps with (distance, similarity).

    Pairs are drawn with replacement; the two steps of a pair always differ.
    Each trajectory gets its own child seed, so adding a trajectory does not
    change the samples drawn from the others.
    """
    if n_per_traj < 1:
        raise ValueError("n_per_traj must be >= 1")
    children = np.random.SeedSequence(seed).spawn(len(trajectories))
    out: list[PairSample] = []
    for traj, child in zip(trajectories, children):
        idx = traj.rf_indices()
        m = len(idx)
        if m < 2:
            logger.warning("trajectory %s has %d radio-tagged steps; skipped for sampling", traj.id, m)
            continue
        rng = np.random.default_rng(child)
        a = rng.integers(0, m, n_per_traj)
        b = rng.integers(0, m - 1, n_per_traj)
        b = np.where(b >= a, b + 1, b)
        steps = traj.steps
        for ka, kb in zip(a, b):
            sa, sb = steps[idx[ka]], steps[idx[kb]]
            d = euclidean_distance(sa.pose, sb.pose)
            if max_pair_gap is not None and d > max_pair_gap:
                continue
            g = compound_similarity(sa.observation, sb.observation, simcfg)
            out.append(PairSample(d, min(max(g, 0.0), 1.0)))
    return out


# -- step 3: binning -------------------------------------------------------------


def bin_index(similarity, n_bins: int):
    """Equal-width bin index on [0, 1]; similarity 1.0 belongs to the last bin."""
    s = np.asarray(similarity, dtype=float)
    return np.minimum((s * n_bins).astype(np.int64), n_bins - 1)


def bin_samples(samples: Sequence[PairSample], n_bins: int = 20, min_count: int = 30) -> list[SimilarityBin]:
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    sims = np.array([s.similarity for s in samples], dtype=float)
    dists = np.array([s.distance for s in samples], dtype=float)
    idx = bin_index(sims, n_bins) if len(samples) else np.zeros(0, dtype=np.int64)
    half = 0.5 / n_bins
    bins = []
    for i in range(n_bins):
        members = dists[idx == i]
        if len(members) >= min_count and len(members) > 0:
            bins.append(SimilarityBin((i + 0.5) / n_bins, half, tuple(members.tolist())))
    if not bins:
        raise InsufficientDataError("insufficient data for model fit: every bin is under-populated")
    return bins


# -- step 4: Rayleigh scale per bin ---------------------------------------------


def estimate_zeta(distances: Sequence[float], method: str = "mle", grid_points: int = 512) -> float:
    """Rayleigh scale of a sample of distances.

    ``mle`` is the closed-form maximum-likelihood estimate. ``kde`` smooths the
    sample with a Gaussian kernel (Silverman bandwidth) and returns the mode,
    which for a Rayleigh density coincides with the scale.
    """
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("cannot estimate zeta from an empty sample")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and non-negative")
    if method not in METHODS:
        raise ValueError(f"unknown estimation method {method!r}")
    if not np.any(d > 0):
        logger.warning("degenerate bin: all %d distances are zero", d.size)
        return 0.0
    if method == "mle":
        return float(math.sqrt(np.sum(d * d) / (2.0 * d.size)))
    if d.size < 2 or np.ptp(d) == 0.0:
        return float(d[0])
    kde = gaussian_kde(d, bw_method="silverman")
    grid = np.linspace(0.0, float(d.max()), grid_points)
    return float(grid[int(np.argmax(kde(grid)))])


# -- step 5: log-linear fit --------------------------------------------------------


def fit_log_linear(bins: Sequence[SimilarityBin], method: str = "mle",
                   simcfg: SimilarityConfig = DEFAULT_SIMILARITY) -> GeoModel:
    """Count-weighted least squares of ``log(zeta)`` against bin centre."""
    centers, logz, weights = [], [], []
    for b in bins:
        z = estimate_zeta(b.distances, method)
        if z <= 0:
            continue
        centers.append(b.center)
        logz.append(math.log(z))
        weights.append(b.count)
    if len(centers) < 2:
        raise InsufficientDataError(f"need at least 2 usable bins for the fit, have {len(centers)}")
    c = np.asarray(centers)
    y = np.asarray(logz)
    sw = np.sqrt(np.asarray(weights, dtype=float))
    A = np.column_stack([np.ones_like(c), c]) * sw[:, None]
    (w0, w1), *_ = np.linalg.lstsq(A, y * sw, rcond=None)
    n = int(sum(b.count for b in bins))
    return GeoModel(float(w0), float(w1), len(bins), n, method, simcfg.beta, simcfg.sigma_kernel)


@dataclass(frozen=True)
class FitDiagnostics:
    centers: tuple[float, ...]
    zetas: tuple[float, ...]
    counts: tuple[int, ...]

    def rows(self):
        return list(zip(self.centers, self.zetas, self.counts))


def fit_geomodel(
    trajectories: Sequence[Trajectory],
    simcfg: SimilarityConfig = DEFAULT_SIMILARITY,
    n_bins: int = 20,
    min_count: int = 30,
    n_per_traj: int = 100,
    method: str = "mle",
    seed: int = 0,
    max_pair_gap: float | None = None,
) -> tuple[GeoModel, FitDiagnostics]:
    """Run the whole sample -> bin -> estimate -> fit chain."""
    samples = sample_pairs(trajectories, n_per_traj, seed, simcfg, max_pair_gap)
    bins = bin_samples(samples, n_bins, min_count)
    model = fit_log_linear(bins, method, simcfg)
    model = GeoModel(model.w0, model.w1, model.n_bins, len(samples), method, simcfg.beta, simcfg.sigma_kernel)
    zetas = tuple(estimate_zeta(b.distances, method) for b in bins)
    diag = FitDiagnostics(tuple(b.center for b in bins), zetas, tuple(b.count for b in bins))
    logger.info("geomodel: w0=%.4f w1=%.4f from %d samples in %d bins", model.w0, model.w1, len(samples), len(bins))
    return model, diag
