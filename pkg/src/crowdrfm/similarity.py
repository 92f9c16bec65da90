"""Similarity measures between radio observations.

Three measures are provided: Jaccard similarity of the heard-source sets, a
Gaussian-kernelized mean L1 distance of signal strengths, and their weighted
harmonic mean (the "compound" similarity used everywhere downstream).

Scalar functions operate on single observation pairs. :class:`SignalMatrix`
gives the same numbers for whole batches at once and is what loop closure and
kNN positioning use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from crowdrfm.core import RfObservation


@dataclass(frozen=True)
class SimilarityConfig:
    beta: float = 1.0
    sigma_kernel: float = 10.0
    missing_value: float = -100.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.sigma_kernel > 0:
            raise ValueError(f"sigma_kernel must be positive, got {self.sigma_kernel}")
        if not math.isfinite(self.missing_value):
            raise ValueError("missing_value must be finite")


DEFAULT_SIMILARITY = SimilarityConfig()


def jaccard(oi: RfObservation, oj: RfObservation) -> float:
    """|A_i & A_j| / |A_i | A_j|; 0 when both observations are empty."""
    a, b = oi.ids, oj.ids
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def kernelized_l1(oi: RfObservation, oj: RfObservation, cfg: SimilarityConfig = DEFAULT_SIMILARITY) -> float:
    """Gaussian kernel of the mean absolute signal gap over the union of sources."""
    union = oi.ids | oj.ids
    if not union:
        raise ValueError("no common support: both observations are empty")
    miss = cfg.missing_value
    ri, rj = oi.readings, oj.readings
    # fixed summation order keeps the result exactly symmetric
    total = math.fsum(abs(ri.get(a, miss) - rj.get(a, miss)) for a in sorted(union))
    m = total / len(union)
    return math.exp(-(m * m) / (2.0 * cfg.sigma_kernel**2))


def harmonic_combine(g_jac, g_l1, beta: float = 1.0):
    """Weighted harmonic mean (F-beta form) of two similarities.

    Works on scalars or arrays; returns 0 wherever the denominator vanishes.
    """
    b2 = beta * beta
    g_jac = np.asarray(g_jac, dtype=float)
    g_l1 = np.asarray(g_l1, dtype=float)
    den = b2 * g_jac + g_l1
    num = (1.0 + b2) * g_jac * g_l1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def compound_similarity(oi: RfObservation, oj: RfObservation, cfg: SimilarityConfig = DEFAULT_SIMILARITY) -> float:
    g_jac = jaccard(oi, oj)
    if g_jac == 0.0:
        return 0.0
    return harmonic_combine(g_jac, kernelized_l1(oi, oj, cfg), cfg.beta)


class SignalMatrix:
    """Dense batch representation of a list of observations.

    Rows are observations, columns are source identifiers (the union
    vocabulary of everything passed in, plus any ``vocabulary`` given).
    """

    def __init__(self, observations: Sequence[RfObservation], vocabulary: Sequence[str] | None = None):
        vocab = list(vocabulary) if vocabulary is not None else []
        seen = set(vocab)
        for obs in observations:
            for a in obs.readings:
                if a not in seen:
                    seen.add(a)
                    vocab.append(a)
        self.vocabulary = vocab
        self.index = {a: i for i, a in enumerate(vocab)}
        n, m = len(observations), len(vocab)
        values = np.full((n, m), np.nan)
        for r, obs in enumerate(observations):
            for a, v in obs.readings.items():
                values[r, self.index[a]] = v
        self.values = values
        self.present = ~np.isnan(values)
        self.counts = self.present.sum(axis=1)

    def __len__(self) -> int:
        return self.values.shape[0]

    def aligned_to(self, vocabulary: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Values/presence re-indexed to another vocabulary; unknown ids dropped."""
        n = len(self)
        values = np.full((n, len(vocabulary)), np.nan)
        for j, a in enumerate(vocabulary):
            i = self.index.get(a)
            if i is not None:
                values[:, j] = self.values[:, i]
        return values, ~np.isnan(values)

    def filled(self, missing_value: float) -> np.ndarray:
        return np.where(self.present, self.values, missing_value)


def _pairwise_parts(va, pa, vb, pb, cfg):
    inter = pa.astype(np.float64) @ pb.T.astype(np.float64)
    union = pa.sum(1)[:, None] + pb.sum(1)[None, :] - inter
    fa = np.where(pa, va, cfg.missing_value)
    fb = np.where(pb, vb, cfg.missing_value)
    # sources absent on both sides contribute |miss - miss| = 0, so the full
    # L1 over the vocabulary equals the L1 over the union
    l1 = cdist(fa, fb, metric="cityblock")
    with np.errstate(invalid="ignore", divide="ignore"):
        g_jac = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        m = np.where(union > 0, l1 / np.where(union > 0, union, 1.0), 0.0)
    g_l1 = np.exp(-(m * m) / (2.0 * cfg.sigma_kernel**2))
    return g_jac, g_l1


def pairwise_similarity(
    a: SignalMatrix,
    b: SignalMatrix | None = None,
    cfg: SimilarityConfig = DEFAULT_SIMILARITY,
    block: int = 2048,
) -> np.ndarray:
    """Compound similarity for every row of ``a`` against every row of ``b``."""
    if b is None:
        b = a
    vocab = list(a.vocabulary)
    extra = [x for x in b.vocabulary if x not in a.index]
    vocab += extra
    va, pa = a.aligned_to(vocab) if extra else (a.values, a.present)
    vb, pb = b.aligned_to(vocab)
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), block):
        g_jac, g_l1 = _pairwise_parts(va[s : s + block], pa[s : s + block], vb, pb, cfg)
        out[s : s + block] = harmonic_combine(g_jac, g_l1, cfg.beta)
    return out


def row_block_components(matrix: SignalMatrix, rows: np.ndarray, cfg: SimilarityConfig = DEFAULT_SIMILARITY):
    """(jaccard, kernelized L1) of the selected rows against every row of ``matrix``."""
    return _pairwise_parts(matrix.values[rows], matrix.present[rows], matrix.values, matrix.present, cfg)


def pairwise_components(a: SignalMatrix, b: SignalMatrix, cfg: SimilarityConfig = DEFAULT_SIMILARITY):
    """(jaccard, kernelized L1) matrices; mostly for diagnostics and tests."""
    vocab = list(a.vocabulary) + [x for x in b.vocabulary if x not in a.index]
    va, pa = a.aligned_to(vocab)
    vb, pb = b.aligned_to(vocab)
    return _pairwise_parts(va, pa, vb, pb, cfg)
