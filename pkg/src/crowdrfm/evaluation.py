"""Error statistics: positioning errors, CEP summaries, ECDF and ATE."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ErrorSummary:
    n: int
    floor_accuracy: float
    min: float
    mean: float
    cep68: float
    cep95: float
    ecdf: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.min <= self.cep68 <= self.cep95:
            raise ValueError("summary must satisfy min <= cep68 <= cep95")

    def to_json(self, include_ecdf: bool = False) -> str:
        d = asdict(self)
        if not include_ecdf:
            d.pop("ecdf")
        else:
            d["ecdf"] = [list(p) for p in self.ecdf]
        return json.dumps(d, indent=2, sort_keys=True)

    def write_ecdf_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["error_m", "cumulative_fraction"])
            for e, q in self.ecdf:
                w.writerow([repr(e), repr(q)])


def positioning_errors(estimates: Sequence, truths: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Planar errors and floor-hit flags.

    Both sequences hold ``(x, y, floor)`` triples (or objects with those
    attributes).
    """
    if len(estimates) != len(truths):
        raise ValueError(f"length mismatch: {len(estimates)} estimates vs {len(truths)} truths")

    def triple(p):
        if hasattr(p, "x"):
            return float(p.x), float(p.y), int(p.floor)
        return float(p[0]), float(p[1]), int(p[2])

    est = [triple(p) for p in estimates]
    tru = [triple(p) for p in truths]
    err = np.array([math.hypot(a[0] - b[0], a[1] - b[1]) for a, b in zip(est, tru)], dtype=float)
    hits = np.array([a[2] == b[2] for a, b in zip(est, tru)], dtype=bool)
    return err, hits


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Value at rank ceil(q * N) (1-based) of an ascending array."""
    n = len(sorted_values)
    rank = min(max(math.ceil(q * n - 1e-12), 1), n)
    return float(sorted_values[rank - 1])


def summarize(errors: Sequence[float], hits: Sequence[bool] | None = None) -> ErrorSummary:
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("cannot summarize an empty error set")
    if np.any(~np.isfinite(e)) or np.any(e < 0):
        raise ValueError("errors must be finite and non-negative")
    h = np.ones(e.size, dtype=bool) if hits is None else np.asarray(hits, dtype=bool)
    if h.size != e.size:
        raise ValueError("errors and hits differ in length")
    s = np.sort(e)
    n = s.size
    ecdf = tuple((float(v), (i + 1) / n) for i, v in enumerate(s))
    return ErrorSummary(n, float(h.mean()), float(s[0]), float(s.mean()),
                        nearest_rank(s, 0.68), nearest_rank(s, 0.95), ecdf)


def rigid_align(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R and translation t minimizing sum |R src + t - dst|^2 (no reflection)."""
    mu_s, mu_d = src.mean(0), dst.mean(0)
    cov = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, d]) @ u.T
    return r, mu_d - r @ mu_s


def ate(aligned, truth) -> float:
    """RMSE after optimal 2D rigid alignment of ``aligned`` onto ``truth``."""
    a = np.asarray(aligned, dtype=float)[:, :2]
    b = np.asarray(truth, dtype=float)[:, :2]
    if a.shape != b.shape:
        raise ValueError("aligned and truth must correspond by index")
    if len(a) < 3:
        raise ValueError("ATE needs at least 3 points")
    r, t = rigid_align(a, b)
    res = a @ r.T + t - b
    return float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
