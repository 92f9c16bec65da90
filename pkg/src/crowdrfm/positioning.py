"""Radio fingerprint map (RFM) and kNN positioning on compound similarity."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from crowdrfm.core import RfObservation, Trajectory
from crowdrfm.similarity import DEFAULT_SIMILARITY, SignalMatrix, SimilarityConfig, pairwise_similarity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RfmEntry:
    x: float
    y: float
    floor: int
    observation: RfObservation

    def __post_init__(self):
        if self.observation.is_empty():
            raise ValueError("RFM entries need a non-empty observation")


@dataclass
class Rfm:
    """Immutable-by-convention list of fingerprints; the signal matrix is cached."""

    entries: tuple[RfmEntry, ...] = ()
    _matrix: SignalMatrix | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def matrix(self) -> SignalMatrix:
        if self._matrix is None:
            self._matrix = SignalMatrix([e.observation for e in self.entries])
        return self._matrix

    @property
    def positions(self) -> np.ndarray:
        return np.array([(e.x, e.y) for e in self.entries], dtype=float).reshape(-1, 2)

    @property
    def floors(self) -> np.ndarray:
        return np.array([e.floor for e in self.entries], dtype=np.int64)


def build_rfm(trajectories: Iterable[Trajectory]) -> Rfm:
    """One entry per radio-tagged step, at its (common-frame) position."""
    entries = []
    for t in trajectories:
        for k in t.rf_indices():
            s = t.steps[k]
            if s.observation.is_empty():
                continue
            entries.append(RfmEntry(s.pose.x, s.pose.y, t.floor, s.observation))
    if not entries:
        logger.warning("built an empty RFM")
    return Rfm(tuple(entries))


@dataclass(frozen=True)
class Neighbor:
    index: int
    distance: float


@dataclass(frozen=True)
class Estimate:
    x: float
    y: float
    floor: int
    neighbors: tuple[Neighbor, ...]


def _vote(floors: np.ndarray) -> int:
    counts = Counter(floors.tolist())
    best = max(counts.values())
    winners = [f for f, c in counts.items() if c == best]
    if len(winners) == 1:
        return int(winners[0])
    return int(floors[0])  # tie: nearest neighbour decides


def _locate_row(rfm: Rfm, dist: np.ndarray, k: int, weighted: bool) -> Estimate:
    order = np.argsort(dist, kind="stable")[:k]
    pos = rfm.positions[order]
    if weighted:
        w = np.maximum(1.0 - dist[order], 0.0)
        xy = pos.mean(0) if w.sum() <= 0 else (w[:, None] * pos).sum(0) / w.sum()
    else:
        xy = pos.mean(0)
    floor = _vote(rfm.floors[order])
    nb = tuple(Neighbor(int(i), float(dist[i])) for i in order)
    return Estimate(float(xy[0]), float(xy[1]), floor, nb)


def _check_k(rfm: Rfm, k: int) -> int:
    if len(rfm) == 0:
        raise ValueError("cannot position against an empty RFM")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(rfm):
        logger.warning("k=%d exceeds RFM size %d; using all entries", k, len(rfm))
        return len(rfm)
    return k


def knn_locate(rfm: Rfm, query: RfObservation, k: int = 5,
               simcfg: SimilarityConfig = DEFAULT_SIMILARITY, weighted: bool = False) -> Estimate:
    """Mean position of the k entries closest in ``1 - g``; floor by majority vote."""
    return locate_many(rfm, [query], k, simcfg, weighted)[0]


def locate_many(rfm: Rfm, queries: Sequence[RfObservation], k: int = 5,
                simcfg: SimilarityConfig = DEFAULT_SIMILARITY, weighted: bool = False) -> list[Estimate]:
    k = _check_k(rfm, k)
    if not queries:
        return []
    g = pairwise_similarity(SignalMatrix(queries), rfm.matrix, simcfg)
    dist = 1.0 - g
    return [_locate_row(rfm, dist[r], k, weighted) for r in range(len(queries))]


def write_rfm_jsonl(rfm: Rfm, path) -> None:
    with open(path, "w") as fh:
        for e in rfm.entries:
            rec = {"x": e.x, "y": e.y, "floor": e.floor, "readings": e.observation.to_dict()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_rfm_jsonl(path) -> Rfm:
    entries = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                entries.append(RfmEntry(float(d["x"]), float(d["y"]), int(d["floor"]),
                                        RfObservation({str(a): float(v) for a, v in d["readings"].items()})))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: bad RFM record ({exc})") from exc
    return Rfm(tuple(entries))
