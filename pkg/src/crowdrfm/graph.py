"""Planar pose graph with odometry and radio-range edges, plus an LM solver.

Odometry edges follow the motion-control model::

    h(p_i, p_j) = R(theta_i) @ (p_i - p_j)        (x-y part)
                  theta_i - theta_j                (wrapped)

with ``R`` the usual counter-clockwise rotation. Note this is *not* the
``R^T (p_j - p_i)`` form common in SLAM codes; measurements must be built with
the same function (:func:`imu_predict`), which the pipeline does. The cost
is invariant under ``p -> R(phi) p + t, theta -> theta - phi``
(:func:`gauge_transform`).

Radio edges are range constraints ``|p_i - p_j| = mu`` with scalar
information, wrapped in a Huber kernel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import cvxopt
from cvxopt import cholmod

from crowdrfm.core import Pose2D, wrap_angle, wrap_angles

logger = logging.getLogger(__name__)

IMU_INFO_POS = 500.0
IMU_INFO_HEADING = 70.0
_MIN_DIST = 1e-6

FORMAT_HEADER = "# crowdrfm-posegraph v1"


class UnderconstrainedGraphError(RuntimeError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImuEdge:
    i: int
    j: int
    z: tuple[float, float, float]
    a: float = IMU_INFO_POS
    b: float = IMU_INFO_HEADING

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("information coefficients must be positive")
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))

    @property
    def info(self) -> np.ndarray:
        return np.diag([self.a, self.a, self.b])


@dataclass(frozen=True)
class RfEdge:
    i: int
    j: int
    mu_d: float
    info_scalar: float
    similarity: float = float("nan")

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("radio edge must join two distinct nodes")
        if not (self.mu_d > 0 and self.info_scalar > 0):
            raise ValueError("mu_d and info_scalar must be positive")


@dataclass
class PoseGraph:
    """Nodes are stored as an (n, 3) array of [x, y, theta]."""

    nodes: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    imu_edges: list[ImuEdge] = field(default_factory=list)
    rf_edges: list[RfEdge] = field(default_factory=list)
    anchored: set[int] = field(default_factory=set)
    keys: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3).copy()

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def add_node(self, pose: Pose2D | Sequence[float], key: tuple[str, int] | None = None) -> int:
        p = pose.as_array() if isinstance(pose, Pose2D) else np.asarray(pose, dtype=float)
        self.nodes = np.vstack([self.nodes, p[None, :]])
        self.keys.append(key if key is not None else ("", self.n_nodes - 1))
        return self.n_nodes - 1

    def pose(self, i: int) -> Pose2D:
        return Pose2D.from_array(self.nodes[i])

    def validate(self):
        n = self.n_nodes
        for e in list(self.imu_edges) + list(self.rf_edges):
            if not (0 <= e.i < n and 0 <= e.j < n):
                raise ValueError(f"edge ({e.i}, {e.j}) references a missing node")
        for a in self.anchored:
            if not 0 <= a < n:
                raise ValueError(f"anchor {a} is not a node")

    def components(self) -> list[list[int]]:
        """Connected components over all edges, each sorted; ordered by smallest id."""
        n = self.n_nodes
        if n == 0:
            return []
        ii = [e.i for e in self.imu_edges] + [e.i for e in self.rf_edges]
        jj = [e.j for e in self.imu_edges] + [e.j for e in self.rf_edges]
        adj = sp.coo_matrix((np.ones(len(ii)), (ii, jj)), shape=(n, n))
        ncomp, labels = sp.csgraph.connected_components(adj, directed=False)
        comps: list[list[int]] = [[] for _ in range(ncomp)]
        for node, lab in enumerate(labels):
            comps[lab].append(node)
        return sorted(comps, key=lambda c: c[0])

    def ensure_anchors(self) -> list[int]:
        """Anchor the first node of every component that has no anchor yet."""
        added = []
        for comp in self.components():
            if not self.anchored.intersection(comp):
                self.anchored.add(comp[0])
                added.append(comp[0])
        return added


# -- measurement models ---------------------------------------------------


def imu_predict(pi: Pose2D, pj: Pose2D) -> np.ndarray:
    """Motion-control prediction between two poses (see module docstring)."""
    c, s = math.cos(pi.theta), math.sin(pi.theta)
    dx, dy = pi.x - pj.x, pi.y - pj.y
    return np.array([c * dx - s * dy, s * dx + c * dy, wrap_angle(pi.theta - pj.theta)])


def imu_residual(e: ImuEdge, graph: PoseGraph) -> tuple[np.ndarray, np.ndarray]:
    r = imu_predict(graph.pose(e.i), graph.pose(e.j)) - np.asarray(e.z)
    r[2] = wrap_angle(r[2])
    return r, e.info


def rf_residual(e: RfEdge, graph: PoseGraph) -> tuple[float, float]:
    pi, pj = graph.nodes[e.i], graph.nodes[e.j]
    d = math.hypot(pi[0] - pj[0], pi[1] - pj[1])
    return d - e.mu_d, e.info_scalar


def gauge_transform(poses: np.ndarray, phi: float, t: Sequence[float]) -> np.ndarray:
    """Apply the rigid symmetry of the odometry model to an (n, 3) pose array."""
    poses = np.asarray(poses, dtype=float)
    c, s = math.cos(phi), math.sin(phi)
    out = np.empty_like(poses)
    out[:, 0] = c * poses[:, 0] - s * poses[:, 1] + t[0]
    out[:, 1] = s * poses[:, 0] + c * poses[:, 1] + t[1]
    out[:, 2] = wrap_angles(poses[:, 2] - phi)
    return out


# -- vectorized evaluation ------------------------------------------------


@dataclass
class _EdgeArrays:
    imu_i: np.ndarray
    imu_j: np.ndarray
    imu_z: np.ndarray
    imu_w: np.ndarray  # (m, 3) diagonal information
    rf_i: np.ndarray
    rf_j: np.ndarray
    rf_mu: np.ndarray
    rf_w: np.ndarray

    @classmethod
    def from_graph(cls, g: PoseGraph) -> _EdgeArrays:
        im, rf = g.imu_edges, g.rf_edges
        return cls(
            np.array([e.i for e in im], dtype=np.int64),
            np.array([e.j for e in im], dtype=np.int64),
            np.array([e.z for e in im], dtype=float).reshape(-1, 3),
            np.array([(e.a, e.a, e.b) for e in im], dtype=float).reshape(-1, 3),
            np.array([e.i for e in rf], dtype=np.int64),
            np.array([e.j for e in rf], dtype=np.int64),
            np.array([e.mu_d for e in rf], dtype=float),
            np.array([e.info_scalar for e in rf], dtype=float),
        )


def imu_residuals(x: np.ndarray, ea: _EdgeArrays) -> np.ndarray:
    pi, pj = x[ea.imu_i], x[ea.imu_j]
    c, s = np.cos(pi[:, 2]), np.sin(pi[:, 2])
    dx, dy = pi[:, 0] - pj[:, 0], pi[:, 1] - pj[:, 1]
    r = np.empty((len(ea.imu_i), 3))
    r[:, 0] = c * dx - s * dy - ea.imu_z[:, 0]
    r[:, 1] = s * dx + c * dy - ea.imu_z[:, 1]
    r[:, 2] = wrap_angles(pi[:, 2] - pj[:, 2] - ea.imu_z[:, 2])
    return r


def imu_jacobians(x: np.ndarray, ea: _EdgeArrays):
    """Per-edge Jacobian blocks (m, 3, 3) with respect to node i and node j."""
    pi, pj = x[ea.imu_i], x[ea.imu_j]
    c, s = np.cos(pi[:, 2]), np.sin(pi[:, 2])
    dx, dy = pi[:, 0] - pj[:, 0], pi[:, 1] - pj[:, 1]
    m = len(ea.imu_i)
    ji = np.zeros((m, 3, 3))
    ji[:, 0, 0], ji[:, 0, 1] = c, -s
    ji[:, 1, 0], ji[:, 1, 1] = s, c
    ji[:, 0, 2] = -s * dx - c * dy
    ji[:, 1, 2] = c * dx - s * dy
    ji[:, 2, 2] = 1.0
    jj = np.zeros((m, 3, 3))
    jj[:, :2, :2] = -ji[:, :2, :2]
    jj[:, 2, 2] = -1.0
    return ji, jj


def rf_residuals(x: np.ndarray, ea: _EdgeArrays) -> np.ndarray:
    d = np.hypot(x[ea.rf_i, 0] - x[ea.rf_j, 0], x[ea.rf_i, 1] - x[ea.rf_j, 1])
    return d - ea.rf_mu


def rf_jacobians(x: np.ndarray, ea: _EdgeArrays):
    """Unit direction (m, 2) from j to i; derivative wrt p_i is u, wrt p_j is -u."""
    diff = x[ea.rf_i, :2] - x[ea.rf_j, :2]
    d = np.hypot(diff[:, 0], diff[:, 1])
    small = d < _MIN_DIST
    u = np.empty_like(diff)
    u[~small] = diff[~small] / d[~small, None]
    u[small] = (1.0, 0.0)
    return u


def huber(s: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Huber kernel on squared whitened residuals: (rho(s), rho'(s))."""
    d2 = delta * delta
    root = np.sqrt(np.maximum(s, 0.0))
    inlier = s <= d2
    rho = np.where(inlier, s, 2.0 * delta * root - d2)
    with np.errstate(divide="ignore"):
        drho = np.where(inlier, 1.0, delta / np.where(inlier, 1.0, root))
    return rho, drho


def edge_costs(x: np.ndarray, ea: _EdgeArrays, delta: float | None):
    """(imu chi2 per edge, robustified rf chi2 per edge, raw rf chi2)."""
    r = imu_residuals(x, ea)
    imu_chi2 = np.einsum("mk,mk->m", r * ea.imu_w, r)
    rr = rf_residuals(x, ea)
    rf_raw = ea.rf_w * rr * rr
    rf_rob = huber(rf_raw, delta)[0] if delta is not None else rf_raw
    return imu_chi2, rf_rob, rf_raw


def total_cost(graph: PoseGraph, huber_delta: float | None = 1.0) -> float:
    ea = _EdgeArrays.from_graph(graph)
    a, b, _ = edge_costs(graph.nodes, ea, huber_delta)
    return float(a.sum() + b.sum())


# -- solver -----------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    cost_tol: float = 1e-6
    step_tol: float = 1e-9
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    max_lambda: float = 1e12
    huber_delta: float | None = 1.0
    auto_anchor: bool = True

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.huber_delta is not None and not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive or None")


@dataclass(frozen=True)
class OptimizeReport:
    poses: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    accepted: int
    cost_history: tuple[float, ...]
    imu_chi2: np.ndarray
    rf_chi2: np.ndarray
    termination: str

    @property
    def converged(self) -> bool:
        return self.termination in ("cost_tol", "step_tol", "zero_gradient")


def _assemble(x, ea, var_of, n_var, delta):
    """Gauss-Newton system (H, g) with robust reweighting on radio edges."""
    rows, cols, vals = [], [], []
    g = np.zeros(n_var)

    # odometry
    r = imu_residuals(x, ea)
    ji, jj = imu_jacobians(x, ea)
    w = ea.imu_w
    wr = r * w
    node_var = var_of  # per node: first var index or -1
    vi, vj = node_var[ea.imu_i], node_var[ea.imu_j]
    jwi = ji * w[:, :, None]  # W J_i
    jwj = jj * w[:, :, None]
    hii = np.einsum("mki,mkj->mij", ji, jwi)
    hjj = np.einsum("mki,mkj->mij", jj, jwj)
    hij = np.einsum("mki,mkj->mij", ji, jwj)
    gi = np.einsum("mki,mk->mi", ji, wr)
    gj = np.einsum("mki,mk->mi", jj, wr)
    _scatter_pairs(rows, cols, vals, vi, vj, hii, hjj, hij, 3)
    _scatter_grad(g, vi, gi, 3)
    _scatter_grad(g, vj, gj, 3)

    # radio ranges: only x, y of each node
    if len(ea.rf_i):
        rr = rf_residuals(x, ea)
        u = rf_jacobians(x, ea)
        s = ea.rf_w * rr * rr
        drho = huber(s, delta)[1] if delta is not None else np.ones_like(s)
        w_eff = ea.rf_w * drho
        uu = np.einsum("mi,mj->mij", u, u) * w_eff[:, None, None]
        ui, uj = node_var[ea.rf_i], node_var[ea.rf_j]
        _scatter_pairs(rows, cols, vals, ui, uj, uu, uu, -uu, 2)
        gr = u * (w_eff * rr)[:, None]
        _scatter_grad(g, ui, gr, 2)
        _scatter_grad(g, uj, -gr, 2)

    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    H = sp.csc_matrix((vals, (rows, cols)), shape=(n_var, n_var))
    return H, g


def _scatter_pairs(rows, cols, vals, vi, vj, hii, hjj, hij, dim):
    ar = np.arange(dim)
    for va, vb, blk in ((vi, vi, hii), (vj, vj, hjj), (vi, vj, hij), (vj, vi, np.transpose(hij, (0, 2, 1)))):
        ok = (va >= 0) & (vb >= 0)
        if not ok.any():
            continue
        a, b = va[ok], vb[ok]
        r = np.broadcast_to(a[:, None, None] + ar[None, :, None], (len(a), dim, dim))
        c = np.broadcast_to(b[:, None, None] + ar[None, None, :], (len(a), dim, dim))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(blk[ok, :dim, :dim].ravel())


def _scatter_grad(g, v, gv, dim):
    ok = v >= 0
    if not ok.any():
        return
    idx = v[ok][:, None] + np.arange(dim)[None, :]
    np.add.at(g, idx.ravel(), gv[ok, :dim].ravel())


def _apply_step(x, free, delta):
    out = x.copy()
    out[free] += delta.reshape(-1, 3)
    out[:, 2] = wrap_angles(out[:, 2])
    return out


class _LinearSolver:
    """Solves (H + lambda * D) dx = -g for successive lambdas (sparse Cholesky)."""

    def __init__(self, H, g):
        self.H, self.g = H.tocoo(), g
        self.diag = H.diagonal().copy()
        self.diag[self.diag <= 0] = 1.0
        self.damp_floor = 1e-12 * self.diag.max() if self.diag.size else 0.0

    def solve(self, lam):
        n = self.H.shape[0]
        d = np.arange(n)
        rows = np.concatenate([self.H.row, d])
        cols = np.concatenate([self.H.col, d])
        vals = np.concatenate([self.H.data, lam * self.diag + self.damp_floor])
        A = cvxopt.spmatrix(vals.tolist(), rows.tolist(), cols.tolist(), (n, n))
        b = cvxopt.matrix(-self.g)
        try:
            factor = cholmod.symbolic(A)
            cholmod.numeric(A, factor)
            cholmod.solve(factor, b)
        except ArithmeticError as exc:
            raise UnderconstrainedGraphError("underconstrained graph: normal equations not positive definite") from exc
        dx = np.array(b).ravel()
        if not np.all(np.isfinite(dx)):
            raise UnderconstrainedGraphError("underconstrained graph: singular normal equations")
        return dx


def optimize(graph: PoseGraph, cfg: SolverConfig = SolverConfig()) -> OptimizeReport:
    """Levenberg-Marquardt on all non-anchored poses; updates ``graph.nodes`` in place."""
    graph.validate()
    if cfg.auto_anchor:
        added = graph.ensure_anchors()
        if added:
            logger.debug("auto-anchored nodes %s", added)
    else:
        for comp in graph.components():
            if not graph.anchored.intersection(comp):
                raise UnderconstrainedGraphError(f"underconstrained graph: component starting at node {comp[0]} has no anchor")

    ea = _EdgeArrays.from_graph(graph)
    n = graph.n_nodes
    free = np.ones(n, dtype=bool)
    free[list(graph.anchored)] = False
    free_nodes = np.flatnonzero(free)
    var_of = np.full(n, -1, dtype=np.int64)
    var_of[free_nodes] = 3 * np.arange(len(free_nodes))
    n_var = 3 * len(free_nodes)
    delta = cfg.huber_delta

    def cost_of(x):
        a, b, _ = edge_costs(x, ea, delta)
        c = float(a.sum() + b.sum())
        if not math.isfinite(c):
            bad_imu = np.flatnonzero(~np.isfinite(a))
            bad_rf = np.flatnonzero(~np.isfinite(b))
            which = f"imu edge {bad_imu[0]}" if len(bad_imu) else f"rf edge {bad_rf[0]}"
            raise NumericalError(f"non-finite cost at {which}")
        return c

    x = graph.nodes.copy()
    cost = cost_of(x)
    initial = cost
    history = [cost]
    lam = cfg.initial_lambda
    it = accepted = 0
    termination = "max_iterations"

    if n_var == 0:
        termination = "no_free_variables"
    while n_var and it < cfg.max_iterations:
        if cost == 0.0:
            termination = "zero_gradient"
            break
        H, g = _assemble(x, ea, var_of, n_var, delta)
        if np.max(np.abs(g)) < 1e-15:
            termination = "zero_gradient"
            break
        solver = _LinearSolver(H, g)
        improved = False
        while True:
            it += 1
            dx = solver.solve(lam)
            x_new = _apply_step(x, free_nodes, dx)
            new_cost = cost_of(x_new)
            if new_cost <= cost:
                improved = True
                break
            lam *= cfg.lambda_up
            if lam > cfg.max_lambda or it >= cfg.max_iterations:
                break
        if not improved:
            termination = "lambda_overflow" if lam > cfg.max_lambda else "max_iterations"
            break
        rel = (cost - new_cost) / max(cost, 1e-300)
        step = float(np.linalg.norm(dx))
        x, cost = x_new, new_cost
        history.append(cost)
        accepted += 1
        logger.debug("iter %d: cost %.6g lambda %.3g step %.3g", it, cost, lam, step)
        lam = max(lam * cfg.lambda_down, 1e-12)
        if rel < cfg.cost_tol:
            termination = "cost_tol"
            break
        if step < cfg.step_tol * (1.0 + float(np.linalg.norm(x[free_nodes]))):
            termination = "step_tol"
            break

    graph.nodes = x
    imu_chi2, rf_chi2, _ = edge_costs(x, ea, delta)
    logger.info(
        "optimize: %d iterations (%d accepted), cost %.6g -> %.6g [%s]",
        it, accepted, initial, cost, termination,
    )
    return OptimizeReport(x.copy(), initial, cost, it, accepted, tuple(history), imu_chi2, rf_chi2, termination)


def prune_edges(graph: PoseGraph, chi2_threshold: float = 5.99, huber_delta: float | None = 1.0) -> int:
    """Drop radio edges whose robustified chi2 exceeds the threshold."""
    if not graph.rf_edges:
        return 0
    ea = _EdgeArrays.from_graph(graph)
    _, rob, _ = edge_costs(graph.nodes, ea, huber_delta)
    keep = ~(rob > chi2_threshold)
    if chi2_threshold <= 0:
        keep[:] = False
    removed = int((~keep).sum())
    graph.rf_edges = [e for e, k in zip(graph.rf_edges, keep) if k]
    return removed


# -- text format --------------------------------------------------------------


def dump_graph(graph: PoseGraph, path) -> None:
    lines = [FORMAT_HEADER]
    for k, (x, y, th) in enumerate(graph.nodes.tolist()):
        lines.append(f"NODE {k} {x!r} {y!r} {th!r}")
        if k < len(graph.keys) and graph.keys[k][0]:
            lines.append(f"NODE_KEY {k} {graph.keys[k][0]} {graph.keys[k][1]}")
    for a in sorted(graph.anchored):
        lines.append(f"FIX {a}")
    for e in graph.imu_edges:
        z0, z1, z2 = (float(v) for v in e.z)
        lines.append(f"EDGE_IMU {e.i} {e.j} {z0!r} {z1!r} {z2!r} {float(e.a)!r} {float(e.b)!r}")
    for e in graph.rf_edges:
        lines.append(f"EDGE_RF {e.i} {e.j} {float(e.mu_d)!r} {float(e.info_scalar)!r} {float(e.similarity)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph(path) -> PoseGraph:
    nodes: dict[int, tuple[float, float, float]] = {}
    keys: dict[int, tuple[str, int]] = {}
    g = PoseGraph()
    with open(path) as fh:
        first = fh.readline().strip()
        if first != FORMAT_HEADER:
            raise ValueError(f"unsupported pose-graph header: {first!r}")
        for lineno, line in enumerate(fh, start=2):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            tag = tok[0]
            try:
                if tag == "NODE":
                    nodes[int(tok[1])] = (float(tok[2]), float(tok[3]), float(tok[4]))
                elif tag == "NODE_KEY":
                    keys[int(tok[1])] = (tok[2], int(tok[3]))
                elif tag == "FIX":
                    g.anchored.add(int(tok[1]))
                elif tag == "EDGE_IMU":
                    g.imu_edges.append(ImuEdge(int(tok[1]), int(tok[2]), tuple(map(float, tok[3:6])), float(tok[6]), float(tok[7])))
                elif tag == "EDGE_RF":
                    g.rf_edges.append(RfEdge(int(tok[1]), int(tok[2]), float(tok[3]), float(tok[4]), float(tok[5])))
                else:
                    raise ValueError(f"unknown record {tag!r}")
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    ids = sorted(nodes)
    if ids != list(range(len(ids))):
        raise ValueError("node ids must be contiguous from 0")
    g.nodes = np.array([nodes[k] for k in ids], dtype=float).reshape(-1, 3)
    g.keys = [keys.get(k, ("", k)) for k in ids]
    g.validate()
    return g
