"""Stable norms of periodic Riemannian metrics on R^n.

Two independent engines:

* the ergodic route ``||h|| = L_bar(h) ** 0.5`` with ``L(x, v) = g_x(v, v)``, fed by the
  effective-Lagrangian pipeline;
* the classical route ``lim l(n h) / n`` with lengths from Dijkstra shortest paths on a
  fine lattice graph whose edges are weighted by the metric at their midpoints.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .effective import EffectiveTable
from .media import CoercivityEnvelope, Medium, PowerProfile

__all__ = [
    "MetricFamily",
    "StableNormTable",
    "audit_metric_family",
    "metric_medium",
    "norm_audit",
    "path_length",
    "periodic_stable_norm",
    "stationary_stable_norm",
]


@dataclass(frozen=True, eq=False)
class MetricFamily:
    """Periodic metric ``g_x`` given by ``g(x) -> (..., n, n)``.

    ``bounds = (lo, hi)`` are the constants in ``lo |v|^2 <= g_x(v, v) <= hi |v|^2``.
    ``factor`` is set for conformal metrics ``g = factor(x) * id`` and enables a fast path.
    """

    dim: int
    g: Callable[[np.ndarray], np.ndarray]
    bounds: tuple[float, float]
    description: dict = field(default_factory=dict)
    factor: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def flat(cls, dim: int = 2) -> MetricFamily:
        return cls.conformal(0.0, dim)

    @classmethod
    def conformal(cls, a: float, dim: int = 2) -> MetricFamily:
        """``g = (1 + a cos(2 pi x_1))^2 id`` with ``|a| < 1``."""
        a = float(a)
        if not abs(a) < 1:
            raise ValueError("conformal amplitude must satisfy |a| < 1")

        def factor(x):
            return (1.0 + a * np.cos(2 * np.pi * x[..., 0])) ** 2

        def g(x):
            return factor(x)[..., None, None] * np.eye(dim)

        name = "flat" if a == 0 else "conformal"
        return cls(dim, g, ((1 - abs(a)) ** 2, (1 + abs(a)) ** 2),
                   {"preset": name, "amplitude": a, "dim": dim}, factor)

    @classmethod
    def from_spec(cls, spec: dict, dim: int) -> MetricFamily:
        spec = dict(spec)
        kind = spec.pop("preset")
        if kind == "flat":
            out = cls.flat(dim)
        elif kind == "conformal":
            out = cls.conformal(spec.pop("amplitude"), dim)
        else:
            raise ValueError(f"unknown metric preset {kind!r}")
        if spec:
            raise ValueError(f"unknown metric parameters {sorted(spec)}")
        return out

    def quad(self, x, v) -> np.ndarray:
        """``g_x(v, v)``."""
        if self.factor is not None:
            return self.factor(x) * np.sum(v * v, axis=-1)
        G = self.g(x)
        return np.einsum("...i,...ij,...j->...", v, G, v)

    def dual_quad(self, x, p) -> np.ndarray:
        """``p^T g_x^{-1} p``."""
        if self.factor is not None:
            return np.sum(p * p, axis=-1) / self.factor(x)
        G = self.g(x)
        sol = np.linalg.solve(G, p[..., None])[..., 0]
        return np.sum(p * sol, axis=-1)


def audit_metric_family(family: MetricFamily, budget: int = 1000, seed: int = 0,
                        tol: float = 1e-10) -> dict:
    """Symmetry, positive definiteness, the two-sided bound and periodicity on samples."""
    rng = np.random.default_rng(seed)
    n = family.dim
    x = rng.uniform(-5, 5, (budget, n))
    k = rng.integers(-5, 6, (budget, n))
    v = rng.normal(size=(budget, n))
    G = np.asarray(family.g(x), dtype=float)
    sym = float(np.max(np.abs(G - np.swapaxes(G, -1, -2))))
    eig = float(np.min(np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, -1, -2)))))
    q = family.quad(x, v)
    vv = np.sum(v * v, axis=-1)
    lo, hi = family.bounds
    slack = float(min(np.min(q - lo * vv), np.min(hi * vv - q)))
    stat = float(np.max(np.abs(np.asarray(family.g(x + k)) - G)))
    passed = {"symmetric": sym <= tol, "positive_definite": eig > 0,
              "bounds": slack >= -1e-12 and lo > 0, "stationary": stat <= tol}
    return {"symmetry_defect": sym, "min_eigenvalue": eig, "bound_slack": slack,
            "stationarity_defect": stat, "passed": passed, "all_passed": all(passed.values())}


def metric_medium(family: MetricFamily, audit_budget: int = 1000) -> Medium:
    """Medium with ``L(x, v) = g_x(v, v)`` and ``H(x, p) = p^T g_x^{-1} p / 4``."""
    rep = audit_metric_family(family, audit_budget)
    if not rep["passed"]["positive_definite"] or not rep["passed"]["symmetric"]:
        raise ValueError(f"metric family is not symmetric positive definite: {rep}")
    lo, hi = family.bounds
    envelope = CoercivityEnvelope(PowerProfile(0.25 / hi, 2.0), PowerProfile(0.25 / lo, 2.0))

    def hamiltonian(x, p, params):
        x, p = np.broadcast_arrays(x, p)
        return 0.25 * family.dual_quad(x, p)

    def lagrangian(x, v, params):
        x, v = np.broadcast_arrays(x, v)
        return family.quad(x, v)

    desc = {"kind": "metric", "dim": family.dim, "metric": family.description}
    return Medium(family.dim, "metric", hamiltonian, lagrangian, envelope, None, desc,
                  homogeneity=2.0)


# ----------------------------------------------------------------------- tables


@dataclass(eq=False)
class StableNormTable:
    points: np.ndarray
    values: np.ndarray
    method: str
    spread: np.ndarray
    provenance: dict = field(default_factory=dict)
    audit: dict | None = None

    def value(self, h) -> float:
        h = np.atleast_1d(np.asarray(h, dtype=float))
        hit = np.flatnonzero(np.all(np.abs(self.points - h) <= 1e-9, axis=1))
        if hit.size == 0:
            raise KeyError(f"{h.tolist()} is not in the table")
        return float(self.values[hit[0]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"h{i}" for i in range(self.points.shape[1])] + ["norm", "method", "spread"])
        for p, v, s in zip(self.points, self.values, self.spread):
            w.writerow([format(float(c), ".17g") for c in p]
                       + [format(float(v), ".17g"), self.method, format(float(s), ".17g")])
        return buf.getvalue()


def stationary_stable_norm(table: EffectiveTable, tolerance: float = 0.05) -> StableNormTable:
    """Pointwise square root of the convexified effective Lagrangian of a metric medium."""
    if table.medium_kind != "metric":
        raise ValueError("stable norm requires an effective table of a metric medium")
    conv = table.convexified
    if np.any(conv < -1e-12):
        bad = table.grid.points[np.argmin(conv)].tolist()
        raise ValueError(f"negative effective Lagrangian {conv.min():.3g} at {bad}: pipeline defect")
    vals = np.sqrt(np.maximum(conv, 0.0))
    spread = np.maximum(table.schedule_spread, table.omega_spread)
    out = StableNormTable(table.grid.points.copy(), vals, "ergodic", spread,
                          {"medium_id": table.medium_id, **table.provenance})
    out.audit = norm_audit(out, tolerance)
    return out


# ---------------------------------------------------------------------- Dijkstra


def _edge_offsets(reach: int = 2) -> np.ndarray:
    offs = [(i, j) for i in range(-reach, reach + 1) for j in range(-reach, reach + 1)
            if (i, j) != (0, 0) and math.gcd(abs(i), abs(j)) == 1]
    return np.array(offs, dtype=np.int64)


def _graph(family: MetricFamily, lo: np.ndarray, shape: tuple[int, int], res: int, reach: int):
    if family.dim != 2:
        raise NotImplementedError("the lattice graph is implemented in dimension 2")
    step = 1.0 / res
    n0, n1 = shape
    ids = np.arange(n0 * n1).reshape(shape)
    rows, cols, wts = [], [], []
    for di, dj in _edge_offsets(reach):
        a0, a1 = max(0, -di), max(0, -dj)
        b0, b1 = min(n0, n0 - di), min(n1, n1 - dj)
        if a0 >= b0 or a1 >= b1:
            continue
        I, J = np.meshgrid(np.arange(a0, b0), np.arange(a1, b1), indexing="ij")
        src = np.stack([I, J], -1)
        mid = lo + (src + 0.5 * np.array([di, dj])) * step
        e = np.array([di, dj], dtype=float) * step
        w = np.sqrt(family.quad(mid, np.broadcast_to(e, mid.shape)))
        rows.append(ids[I, J].ravel())
        cols.append(ids[I + di, J + dj].ravel())
        wts.append(w.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    wts = np.concatenate(wts)
    return coo_matrix((wts, (rows, cols)), shape=(n0 * n1, n0 * n1)).tocsr()


def path_length(family: MetricFamily, start, end, res: int = 40, reach: int = 2,
                margin: float = 1.0, sources=None) -> float:
    """Shortest graph length from ``start + s`` to ``end + s``, minimized over offsets ``s``."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    sources = np.zeros((1, 2)) if sources is None else np.asarray(sources, dtype=float)
    lo = np.minimum(start, end) + sources.min(axis=0) - margin
    hi = np.maximum(start, end) + sources.max(axis=0) + margin
    lo = np.floor(lo * res) / res
    shape = tuple(int(round((hi[d] - lo[d]) * res)) + 1 for d in range(2))
    graph = _graph(family, lo, shape, res, reach)

    def node(p):
        ij = np.round((p - lo) * res).astype(np.int64)
        if np.any(np.abs(ij / res + lo - p) > 1e-9):
            raise ValueError(f"{p.tolist()} is not a graph node at resolution {res}")
        return int(ij[0] * shape[1] + ij[1])

    src_ids = [node(start + s) for s in sources]
    dst_ids = [node(end + s) for s in sources]
    dist = dijkstra(graph, directed=True, indices=src_ids)
    vals = dist[np.arange(len(src_ids)), dst_ids]
    if not np.all(np.isfinite(vals)):
        raise ValueError("lattice graph is disconnected between the endpoints; refine it")
    return float(np.min(vals))


def periodic_stable_norm(family: MetricFamily, h, schedule: Sequence[int] = (2, 4, 8),
                         res: int = 40, reach: int = 2,
                         base_points=None) -> tuple[float, float, list[float]]:
    """``l(n_k h) / n_k`` with recorded spread; ``h`` must be integral.

    Closed curves in the class ``h`` may sit anywhere in the cell, so the length is
    minimized over ``base_points`` (default: a 4 x 4 grid in the unit cell).
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if np.any(np.abs(h - np.round(h)) > 0):
        raise ValueError("the classical stable norm is evaluated on integral classes")
    if base_points is None:
        ax = np.arange(4) / 4.0
        base_points = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    series = []
    for n in schedule:
        if np.all(h == 0):
            series.append(0.0)
            continue
        series.append(path_length(family, np.zeros(2), n * h, res, reach,
                                  sources=base_points) / n)
    k = len(series)
    tail = np.asarray(series[max(0, k - 3):])
    return series[-1], float(np.max(np.abs(tail - series[-1]))), series


def periodic_norm_table(family: MetricFamily, points, schedule=(2, 4, 8), res: int = 40,
                        reach: int = 2, tolerance: float = 0.05) -> StableNormTable:
    pts = np.asarray(points, dtype=float).reshape(-1, family.dim)
    vals, spr = [], []
    for h in pts:
        v, s, _ = periodic_stable_norm(family, h, schedule, res, reach)
        vals.append(v)
        spr.append(s)
    out = StableNormTable(pts, np.asarray(vals), "periodic-oracle", np.asarray(spr),
                          {"schedule": list(schedule), "resolution": res, "reach": reach})
    out.audit = norm_audit(out, tolerance)
    return out


# -------------------------------------------------------------------------- audit


def norm_audit(table: StableNormTable, tolerance: float = 0.05,
               lambdas: Sequence[float] = (-1.0, 0.5, 2.0)) -> dict:
    """Relative violations of positivity, absolute homogeneity and the triangle inequality."""
    pts = table.points
    vals = table.values
    keys = {tuple(np.round(p, 9)): i for i, p in enumerate(pts)}
    nz = np.linalg.norm(pts, axis=1) > 0
    positivity = float(np.sum(vals[nz] <= 0) / max(1, nz.sum()))

    def find(p):
        return keys.get(tuple(np.round(p, 9) + 0.0))

    homog = 0.0
    for lam in lambdas:
        for i, p in enumerate(pts):
            j = find(lam * p)
            if j is None or not nz[i]:
                continue
            homog = max(homog, abs(vals[j] - abs(lam) * vals[i]) / vals[j])
    tri = 0.0
    coll = 0.0
    for i in range(len(pts)):
        for j in range(len(pts)):
            k = find(pts[i] + pts[j])
            if k is None or not (nz[i] and nz[j] and nz[k]):
                continue
            tri = max(tri, max(0.0, vals[k] - vals[i] - vals[j]) / vals[k])
            cross = pts[i][0] * pts[j][-1] - pts[i][-1] * pts[j][0] if pts.shape[1] > 1 else 0.0
            if abs(cross) < 1e-12 and np.dot(pts[i], pts[j]) > 0:
                coll = max(coll, abs(vals[k] - vals[i] - vals[j]) / vals[k])
    out = {"positivity": positivity, "homogeneity": float(homog), "triangle": float(tri),
           "collinear_defect": float(coll), "tolerance": tolerance}
    out["passed"] = bool(max(positivity, homog, tri) <= tolerance)
    return out
