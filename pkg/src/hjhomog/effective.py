"""Effective Lagrangian and Hamiltonian estimates.

``L_bar(h)`` is estimated from normalized minimal actions
``phi(x, x + Phi_{1/n}(h), n, omega) / n`` along an increasing horizon schedule; the
last-horizon value is the estimate and the recent variation is kept as an error bar.
Estimates are averaged over environments, replaced by their lower convex envelope and
conjugated on a momentum grid to give ``H_bar``.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .action import ActionCache, ActionTable, Lattice, action_tables, rescaled_action
from .media import CoercivityEnvelope, EnvironmentSample, Medium, sample_environment

__all__ = [
    "ConvexInterpolant",
    "DirectionGrid",
    "EffectiveTable",
    "GridBoundaryError",
    "SubadditiveSeries",
    "TwoPointReport",
    "double_conjugate_gap",
    "effective_hamiltonian",
    "effective_lagrangian_table",
    "homogeneity_check",
    "lower_convex_envelope",
    "phi_map",
    "subadditive_estimate",
    "two_point_check",
    "uniform_points",
]


class GridBoundaryError(RuntimeError):
    """A discrete conjugate or interpolation needed values beyond the direction grid."""


def phi_map(eps: float, h) -> np.ndarray:
    """Rounding map ``Phi_eps(h) = floor(h / eps)`` in the standard basis of Z^b.

    Quotients within ``1e-9`` (relative) of an integer are snapped to it first, so
    ``Phi_{1/n}(k/n) = k`` despite binary rounding of ``k/n``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = np.atleast_1d(np.asarray(h, dtype=float)) / eps
    r = np.round(v)
    v = np.where(np.abs(v - r) <= 1e-9 * np.maximum(1.0, np.abs(v)), r, v)
    return np.floor(v).astype(np.int64)


def uniform_points(dim: int, radius: float, step: float, disc: bool = False) -> np.ndarray:
    m = int(round(radius / step))
    axis = np.arange(-m, m + 1) * step
    if dim == 1:
        return axis[:, None]
    pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), -1).reshape(-1, dim)
    if disc:
        pts = pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]
    return pts


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """Finite symmetric set of directions ``h`` containing 0."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if len(pts) == 0:
            raise ValueError("direction grid is empty")
        keys = {tuple(np.round(p, 12)) for p in pts}
        if len(keys) != len(pts):
            raise ValueError("direction grid has repeated points")
        if tuple(np.zeros(pts.shape[1])) not in {tuple(abs(v) for v in k) for k in keys}:
            raise ValueError("direction grid must contain 0")
        if any(tuple(np.round(-p, 12) + 0.0) not in keys for p in pts):
            raise ValueError("direction grid must be symmetric under negation")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, dim: int, radius: float, step: float, disc: bool = False) -> DirectionGrid:
        return cls(uniform_points(dim, radius, step, disc))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def basis(self) -> np.ndarray:
        return np.eye(self.dim, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.points)

    def lookup(self, h) -> int | None:
        h = np.atleast_1d(np.asarray(h, dtype=float))
        hit = np.flatnonzero(np.all(np.abs(self.points - h) <= 1e-9, axis=1))
        return int(hit[0]) if hit.size else None

    def boundary_mask(self) -> np.ndarray:
        """Points with an axis neighbour (at the grid spacing) missing from the grid."""
        return _boundary_mask(self.points)


def _boundary_mask(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return np.ones(len(pts), dtype=bool)
    mask = np.zeros(len(pts), dtype=bool)
    keys = {tuple(np.round(p, 9)) for p in pts}
    for ax in range(pts.shape[1]):
        vals = np.unique(pts[:, ax])
        step = np.min(np.diff(vals)) if len(vals) > 1 else 1.0
        e = np.zeros(pts.shape[1])
        e[ax] = step
        for i, p in enumerate(pts):
            if (tuple(np.round(p + e, 9)) not in keys) or (tuple(np.round(p - e, 9)) not in keys):
                mask[i] = True
    return mask


# ------------------------------------------------------------------ subadditive series


@dataclass
class SubadditiveSeries:
    h: np.ndarray
    omega: EnvironmentSample
    schedule: tuple[int, ...]
    values: np.ndarray
    base: np.ndarray

    @property
    def limit(self) -> float:
        return float(self.values[-1])

    @property
    def spread(self) -> float:
        k = len(self.values)
        tail = self.values[max(0, k - 3):]
        return float(np.max(np.abs(tail - self.values[-1])))

    def to_dict(self) -> dict:
        return {"h": self.h.tolist(), "seed": self.omega.seed, "schedule": list(self.schedule),
                "values": self.values.tolist(), "limit": self.limit, "spread": self.spread,
                "base": self.base.tolist()}


def _check_schedule(schedule) -> tuple[int, ...]:
    sched = tuple(int(n) for n in schedule)
    if not sched or any(n <= 0 for n in sched) or any(b <= a for a, b in zip(sched, sched[1:])):
        raise ValueError("schedule must be a nonempty increasing list of positive horizons")
    if any(n != s for n, s in zip(sched, schedule)):
        raise ValueError("schedule horizons must be integers")
    return sched


def _series_values(tables: Sequence[ActionTable], h: np.ndarray, base: np.ndarray) -> np.ndarray:
    out = []
    for tab in tables:
        n = int(round(tab.horizon))
        target = base + phi_map(1.0 / n, h)
        out.append(tab.value_at(target) / n)
    return np.asarray(out)


def _check_cone(points: np.ndarray, sched: Sequence[int], lattice: Lattice):
    for n in sched:
        d = np.linalg.norm(np.vstack([phi_map(1.0 / n, h) for h in points]), axis=1)
        if np.any(d >= lattice.speed_cap * n):
            raise ValueError(
                f"direction grid reaches distance {d.max() / n:.4g} per unit time, "
                f"not below the speed cap {lattice.speed_cap}")


def subadditive_estimate(medium: Medium, omega: EnvironmentSample, h, schedule,
                         lattice: Lattice, base=None,
                         cache: ActionCache | None = None) -> SubadditiveSeries:
    """``a_j = phi(x, x + Phi_{1/n_j}(h), n_j, omega) / n_j`` along the schedule."""
    sched = _check_schedule(schedule)
    h = np.atleast_1d(np.asarray(h, dtype=float))
    base = np.zeros(medium.dim) if base is None else np.atleast_1d(np.asarray(base, dtype=float))
    _check_cone(h[None], sched, lattice)
    tables = action_tables(medium, omega, base, sched, lattice, cache)
    return SubadditiveSeries(h, omega, sched, _series_values(tables, h, base), base)


# ------------------------------------------------------------------ convex envelopes


class ConvexInterpolant:
    """Lower convex envelope of samples, evaluated inside the sample hull.

    1D: piecewise linear through the lower hull vertices.  2D: maximum of the affine
    functions spanned by the lower facets of the lifted point set.
    """

    def __init__(self, points, values):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        vals = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("envelope input contains non-finite values")
        self.dim = pts.shape[1]
        self.lo = pts.min(axis=0)
        self.hi = pts.max(axis=0)
        self._pts = pts
        if self.dim == 1:
            order = np.argsort(pts[:, 0], kind="stable")
            x, y = pts[order, 0], vals[order]
            hull: list[int] = []
            for i in range(len(x)):
                while len(hull) >= 2:
                    a, b = hull[-2], hull[-1]
                    # drop b when it lies on or above the chord a -> i
                    if (y[b] - y[a]) * (x[i] - x[a]) >= (y[i] - y[a]) * (x[b] - x[a]):
                        hull.pop()
                    else:
                        break
                hull.append(i)
            self._hx = x[hull]
            self._hy = y[hull]
        else:
            lifted = np.column_stack([pts, vals])
            try:
                hull = ConvexHull(lifted)
                eq = hull.equations[hull.equations[:, -2] < -1e-12]
                self._planes = np.column_stack([-eq[:, :-2] / eq[:, -2:-1], -eq[:, -1] / eq[:, -2]])
            except QhullError:
                # coplanar samples: the envelope is their common affine function
                A = np.column_stack([pts, np.ones(len(pts))])
                coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
                self._planes = coef[None, :]
            self._hull_pts = pts
            if len(pts) > 2:
                try:
                    self._domain = ConvexHull(pts)
                except QhullError:
                    self._domain = None
            else:
                self._domain = None

    def contains(self, h) -> np.ndarray:
        h = np.atleast_2d(np.asarray(h, dtype=float))
        if self.dim == 1:
            h = h.reshape(-1, 1)
            return (h[:, 0] >= self.lo[0] - 1e-12) & (h[:, 0] <= self.hi[0] + 1e-12)
        if self._domain is None:
            return np.all((h >= self.lo - 1e-12) & (h <= self.hi + 1e-12), axis=1)
        eq = self._domain.equations
        return np.all(h @ eq[:, :-1].T + eq[:, -1] <= 1e-9, axis=1)

    def __call__(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        scalar = h.ndim == 0 or (self.dim > 1 and h.ndim == 1)
        flat = h.reshape(-1, self.dim)
        if not np.all(self.contains(flat)):
            raise GridBoundaryError("evaluation point outside the direction grid hull")
        if self.dim == 1:
            out = np.interp(flat[:, 0], self._hx, self._hy)
        else:
            out = np.max(flat @ self._planes[:, :-1].T + self._planes[:, -1], axis=1)
        if scalar:
            return out.reshape(())
        return out.reshape(h.shape[:-1] if self.dim > 1 or (h.ndim > 1 and h.shape[-1] == 1) else h.shape)


def lower_convex_envelope(points, values) -> np.ndarray:
    """Values of the lower convex envelope at the sample points (never above the input)."""
    vals = np.asarray(values, dtype=float)
    env = ConvexInterpolant(points, vals)
    pts = np.asarray(points, dtype=float).reshape(len(vals), -1)
    return np.minimum(env(pts).reshape(len(vals)), vals)


# ----------------------------------------------------------------------- tables


@dataclass(eq=False)
class EffectiveTable:
    grid: DirectionGrid
    raw: np.ndarray
    convexified: np.ndarray
    per_seed: np.ndarray
    omega_spread: np.ndarray
    schedule_spread: np.ndarray
    unconverged: np.ndarray
    envelope: CoercivityEnvelope | None = None
    medium_kind: str = ""
    medium_id: str = ""
    provenance: dict = field(default_factory=dict)
    momentum_grid: np.ndarray | None = None
    H_bar: np.ndarray | None = None
    argmax: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.grid.dim

    def interpolant(self) -> ConvexInterpolant:
        return ConvexInterpolant(self.grid.points, self.convexified)

    def L_bar(self, h):
        return self.interpolant()(h)

    def value(self, h, which: str = "convexified") -> float:
        idx = self.grid.lookup(h)
        if idx is None:
            raise KeyError(f"{h!r} is not a grid direction")
        return float(getattr(self, which)[idx])

    def relative_omega_spread(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.omega_spread == 0, 0.0, self.omega_spread / np.abs(self.raw))

    def sandwich(self) -> dict:
        """Violations of ``lower_L(|h|) <= L_bar(h) <= upper_L(|h|)`` on the grid."""
        if self.envelope is None:
            return {"lower_violation": float("nan"), "upper_violation": float("nan")}
        r = np.linalg.norm(self.grid.points, axis=1)
        lo = self.envelope.theta_L_lower(r)
        hi = self.envelope.theta_L_upper(r)
        return {"lower_violation": float(np.max(lo - self.convexified)),
                "upper_violation": float(np.max(self.convexified - hi))}

    def midpoint_defect(self) -> float:
        """Largest ``conv(mid) - (conv(a) + conv(b)) / 2`` over grid triples."""
        pts = self.grid.points
        worst = -np.inf
        for i in range(len(pts)):
            mids = 0.5 * (pts[i] + pts)
            for j in range(len(pts)):
                k = self.grid.lookup(mids[j])
                if k is not None:
                    d = self.convexified[k] - 0.5 * (self.convexified[i] + self.convexified[j])
                    worst = max(worst, d)
        return float(worst)

    # export
    def lagrangian_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"h{i}" for i in range(self.dim)]
                   + ["raw", "convexified", "omega_spread", "schedule_spread"])
        for p, a, b, c, d in zip(self.grid.points, self.raw, self.convexified,
                                 self.omega_spread, self.schedule_spread):
            w.writerow([_fmt(v) for v in p] + [_fmt(a), _fmt(b), _fmt(c), _fmt(d)])
        return buf.getvalue()

    def hamiltonian_csv(self) -> str:
        if self.H_bar is None:
            raise ValueError("effective Hamiltonian not computed")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"P{i}" for i in range(self.dim)] + ["H_bar"])
        for p, v in zip(self.momentum_grid, self.H_bar):
            w.writerow([_fmt(x) for x in p] + [_fmt(v)])
        return buf.getvalue()

    def metadata(self) -> dict:
        meta = {"medium_id": self.medium_id, "medium_kind": self.medium_kind,
                "directions": len(self.grid),
                "unconverged": [self.grid.points[i].tolist()
                                for i in np.flatnonzero(self.unconverged)]}
        meta.update(self.provenance)
        if self.momentum_grid is not None:
            meta["momenta"] = len(self.momentum_grid)
        return meta

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), sort_keys=True, indent=2) + "\n"


def _fmt(v) -> str:
    return format(float(v), ".17g")


def effective_lagrangian_table(medium: Medium, grid: DirectionGrid, seeds: Sequence[int],
                               schedule: Sequence[int], lattice: Lattice,
                               base_points=None, unconverged_fraction: float = 0.1,
                               workers: int = 1,
                               cache: ActionCache | None = None) -> EffectiveTable:
    """Average subadditive estimates over environments and convexify.

    For each seed the estimate at ``h`` is the smallest last-horizon value over the
    supplied base points (a single base point 0 by default).  All directions are read
    off one DP run per (seed, base point).
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed is required")
    if grid.dim != medium.dim:
        raise ValueError("direction grid dimension does not match the medium")
    sched = _check_schedule(schedule)
    bases = np.zeros((1, medium.dim)) if base_points is None else \
        np.asarray(base_points, dtype=float).reshape(-1, medium.dim)
    _check_cone(grid.points, sched, lattice)

    def task(seed, base):
        omega = sample_environment(medium, seed)
        tables = action_tables(medium, omega, base, sched, lattice, cache)
        return np.stack([_series_values(tables, h, base) for h in grid.points])

    jobs = [(s, b) for s in seeds for b in bases]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: task(*j), jobs))
    else:
        results = [task(*j) for j in jobs]

    nb = len(bases)
    per_seed = np.empty((len(seeds), len(grid)))
    sched_spread = np.zeros(len(grid))
    chosen = []
    for si in range(len(seeds)):
        series = np.stack(results[si * nb:(si + 1) * nb])  # (bases, M, horizons)
        pick = np.argmin(series[:, :, -1], axis=0)
        chosen.append(pick)
        best = series[pick, np.arange(len(grid))]
        per_seed[si] = best[:, -1]
        k = best.shape[1]
        tail = best[:, max(0, k - 3):]
        sp = np.max(np.abs(tail - best[:, -1:]), axis=1)
        sched_spread = np.maximum(sched_spread, sp)
    raw = np.zeros(len(grid))
    for row in per_seed:
        raw = raw + row
    raw = raw / len(seeds)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite effective Lagrangian estimate; widen the lattice")
    omega_spread = per_seed.max(axis=0) - per_seed.min(axis=0)
    conv = lower_convex_envelope(grid.points, raw)
    unconverged = (sched_spread > unconverged_fraction * np.abs(raw)) & (sched_spread > 1e-12)
    prov = {"seeds": seeds, "schedule": list(sched), "lattice": lattice.to_dict(),
            "base_points": bases.tolist(), "unconverged_fraction": unconverged_fraction}
    return EffectiveTable(grid, raw, conv, per_seed, omega_spread, sched_spread, unconverged,
                          medium.envelope, medium.kind, medium.medium_id, prov)


def effective_hamiltonian(table: EffectiveTable, momentum_grid) -> EffectiveTable:
    """Discrete conjugate ``H_bar(P) = max_h P.h - L_bar(h)`` over the direction grid."""
    P = np.asarray(momentum_grid, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[1] != table.dim:
        raise ValueError("momentum grid dimension does not match the table")
    scores = P @ table.grid.points.T - table.convexified[None, :]
    arg = np.argmax(scores, axis=1)
    edge = table.grid.boundary_mask()
    if np.any(edge[arg]):
        bad = P[edge[arg]][0]
        raise GridBoundaryError(
            f"conjugate argmax at P={bad.tolist()} lies on the direction grid boundary; "
            "widen the direction grid or shrink the momentum range")
    H = scores[np.arange(len(P)), arg]
    return replace(table, momentum_grid=P, H_bar=H, argmax=arg)


def double_conjugate_gap(table: EffectiveTable) -> tuple[float, float]:
    """Gap between ``H_bar*`` and the convexified table, and its grid tolerance.

    Only directions whose conjugating momentum is interior to the momentum grid are
    compared; elsewhere the momentum range cannot reproduce the table.
    """
    if table.H_bar is None:
        raise ValueError("effective Hamiltonian not computed")
    P = table.momentum_grid
    h = table.grid.points
    scores = h @ P.T - table.H_bar[None, :]
    arg = np.argmax(scores, axis=1)
    interior = ~_boundary_mask(P)[arg]
    back = scores[np.arange(len(h)), arg]
    gap = float(np.max(np.abs(back - table.convexified)[interior])) if interior.any() else 0.0
    return gap, _step_modulus(P, table.H_bar)


def _step_modulus(pts: np.ndarray, vals: np.ndarray) -> float:
    """Largest change of ``vals`` between axis neighbours of the grid ``pts``."""
    keys = {tuple(np.round(p, 9)): i for i, p in enumerate(pts)}
    worst = 0.0
    for ax in range(pts.shape[1]):
        uniq = np.unique(pts[:, ax])
        if len(uniq) < 2:
            continue
        e = np.zeros(pts.shape[1])
        e[ax] = np.min(np.diff(uniq))
        for i, p in enumerate(pts):
            j = keys.get(tuple(np.round(p + e, 9)))
            if j is not None:
                worst = max(worst, abs(float(vals[j] - vals[i])))
    return worst


# ----------------------------------------------------------------------- checks


@dataclass
class TwoPointReport:
    h: list
    h_prime: list
    t: float
    eps: list
    values: list
    target: float
    gaps: list

    @property
    def decreased(self) -> bool:
        return self.gaps[-1] <= 0.5 * self.gaps[0]

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["decreased"] = self.decreased
        return d


def two_point_check(medium: Medium, omega: EnvironmentSample, h, h_prime, t: float,
                    eps_list: Sequence[float], lattice: Lattice, table: EffectiveTable,
                    base=None, cache: ActionCache | None = None) -> TwoPointReport:
    """Compare ``phi_eps(Phi_eps(h') x, Phi_eps(h) x, t)`` with ``t L_bar((h - h') / t)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be decreasing")
    h = np.atleast_1d(np.asarray(h, dtype=float))
    hp = np.atleast_1d(np.asarray(h_prime, dtype=float))
    base = np.zeros(medium.dim) if base is None else np.atleast_1d(np.asarray(base, dtype=float))
    target = float(t * table.L_bar(((h - hp) / t)[None])[0])
    vals, gaps = [], []
    for e in eps_list:
        v = rescaled_action(medium, omega, e, base + phi_map(e, hp), base + phi_map(e, h),
                            t, lattice, cache)
        vals.append(v)
        gaps.append(abs(v - target))
    return TwoPointReport(h.tolist(), hp.tolist(), t, eps_list, vals, target, gaps)


def homogeneity_check(table: EffectiveTable, lambdas: Sequence[float] = (-1.0, 0.5, 2.0),
                      degree: float = 2.0) -> dict[str, Any]:
    """Max of ``|L(lam h) - |lam|^deg L(h)| / (1 + |L(lam h)|)`` over grid pairs."""
    if table.medium_kind != "metric":
        raise ValueError("homogeneity check applies to metric media only")
    pts = table.grid.points
    conv = table.convexified
    per = {}
    for lam in lambdas:
        worst = 0.0
        pairs = 0
        for i, h in enumerate(pts):
            j = table.grid.lookup(lam * h)
            if j is None:
                continue
            pairs += 1
            d = abs(conv[j] - abs(lam) ** degree * conv[i]) / (1.0 + abs(conv[j]))
            worst = max(worst, float(d))
        per[repr(float(lam))] = {"defect": worst, "pairs": pairs}
    return {"per_lambda": per, "max_defect": max(v["defect"] for v in per.values())}
