"""Discrete minimal actions on a space-time lattice.

The engine is a min-plus dynamic program

    out(x) = min_y  in(y) + dt * L(y, (x - y) / dt, omega)

over stencil neighbours ``|x - y| <= A dt``.  Seeding it at a single source point gives
the discrete minimal action ``phi(x', ., t, omega)``; rescaled actions use the identity
``phi_eps(x', x, t) = eps * phi(x', x, t / eps)``.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from ._hashing import digest
from .media import EnvironmentSample, Medium, numeric_legendre

__all__ = [
    "ActionCache",
    "ActionTable",
    "BoundaryContactError",
    "ConeViolationError",
    "Lattice",
    "LatticeError",
    "LipschitzReport",
    "SandwichReport",
    "Stepper",
    "action_tables",
    "lax_oleinik_step",
    "minimal_action",
    "rescaled_action",
    "sandwich_report",
    "suggest_speed_cap",
    "verify_cone_lipschitz",
]

MAGIC = b"HJACT"
FORMAT_VERSION = 1


class LatticeError(ValueError):
    pass


class ConeViolationError(ValueError):
    def __init__(self, distance: float, t: float, speed_cap: float):
        self.required = distance / t if t > 0 else math.inf
        super().__init__(
            f"target at distance {distance:.6g} is outside the cone of slope {speed_cap:.6g} "
            f"at t={t:.6g}; a speed cap above {self.required:.6g} is required")


class BoundaryContactError(ValueError):
    def __init__(self, needed: float, radius: float):
        self.needed = needed
        super().__init__(
            f"propagation reaches distance {needed:.6g} but domain_radius is {radius:.6g}; "
            "increase domain_radius")


@dataclass(frozen=True)
class Lattice:
    """Space step ``dx`` (with ``1/dx`` integral), time step ``dt`` and cone slope ``speed_cap``."""

    dx: float = 0.05
    dt: float = 0.05
    speed_cap: float = 4.0
    domain_radius: float | None = None

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0 and self.speed_cap > 0):
            raise LatticeError("dx, dt and speed_cap must be positive")
        inv = 1.0 / self.dx
        if abs(inv - round(inv)) > 1e-9 * inv:
            raise LatticeError(f"1/dx must be an integer so unit translations are lattice maps, got {inv}")
        if self.stencil_radius < 1:
            raise LatticeError(
                f"empty stencil: speed_cap*dt = {self.speed_cap * self.dt:.6g} is below dx = {self.dx:.6g}")

    @property
    def cells(self) -> int:
        """Lattice points per unit length."""
        return int(round(1.0 / self.dx))

    @property
    def stencil_radius(self) -> int:
        return int(math.floor(self.speed_cap * self.dt / self.dx + 1e-9))

    def offsets(self, dim: int) -> np.ndarray:
        """Stencil offsets ``k`` with ``|k| dx <= A dt``, in decreasing lexicographic order."""
        r = self.stencil_radius
        rng = np.arange(r, -r - 1, -1)
        if dim == 1:
            return rng.reshape(-1, 1).astype(np.int64)
        grids = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), -1).reshape(-1, dim)
        reach = (self.speed_cap * self.dt / self.dx) ** 2 * (1 + 1e-12)
        keep = (grids**2).sum(axis=1) <= reach
        return grids[keep].astype(np.int64)

    def steps(self, t: float) -> int:
        s = int(round(t / self.dt))
        if s < 0 or abs(s * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise LatticeError(f"t={t!r} is not a multiple of dt={self.dt!r}")
        return s

    def index(self, x) -> np.ndarray:
        """Integer lattice coordinates of a lattice point."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = np.round(x / self.dx)
        if np.any(np.abs(j * self.dx - x) > 1e-9 * np.maximum(1.0, np.abs(x))):
            raise LatticeError(f"{x.tolist()} is not a lattice point for dx={self.dx}")
        return j.astype(np.int64)

    def reach(self, t: float) -> float:
        return self.stencil_radius * self.dx * self.steps(t)

    def radius_for(self, t: float) -> float:
        need = self.reach(t)
        if self.domain_radius is None:
            return need + 1.0
        if self.domain_radius < need:
            raise BoundaryContactError(need, self.domain_radius)
        return float(self.domain_radius)

    def to_dict(self) -> dict:
        return {"dx": self.dx, "dt": self.dt, "speed_cap": self.speed_cap,
                "domain_radius": self.domain_radius}


# --------------------------------------------------------------------------- stepping


def _cost_table(medium: Medium, omega: EnvironmentSample, lattice: Lattice,
                points: np.ndarray, offs: np.ndarray) -> np.ndarray:
    q = offs * (lattice.dx / lattice.dt)
    q = q.reshape((len(offs),) + (1,) * (points.ndim - 1) + (medium.dim,))
    x = points[None]
    if medium.lagrangian is not None:
        vals = medium.lagrangian(x, q, omega.params)
    else:
        vals = numeric_legendre(medium, np.broadcast_to(x, np.broadcast_shapes(x.shape, q.shape)),
                                np.broadcast_to(q, np.broadcast_shapes(x.shape, q.shape)), omega)
    vals = np.broadcast_to(vals, (len(offs),) + points.shape[:-1])
    return np.ascontiguousarray(lattice.dt * vals, dtype=np.float64)


class Stepper:
    """Lax-Oleinik stepping on a fixed box of lattice points.

    ``j0`` holds the integer lattice coordinates of array index zero and ``shape`` the
    box size.  For media with a singleton environment space the cost table covers one
    unit cell; otherwise it covers the whole box.
    """

    def __init__(self, medium: Medium, omega: EnvironmentSample, lattice: Lattice,
                 j0: Sequence[int], shape: Sequence[int]):
        if medium.dim not in (1, 2):
            raise NotImplementedError("lattice DP is implemented in dimension 1 and 2")
        self.medium, self.omega, self.lattice = medium, omega, lattice
        self.dim = medium.dim
        self.j0 = np.asarray(j0, dtype=np.int64).reshape(self.dim)
        self.shape = tuple(int(s) for s in shape)
        self.offs = lattice.offsets(self.dim)
        if len(self.offs) == 0:
            raise LatticeError("empty stencil")
        if medium.singleton:
            m = lattice.cells
            self.period = m
            self.shift = tuple(int(v) % m for v in self.j0)
            axis = np.arange(m) * lattice.dx
            pts = np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"), -1)
        else:
            self.period = 0
            self.shift = (0,) * self.dim
            axes = [(self.j0[d] + np.arange(self.shape[d])) * lattice.dx for d in range(self.dim)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        self.cost = _cost_table(medium, omega, lattice, pts, self.offs)

    def step(self, u: np.ndarray, box=None) -> tuple[np.ndarray, np.ndarray]:
        """One step; targets outside ``box`` (pairs of index bounds) stay at +inf."""
        if u.shape != self.shape:
            raise ValueError("field shape does not match the stepper box")
        out = np.full(self.shape, np.inf)
        arg = np.full(self.shape, -1, dtype=np.int64)
        if box is None:
            box = [(0, n) for n in self.shape]
        u = np.ascontiguousarray(u, dtype=np.float64)
        if self.dim == 1:
            (lo, hi), = box
            _kernels.step_1d(u, self.cost, self.period, self.shift[0], self.offs[:, 0],
                             lo, hi, out, arg)
        else:
            (lo0, hi0), (lo1, hi1) = box
            _kernels.step_2d(u, self.cost, self.period, self.shift[0], self.shift[1],
                             self.offs, lo0, hi0, lo1, hi1, out, arg)
        return out, arg

    def sources(self, arg: np.ndarray) -> np.ndarray:
        """Array indices of the minimizing source for every target (``-1`` where infinite)."""
        idx = np.indices(self.shape).transpose(tuple(range(1, self.dim + 1)) + (0,))
        src = idx - self.offs[np.maximum(arg, 0)]
        src[arg < 0] = -1
        return src


def lax_oleinik_step(values, omega: EnvironmentSample, medium: Medium, lattice: Lattice,
                     origin=None, return_argmin: bool = False):
    """One DP step applied to a field on a box of lattice points.

    ``origin`` gives the integer lattice coordinates of ``values[0, ...]``; by default
    the box is centred on 0.  Stencils are truncated at the box edge.  With
    ``return_argmin`` the array indices of the minimizing sources are returned too.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != medium.dim:
        raise ValueError("field rank must match the medium dimension")
    if origin is None:
        origin = [-(n // 2) for n in values.shape]
    stepper = Stepper(medium, omega, lattice, origin, values.shape)
    out, arg = stepper.step(values)
    if return_argmin:
        return out, stepper.sources(arg)
    return out


# ----------------------------------------------------------------------- action table


@dataclass(frozen=True, eq=False)
class ActionTable:
    """Discrete ``phi(x', ., t, omega)`` on a box centred at the source.

    Array index ``N`` (per axis) is the source; ``+inf`` marks points outside the cone.
    """

    source: tuple[float, ...]
    horizon: float
    values: np.ndarray
    omega: EnvironmentSample
    medium_id: str
    lattice: Lattice

    @property
    def half_width(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @property
    def dim(self) -> int:
        return self.values.ndim

    def axis(self, d: int = 0) -> np.ndarray:
        return self.source[d] + (np.arange(self.values.shape[d]) - self.half_width) * self.lattice.dx

    def index_of(self, x) -> tuple[int, ...]:
        j = self.lattice.index(x) - self.lattice.index(self.source)
        idx = j + self.half_width
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.values.shape)):
            raise BoundaryContactError(float(np.max(np.abs(j))) * self.lattice.dx,
                                       self.half_width * self.lattice.dx)
        return tuple(int(i) for i in idx)

    def value_at(self, x) -> float:
        return float(self.values[self.index_of(x)])

    def distances(self) -> np.ndarray:
        axes = [self.axis(d) - self.source[d] for d in range(self.dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.sqrt(sum(g**2 for g in grids))

    def header(self) -> dict:
        return {
            "format": "HJACT",
            "version": FORMAT_VERSION,
            "medium_id": self.medium_id,
            "omega": {"params": [float.hex(p) for p in self.omega.params],
                      "seed": self.omega.seed, "digest": self.omega.digest()},
            "lattice": self.lattice.to_dict(),
            "source": [float.hex(float(s)) for s in self.source],
            "horizon": float.hex(float(self.horizon)),
            "shape": list(self.values.shape),
        }

    def save(self, path) -> None:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        data = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".hjact")
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC + struct.pack("<HI", FORMAT_VERSION, len(head)) + head + data)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> ActionTable:
        raw = Path(path).read_bytes()
        if raw[:5] != MAGIC:
            raise ValueError(f"{path}: not an HJACT file")
        version, hlen = struct.unpack("<HI", raw[5:11])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported HJACT version {version}")
        head = json.loads(raw[11:11 + hlen])
        values = np.frombuffer(raw[11 + hlen:], dtype="<f8").reshape(head["shape"]).astype(float)
        om = head["omega"]
        omega = EnvironmentSample(tuple(float.fromhex(p) for p in om["params"]), om["seed"],
                                  head["medium_id"])
        lat = Lattice(**head["lattice"])
        return cls(tuple(float.fromhex(s) for s in head["source"]),
                   float.fromhex(head["horizon"]), values, omega, head["medium_id"], lat)


class ActionCache:
    """Content-addressed store of action tables under ``root``."""

    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    @staticmethod
    def key(medium: Medium, omega: EnvironmentSample, lattice: Lattice, source, horizon) -> str:
        return digest({"medium": medium.description, "omega": omega.digest(),
                       "lattice": lattice.to_dict(),
                       "source": [float.hex(float(s)) for s in np.atleast_1d(source)],
                       "horizon": float.hex(float(horizon))}, 32)

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.hjact"

    def get(self, key: str) -> ActionTable | None:
        p = self.path(key)
        if p.exists():
            try:
                table = ActionTable.load(p)
            except (ValueError, OSError):
                table = None
            if table is not None:
                with self._lock:
                    self.hits += 1
                return table
        with self._lock:
            self.misses += 1
        return None

    def put(self, key: str, table: ActionTable) -> None:
        table.save(self.path(key))


def action_tables(medium: Medium, omega: EnvironmentSample, source, horizons: Iterable[float],
                  lattice: Lattice, cache: ActionCache | None = None) -> list[ActionTable]:
    """Run one DP seeded at ``source`` and snapshot it at each horizon (ascending)."""
    if omega.medium_id != medium.medium_id:
        raise ValueError("environment sample does not belong to this medium")
    horizons = sorted(float(t) for t in horizons)
    if not horizons or horizons[0] <= 0:
        raise ValueError("horizons must be positive")
    src = np.atleast_1d(np.asarray(source, dtype=float))
    if src.size != medium.dim:
        raise ValueError("source dimension does not match the medium")
    jsrc = lattice.index(src)
    src_t = tuple(float(v) for v in src)

    keys = {}
    found = {}
    if cache is not None:
        for t in horizons:
            keys[t] = ActionCache.key(medium, omega, lattice, src, t)
            hit = cache.get(keys[t])
            if hit is not None:
                found[t] = hit
        if len(found) == len(horizons):
            return [found[t] for t in horizons]

    T = horizons[-1]
    R = lattice.radius_for(T)
    N = int(math.ceil(R / lattice.dx - 1e-9))
    n = 2 * N + 1
    shape = (n,) * medium.dim
    stepper = Stepper(medium, omega, lattice, jsrc - N, shape)
    r = lattice.stencil_radius
    steps = {lattice.steps(t): t for t in horizons}
    u = np.full(shape, np.inf)
    # first slice: one explicit Euler cost from the source
    for k, off in enumerate(stepper.offs):
        idx = tuple(N + off)
        cell = tuple((N + int(s)) % stepper.period if stepper.period else N
                     for s in stepper.shift)
        u[idx] = stepper.cost[(k,) + cell]
    out = []
    last = max(steps)
    s = 1
    if 1 in steps:
        out.append(_snapshot(u, steps[1], src_t, omega, medium, lattice))
    while s < last:
        s += 1
        w = min(N, r * s)
        box = [(N - w, N + w + 1)] * medium.dim
        u, _ = stepper.step(u, box)
        if s in steps:
            out.append(_snapshot(u, steps[s], src_t, omega, medium, lattice))
    if cache is not None:
        for tab in out:
            if tab.horizon not in found:
                cache.put(keys[tab.horizon], tab)
    return out


def _snapshot(u, t, src, omega, medium, lattice):
    return ActionTable(src, t, u.copy(), omega, medium.medium_id, lattice)


def minimal_action(medium: Medium, omega: EnvironmentSample, x_src, x, t: float,
                   lattice: Lattice, cache: ActionCache | None = None) -> float:
    """Discrete ``phi(x', x, t, omega)``; ``x'`` and ``x`` must be lattice points."""
    xs = np.atleast_1d(np.asarray(x_src, dtype=float))
    xt = np.atleast_1d(np.asarray(x, dtype=float))
    d = float(np.linalg.norm(xt - xs))
    if t <= 0 or d >= lattice.speed_cap * t:
        raise ConeViolationError(d, t, lattice.speed_cap)
    table, = action_tables(medium, omega, xs, [t], lattice, cache)
    return table.value_at(xt)


def rescaled_action(medium: Medium, omega: EnvironmentSample, eps: float, x_src, x, t: float,
                    lattice: Lattice, cache: ActionCache | None = None) -> float:
    """``phi_eps(x', x, t) = eps * phi(x', x, t / eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return eps * minimal_action(medium, omega, x_src, x, t / eps, lattice, cache)


def suggest_speed_cap(medium: Medium, distance: float, t: float, safety: float = 1.5) -> float:
    """Cone slope confining minimizers between points at ``distance`` apart in time ``t``.

    A curve whose mean speed is ``r`` costs at least ``t * lower_L(r)`` while the
    straight segment costs at most ``t * upper_L(distance / t)``, so minimizers have mean
    speed at most ``r* = sup{r : lower_L(r) <= upper_L(distance / t)}``.
    """
    env = medium.envelope
    v = distance / t
    r_star = env.theta_L_lower.inverse(float(env.theta_L_upper(v)))
    return safety * max(v, r_star)


# -------------------------------------------------------------------------- audits


@dataclass
class LipschitzReport:
    per_eps: dict[float, dict[str, float]]
    spread: float
    tolerance: float
    cone_slope: float
    bounded: bool

    def to_dict(self) -> dict:
        return {"per_eps": {repr(k): v for k, v in self.per_eps.items()},
                "spread": self.spread, "tolerance": self.tolerance,
                "cone_slope": self.cone_slope, "bounded": self.bounded}


def _lip_single(tables: Sequence[ActionTable], slope: float) -> dict[str, float]:
    with np.errstate(invalid="ignore"):
        return _lip_inner(tables, slope)


def _lip_inner(tables, slope):
    tables = sorted(tables, key=lambda tb: tb.horizon)
    dx = tables[0].lattice.dx
    lx = 0.0
    lt = 0.0
    for tab in tables:
        inside = (tab.distances() <= slope * tab.horizon) & np.isfinite(tab.values)
        for ax in range(tab.dim):
            a = [slice(None)] * tab.dim
            b = [slice(None)] * tab.dim
            a[ax] = slice(1, None)
            b[ax] = slice(None, -1)
            ok = inside[tuple(a)] & inside[tuple(b)]
            if ok.any():
                diff = np.abs(tab.values[tuple(a)] - tab.values[tuple(b)])[ok] / dx
                lx = max(lx, float(diff.max()))
    for t1, t2 in zip(tables[:-1], tables[1:]):
        h1, h2 = t1.half_width, t2.half_width
        sl = tuple(slice(h2 - h1, h2 + h1 + 1) for _ in range(t1.dim))
        v2 = t2.values[sl]
        ok = (t1.distances() <= slope * t1.horizon) & np.isfinite(t1.values) & np.isfinite(v2)
        if ok.any():
            lt = max(lt, float(np.max(np.abs(v2 - t1.values)[ok]) / (t2.horizon - t1.horizon)))
    return {"x": lx, "t": lt, "max": max(lx, lt)}


def verify_cone_lipschitz(tables_by_eps: Mapping[float, Sequence[ActionTable]],
                          cone_slope: float | None = None,
                          tolerance: float = 0.2) -> LipschitzReport:
    """Empirical Lipschitz constants of ``phi_eps`` on the cone, per ``eps``.

    Tables for one ``eps`` share a source and are taken at unscaled horizons ``t / eps``.
    Distances and times scale together under the rescaling, so constants of ``phi_eps``
    in rescaled variables equal difference quotients of ``phi`` on the unscaled grid.
    """
    if not tables_by_eps:
        raise ValueError("no tables supplied")
    if cone_slope is None:
        first = next(iter(tables_by_eps.values()))[0]
        cone_slope = 0.9 * first.lattice.speed_cap
    per = {float(e): _lip_single(tabs, cone_slope) for e, tabs in sorted(tables_by_eps.items())}
    vals = [p["max"] for p in per.values()]
    top = max(vals)
    spread = (top - min(vals)) / top if top > 0 else 0.0
    return LipschitzReport(per, spread, tolerance, cone_slope,
                           bool(np.isfinite(top) and spread <= tolerance))


@dataclass
class SandwichReport:
    lower_violation: float
    upper_violation: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sandwich_report(table: ActionTable, medium: Medium, constant: float = 1.0) -> SandwichReport:
    """Check ``t lower_L(d/t) - slack <= phi <= t upper_L(d/t) + slack`` on finite entries."""
    t = table.horizon
    fin = np.isfinite(table.values)
    d = table.distances()[fin]
    phi = table.values[fin]
    env = medium.envelope
    low = t * env.theta_L_lower(d / t)
    up = t * env.theta_L_upper(d / t)
    slack = constant * (table.lattice.dx + table.lattice.dt) * t
    lv = float(np.max(low - phi))
    uv = float(np.max(phi - up))
    return SandwichReport(lv, uv, slack, bool(lv <= slack and uv <= slack))
