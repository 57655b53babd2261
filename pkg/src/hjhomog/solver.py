"""Rescaled and homogenized value functions and their eps Phi_eps gap.

``solve_rescaled`` marches the Lax-Oleinik DP in unscaled time from ``u0 / eps`` and
multiplies by ``eps``; this equals the inf-convolution of the datum with the rescaled
action.  Every recorded argmin is traced back to its initial point and checked against
the minimizer radius ``rho(t)``.  ``solve_homogenized`` evaluates the Hopf-Lax formula
with the convexified effective Lagrangian.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .action import Lattice, Stepper
from .effective import EffectiveTable, GridBoundaryError, phi_map
from .media import CoercivityEnvelope, EnvironmentSample, Medium

__all__ = [
    "ConvergenceReport",
    "InitialDatum",
    "MinimizerRadiusError",
    "ValueField",
    "audit_datum",
    "audit_value_regularity",
    "convergence_error",
    "minimizer_radius",
    "restart_rescaled",
    "solve_homogenized",
    "solve_rescaled",
]


class MinimizerRadiusError(AssertionError):
    pass


@dataclass(frozen=True, eq=False)
class InitialDatum:
    """Family ``u0^eps(x, omega)``, its limit ``v0(h)`` and a common modulus ``sigma``.

    ``sigma`` is piecewise linear and concave: linear interpolation through
    ``sigma_knots`` (starting at ``(0, 0)``) continued with slope ``sigma_tail``.
    """

    name: str
    u0: Callable[[np.ndarray, EnvironmentSample, float], np.ndarray]
    v0: Callable[[np.ndarray], np.ndarray]
    sigma_knots: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    sigma_tail: float = 0.0
    params: dict = field(default_factory=dict)

    def sigma(self, r):
        r = np.asarray(r, dtype=float)
        ks = np.array(self.sigma_knots, dtype=float)
        inside = np.interp(r, ks[:, 0], ks[:, 1])
        return np.where(r > ks[-1, 0], ks[-1, 1] + self.sigma_tail * (r - ks[-1, 0]), inside)

    def describe(self) -> dict:
        return {"preset": self.name, **self.params}

    @classmethod
    def zero(cls) -> InitialDatum:
        return cls.constant(0.0, name="zero")

    @classmethod
    def constant(cls, c: float, name: str = "constant") -> InitialDatum:
        c = float(c)
        return cls(name, lambda x, om, eps: np.full(x.shape[:-1], c),
                   lambda h: np.full(np.shape(h)[:-1], c), params={"value": c})

    @classmethod
    def abs(cls, slope: float = 1.0) -> InitialDatum:
        """``u0^eps(x) = slope * |eps x|`` with limit ``slope * |h|``."""
        s = float(slope)
        return cls("abs", lambda x, om, eps: s * np.linalg.norm(eps * x, axis=-1),
                   lambda h: s * np.linalg.norm(h, axis=-1),
                   ((0.0, 0.0), (1.0, s)), s, {"slope": s})

    @classmethod
    def capped_abs(cls, slope: float = 1.0, cap: float = 1.0) -> InitialDatum:
        """``u0^eps(x) = min(slope * |eps x|, cap)``."""
        s, c = float(slope), float(cap)
        return cls("capped_abs",
                   lambda x, om, eps: np.minimum(s * np.linalg.norm(eps * x, axis=-1), c),
                   lambda h: np.minimum(s * np.linalg.norm(h, axis=-1), c),
                   ((0.0, 0.0), (c / s, c)), 0.0, {"slope": s, "cap": c})

    @classmethod
    def from_spec(cls, spec: dict) -> InitialDatum:
        spec = dict(spec)
        kind = spec.pop("preset")
        if kind == "zero":
            out = cls.zero()
        elif kind == "constant":
            out = cls.constant(spec.pop("value"))
        elif kind == "abs":
            out = cls.abs(spec.pop("slope", 1.0))
        elif kind == "capped_abs":
            out = cls.capped_abs(spec.pop("slope", 1.0), spec.pop("cap", 1.0))
        else:
            raise ValueError(f"unknown datum preset {kind!r}")
        if spec:
            raise ValueError(f"unknown datum parameters {sorted(spec)}")
        return out


def audit_datum(datum: InitialDatum, eps_list: Sequence[float], dim: int = 1,
                samples: int = 500, seed: int = 0, omega: EnvironmentSample | None = None,
                h_radius: float = 1.0) -> dict:
    """Check ``|u0(x) - u0(x')| <= sigma(eps |x - x'|)`` and ``u0(Phi_eps(h)) -> v0(h)``."""
    ks = np.array(datum.sigma_knots)
    slopes = np.diff(ks[:, 1]) / np.maximum(np.diff(ks[:, 0]), 1e-300)
    slopes = np.append(slopes, datum.sigma_tail)
    concave = bool(ks[0, 1] == 0 and np.all(np.diff(slopes) <= 1e-12) and np.all(slopes >= 0))
    omega = omega or EnvironmentSample((), 0, "")
    rng = np.random.default_rng(seed)
    worst = -np.inf
    lim_err = []
    hs = rng.uniform(-h_radius, h_radius, (samples, dim))
    for eps in eps_list:
        x = rng.uniform(-2 / eps, 2 / eps, (samples, dim))
        y = rng.uniform(-2 / eps, 2 / eps, (samples, dim))
        du = np.abs(datum.u0(x, omega, eps) - datum.u0(y, omega, eps))
        bound = datum.sigma(eps * np.linalg.norm(x - y, axis=-1))
        worst = max(worst, float(np.max(du - bound)))
        pts = np.stack([phi_map(eps, h) for h in hs]).astype(float)
        lim_err.append(float(np.max(np.abs(datum.u0(pts, omega, eps) - datum.v0(hs)))))
    return {"sigma_concave": concave, "modulus_violation": worst,
            "limit_errors": lim_err, "passed": bool(concave and worst <= 1e-12)}


def minimizer_radius(datum: InitialDatum, t: float, envelope: CoercivityEnvelope,
                     deltas: np.ndarray | None = None) -> float:
    """``rho(t) = inf_delta ((upper_L(0) + B_delta) / sqrt(delta)) t + sqrt(delta)``.

    ``A_delta`` is the least slope with ``sigma(r) <= A_delta r + delta`` and
    ``B_delta = lower_L^*(A_delta + sqrt(delta))``, so that
    ``lower_L(r) >= (A_delta + sqrt(delta)) r - B_delta``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    if deltas is None:
        deltas = np.logspace(-8, 4, 1201)
    ks = np.array(datum.sigma_knots, dtype=float)
    r = ks[1:, 0]
    s = ks[1:, 1]
    theta0 = float(envelope.theta_L_upper(0.0))
    conj = envelope.theta_L_lower.conjugate()
    d = np.asarray(deltas, dtype=float)
    a = np.full(d.shape, float(datum.sigma_tail))
    if r.size:
        a = np.maximum(a, np.max((s[None, :] - d[:, None]) / r[None, :], axis=1))
    a = np.maximum(a, 0.0)
    root = np.sqrt(d)
    num = np.maximum(theta0 + conj(a + root), 0.0)
    return float(np.min(num / root * t + root))


@dataclass(eq=False)
class ValueField:
    """Solution slices on a lattice (rescaled) or on an ``h`` grid (homogenized).

    ``values[i]`` is the slice at ``times[i]``; NaN marks lattice points outside the
    region where the truncated-stencil DP is exact.
    """

    kind: str
    times: np.ndarray
    values: np.ndarray
    axes: list
    eps: float | None = None
    omega: EnvironmentSample | None = None
    provenance: dict = field(default_factory=dict)
    state: np.ndarray | None = None
    j0: np.ndarray | None = None
    lattice: Lattice | None = None

    @property
    def dim(self) -> int:
        return len(self.axes)

    def _tindex(self, t: float) -> int:
        hit = np.flatnonzero(np.abs(self.times - t) <= 1e-9 * max(1.0, abs(t)))
        if hit.size == 0:
            raise KeyError(f"time {t} is not a stored slice")
        return int(hit[0])

    def value_at(self, x, t: float) -> float:
        """Exact lattice lookup (rescaled fields)."""
        if self.kind != "rescaled":
            raise TypeError("value_at applies to rescaled fields")
        j = self.lattice.index(x) - self.j0
        if np.any(j < 0) or np.any(j >= np.asarray(self.values.shape[1:])):
            raise KeyError(f"lattice point {np.atleast_1d(x).tolist()} is not covered")
        v = float(self.values[(self._tindex(t),) + tuple(int(i) for i in j)])
        if math.isnan(v):
            raise KeyError(f"lattice point {np.atleast_1d(x).tolist()} is outside the valid region")
        return v

    def interp(self, h, t: float) -> np.ndarray:
        """Piecewise-linear interpolation in ``h`` at a stored time (homogenized fields)."""
        if self.kind != "homogenized":
            raise TypeError("interp applies to homogenized fields")
        sl = self.values[self._tindex(t)]
        h = np.asarray(h, dtype=float)
        if self.dim == 1:
            ax = self.axes[0]
            hv = h.reshape(-1)
            if np.any(hv < ax[0] - 1e-12) or np.any(hv > ax[-1] + 1e-12):
                raise KeyError("h outside the homogenized grid")
            return np.interp(hv, ax, sl).reshape(h.shape[:-1] if h.ndim > 1 else h.shape)
        f = RegularGridInterpolator(tuple(self.axes), sl, method="linear", bounds_error=True)
        return f(h)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        lab = "x" if self.kind == "rescaled" else "h"
        w.writerow([f"{lab}{i}" for i in range(self.dim)] + ["t", "value"])
        grids = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([g.reshape(-1) for g in grids], -1)
        for ti, t in enumerate(self.times):
            vals = self.values[ti].reshape(-1)
            for p, v in zip(pts, vals):
                if not math.isnan(v):
                    w.writerow([format(float(c), ".17g") for c in p]
                               + [format(float(t), ".17g"), format(float(v), ".17g")])
        return buf.getvalue()


def _march(stepper: Stepper, w: np.ndarray, steps: int, r: int, start_margin: int,
           snap: dict, origins: np.ndarray | None, check: Callable | None):
    shape = w.shape
    out = {}
    margin = start_margin
    for s in range(1, steps + 1):
        w, arg = stepper.step(w)
        margin += r
        if origins is not None:
            src = stepper.sources(arg)
            flat = np.ravel_multi_index(tuple(np.moveaxis(np.maximum(src, 0), -1, 0)), shape)
            origins = origins.reshape(-1)[flat].reshape(shape + (stepper.dim,))
            if check is not None:
                check(s, origins, margin)
        if s in snap:
            out[s] = (w.copy(), margin)
    return w, out, margin, origins


def _valid(shape, margin):
    m = np.zeros(shape, dtype=bool)
    sl = tuple(slice(margin, n - margin) for n in shape)
    m[sl] = True
    return m


def solve_rescaled(medium: Medium, omega: EnvironmentSample, eps: float, datum: InitialDatum,
                   T: float, lattice: Lattice, times: Sequence[float] | None = None,
                   region: float = 1.0, base=None, check_radius: bool = True) -> ValueField:
    """``u_eps(x, t) = inf_x' u0^eps(x') + phi_eps(x', x, t)`` on ``|eps (x - base)| <= region``.

    The box is padded by the DP reach so the stored region is exact.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    times = sorted({0.0, float(T)} | set(float(t) for t in (times or [])))
    steps = {lattice.steps(t / eps): t for t in times}
    S = max(steps)
    dim = medium.dim
    base = np.zeros(dim) if base is None else np.atleast_1d(np.asarray(base, dtype=float))
    jb = lattice.index(base)
    r = lattice.stencil_radius
    half = int(math.ceil((region / eps + 1.0) / lattice.dx)) + r * S + 1
    shape = (2 * half + 1,) * dim
    j0 = jb - half
    stepper = Stepper(medium, omega, lattice, j0, shape)
    axes = [(j0[d] + np.arange(shape[d])) * lattice.dx for d in range(dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    u0 = np.asarray(datum.u0(pts, omega, eps), dtype=float)
    w = u0 / eps
    origins = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), -1)
    env = medium.envelope
    slack = eps * r * lattice.dx
    idx_now = origins.copy()

    def check(s, orig, margin):
        t = s * lattice.dt * eps
        rho = minimizer_radius(datum, t, env) + slack
        ok = _valid(shape, margin)
        dist = eps * lattice.dx * np.linalg.norm((orig - idx_now)[ok], axis=-1)
        if dist.size and dist.max() > rho:
            raise MinimizerRadiusError(
                f"argmin at rescaled distance {dist.max():.6g} exceeds rho({t:.6g}) = {rho:.6g}")

    snap = set(steps) - {0}
    w, snaps, margin, _ = _march(stepper, w, S, r, 0, snap,
                                 origins if check_radius else None,
                                 check if check_radius else None)
    vals = np.empty((len(times),) + shape)
    for i, t in enumerate(times):
        s = lattice.steps(t / eps)
        if s == 0:
            vals[i] = u0
        else:
            arr, m = snaps[s]
            sl = eps * arr
            sl[~_valid(shape, m)] = np.nan
            vals[i] = sl
    prov = {"medium_id": medium.medium_id, "seed": omega.seed, "eps": eps,
            "datum": datum.describe(), "lattice": lattice.to_dict(), "base": base.tolist(),
            "region": region}
    return ValueField("rescaled", np.asarray(times), vals, axes, eps, omega, prov,
                      state=w, j0=j0, lattice=lattice)


def restart_rescaled(field_: ValueField, medium: Medium, extra: float) -> ValueField:
    """Continue a rescaled solve from its final slice for ``extra`` more (rescaled) time."""
    if field_.kind != "rescaled" or field_.state is None:
        raise ValueError("restart needs a rescaled field with stored state")
    eps, lattice = field_.eps, field_.lattice
    S = lattice.steps(extra / eps)
    shape = field_.state.shape
    stepper = Stepper(medium, field_.omega, lattice, field_.j0, shape)
    start_margin = lattice.steps(field_.times[-1] / eps) * lattice.stencil_radius
    w, snaps, margin, _ = _march(stepper, field_.state.copy(), S, lattice.stencil_radius,
                                 start_margin, {S}, None, None)
    sl = eps * w
    sl[~_valid(shape, margin)] = np.nan
    t = float(field_.times[-1] + extra)
    return ValueField("rescaled", np.asarray([t]), sl[None], field_.axes, eps, field_.omega,
                      dict(field_.provenance), state=w, j0=field_.j0, lattice=lattice)


def solve_homogenized(table: EffectiveTable, datum: InitialDatum, T: float,
                      h_axes: Sequence[np.ndarray] | np.ndarray,
                      times: Sequence[float] | None = None, velocity_step: float | None = None,
                      envelope: CoercivityEnvelope | None = None) -> ValueField:
    """Hopf-Lax ``v(h, t) = min_h' v0(h') + t L_bar((h - h') / t)``.

    The minimization runs over velocities ``q = (h - h') / t`` on a uniform grid inside
    the direction-grid hull, truncated to ``|q| <= rho(t) / t``.  A minimizer on the
    truncation edge that is closer than ``rho(t) / t`` raises :class:`GridBoundaryError`.
    """
    if isinstance(h_axes, np.ndarray) and h_axes.ndim == 1:
        h_axes = [h_axes]
    axes = [np.asarray(a, dtype=float) for a in h_axes]
    dim = table.dim
    if len(axes) != dim:
        raise ValueError("h axes do not match the table dimension")
    times = sorted({0.0, float(T)} | set(float(t) for t in (times or [])))
    env = envelope or table.envelope
    interp = table.interpolant()
    pts = table.grid.points
    qmax = float(np.min(np.max(np.abs(pts), axis=0)))
    if dim > 1:
        qmax = float(np.min(np.linalg.norm(pts[table.grid.boundary_mask()], axis=1)))
    if velocity_step is None:
        steps = [np.min(np.diff(np.unique(pts[:, d]))) for d in range(dim)]
        velocity_step = min(steps) / 4.0
    grids = np.meshgrid(*axes, indexing="ij")
    H = np.stack([g.reshape(-1) for g in grids], -1)
    vals = np.empty((len(times),) + tuple(len(a) for a in axes))
    for i, t in enumerate(times):
        if t == 0:
            vals[i] = datum.v0(H).reshape(vals.shape[1:])
            continue
        rho = minimizer_radius(datum, t, env) if env is not None else math.inf
        lim = min(qmax, rho / t)
        m = int(math.floor(lim / velocity_step + 1e-9))
        q = np.arange(-m, m + 1) * velocity_step
        if dim > 1:
            q = np.stack(np.meshgrid(*([q] * dim), indexing="ij"), -1).reshape(-1, dim)
            q = q[np.linalg.norm(q, axis=1) <= lim + 1e-12]
        else:
            q = q[:, None]
        Lq = interp(q).reshape(-1)
        best = np.empty(len(H))
        for start in range(0, len(H), 256):
            hh = H[start:start + 256]
            cand = datum.v0(hh[:, None, :] - t * q[None]) + t * Lq[None]
            k = np.argmin(cand, axis=1)
            qa = np.linalg.norm(q[k], axis=-1)
            edge = qa >= m * velocity_step - 1e-12
            if np.any(edge) and lim < rho / t - 1e-12:
                raise GridBoundaryError(
                    f"Hopf-Lax minimizer on the velocity search edge |q|={lim:.4g} < rho/t; "
                    "enlarge the direction grid")
            best[start:start + 256] = cand[np.arange(len(hh)), k]
        vals[i] = best.reshape(vals.shape[1:])
    prov = {"medium_id": table.medium_id, "datum": datum.describe(),
            "velocity_step": velocity_step}
    return ValueField("homogenized", np.asarray(times), vals, axes, provenance=prov)


@dataclass
class ConvergenceReport:
    K: dict
    base: list
    eps: list
    errors: list
    seed: int | None = None
    torsion: str = "identity"

    @property
    def verdict(self) -> bool:
        return bool(all(np.isfinite(self.errors)) and self.errors[-1] <= 0.5 * self.errors[0])

    def to_dict(self) -> dict:
        return {"K": self.K, "base": self.base, "eps": self.eps, "errors": self.errors,
                "seed": self.seed, "torsion": self.torsion, "verdict": self.verdict}


def convergence_error(u_fields: Sequence[ValueField] | ValueField, v: ValueField,
                      h_box: Sequence[tuple[float, float]], times: Sequence[float],
                      base=None, h_step: float = 0.125) -> ConvergenceReport:
    """``sup_{(h,t) in K} |u_eps(base + Phi_eps(h), t) - v(h, t)|`` for each field.

    ``u_eps`` is only read at lattice points; ``v`` is interpolated in ``h``.
    """
    if isinstance(u_fields, ValueField):
        u_fields = [u_fields]
    dim = v.dim
    base = np.zeros(dim) if base is None else np.atleast_1d(np.asarray(base, dtype=float))
    axes = []
    for lo, hi in h_box:
        m = int(round((hi - lo) / h_step))
        axes.append(lo + np.arange(m + 1) * (hi - lo) / m)
    grid = np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], -1)
    eps_list, errors = [], []
    for u in u_fields:
        worst = 0.0
        for t in times:
            vt = v.interp(grid if dim > 1 else grid, t).reshape(-1)
            for h, vv in zip(grid, vt):
                x = base + phi_map(u.eps, h)
                worst = max(worst, abs(u.value_at(x, t) - float(vv)))
        eps_list.append(u.eps)
        errors.append(worst)
    seed = u_fields[0].omega.seed if u_fields and u_fields[0].omega is not None else None
    K = {"h_box": [list(b) for b in h_box], "times": [float(t) for t in times], "h_step": h_step}
    return ConvergenceReport(K, base.tolist(), eps_list, errors, seed)


def audit_value_regularity(fields: Sequence[ValueField], t0: float, datum: InitialDatum | None = None,
                           tolerance: float = 0.2) -> dict:
    """Empirical Lipschitz constants in ``(d_eps, t)`` across eps on slices ``t >= t0``."""
    if len(fields) < 2:
        raise ValueError("at least two values of eps are required")
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    per = {}
    for f in fields:
        step = f.eps * f.lattice.dx
        keep = [i for i, t in enumerate(f.times) if t >= t0 - 1e-12]
        lx = 0.0
        for i in keep:
            sl = f.values[i]
            for ax in range(f.dim):
                d = np.abs(np.diff(sl, axis=ax)) / step
                d = d[np.isfinite(d)]
                if d.size:
                    lx = max(lx, float(d.max()))
        lt = 0.0
        for i, j in zip(keep[:-1], keep[1:]):
            d = np.abs(f.values[j] - f.values[i]) / (f.times[j] - f.times[i])
            d = d[np.isfinite(d)]
            if d.size:
                lt = max(lt, float(d.max()))
        entry = {"x": lx, "t": lt}
        if datum is not None and 0 in list(np.round(f.times, 12)):
            s0 = f.values[list(np.round(f.times, 12)).index(0.0)]
            flat = s0.reshape(-1) if f.dim == 1 else s0[s0.shape[0] // 2]
            emp = []
            for k in (1, 2, 4, 8, 16):
                if flat.size > k:
                    emp.append(abs(float(np.nanmax(np.abs(flat[k:] - flat[:-k])))
                                   - float(datum.sigma(k * step))))
            entry["slice0_sigma_defect"] = max(emp) if emp else 0.0
        per[repr(float(f.eps))] = entry

    def spread(key):
        v = [p[key] for p in per.values()]
        top = max(v)
        return (top - min(v)) / top if top > 0 else 0.0

    sx, st = spread("x"), spread("t")
    return {"per_eps": per, "t0": t0, "spread_x": sx, "spread_t": st,
            "uniform": bool(sx <= tolerance and st <= tolerance)}
