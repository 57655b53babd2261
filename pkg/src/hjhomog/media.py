"""Stationary ergodic Hamiltonian families on R^n with Z^n acting by unit translations.

A :class:`Medium` bundles a Hamiltonian ``H(x, p, omega)``, its Lagrangian (closed form
when one is known), and the radial coercivity envelopes bounding ``H``.  Environments
``omega`` are :class:`EnvironmentSample` instances; the translation ``x -> x + g`` is
mirrored on the environment side by :func:`shift_env`.

Two families are provided:

* periodic media ``H(x, p) = K(p) + V(x)`` with ``V`` one-periodic, whose environment
  space is a single point;
* quasi-periodic media obtained by restricting a Hamiltonian on the torus of dimension
  ``n + 1`` to the leaves ``theta = omega + alpha . x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from ._hashing import digest

__all__ = [
    "AuditReport",
    "CoercivityEnvelope",
    "CosineProduct",
    "CosineSum",
    "EnvironmentSample",
    "GroupElement",
    "LegendreBoundaryError",
    "Medium",
    "MediumMismatchError",
    "PowerKinetic",
    "PowerProfile",
    "QuadraticKinetic",
    "ResonanceError",
    "TablePotential",
    "ZeroPotential",
    "as_points",
    "audit_assumptions",
    "eval_H",
    "eval_L",
    "find_resonance",
    "make_periodic_medium",
    "make_quasiperiodic_medium",
    "numeric_legendre",
    "potential_from_spec",
    "sample_environment",
    "shift_env",
]

TWO_PI = 2.0 * np.pi


class ResonanceError(ValueError):
    """Raised when ``(alpha, 1)`` is orthogonal to a small nonzero integer vector."""

    def __init__(self, vector: Sequence[int], alpha: Sequence[float]):
        self.vector = tuple(int(v) for v in vector)
        self.alpha = tuple(float(a) for a in alpha)
        super().__init__(
            f"(alpha, 1) = {self.alpha + (1.0,)} is resonant: "
            f"its dot product with {self.vector} vanishes"
        )


class MediumMismatchError(ValueError):
    pass


class LegendreBoundaryError(RuntimeError):
    """The sup defining a numeric Legendre transform was attained on the grid boundary."""


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to an array of points with trailing axis of length ``dim``."""
    arr = np.asarray(x, dtype=float)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------------- groups


@dataclass(frozen=True)
class GroupElement:
    """Element of Z^b acting on R^b by translation; the torsion part is trivial."""

    h: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "h", tuple(int(v) for v in self.h))

    @classmethod
    def identity(cls, b: int) -> GroupElement:
        return cls((0,) * b)

    def __add__(self, other: GroupElement) -> GroupElement:
        if len(other.h) != len(self.h):
            raise ValueError("group elements of different rank")
        return GroupElement(tuple(a + b for a, b in zip(self.h, other.h)))

    def __neg__(self) -> GroupElement:
        return GroupElement(tuple(-a for a in self.h))

    def act(self, x) -> np.ndarray:
        pts = as_points(x, len(self.h))
        return pts + np.asarray(self.h, dtype=float)


@dataclass(frozen=True)
class EnvironmentSample:
    """A realization omega: real parameters, the seed that drew them, and its medium."""

    params: tuple[float, ...]
    seed: int
    medium_id: str

    def digest(self) -> str:
        return digest({"params": [float.hex(p) for p in self.params],
                       "seed": self.seed, "medium": self.medium_id})


# ------------------------------------------------------------------ radial profiles


@dataclass(frozen=True)
class PowerProfile:
    """Radial function ``r -> coef * r**power + shift`` on ``r >= 0`` (``power > 1``)."""

    coef: float
    power: float
    shift: float = 0.0

    def __post_init__(self):
        if not self.coef > 0 or not self.power > 1:
            raise ValueError("a power profile needs coef > 0 and power > 1 (superlinear)")

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        return self.coef * r**self.power + self.shift

    def conjugate(self) -> PowerProfile:
        # sup_r (s r - c r^p) = ((p-1)/p) (c p)^(-1/(p-1)) s^(p/(p-1))
        p, c = self.power, self.coef
        q = p / (p - 1.0)
        coef = (p - 1.0) / p * (c * p) ** (-1.0 / (p - 1.0))
        return PowerProfile(coef, q, -self.shift)

    def inverse(self, y: float) -> float:
        """Largest ``r`` with ``f(r) <= y`` (0 when ``y`` is below ``f(0)``)."""
        if y <= self.shift:
            return 0.0
        return ((y - self.shift) / self.coef) ** (1.0 / self.power)

    def describe(self) -> dict:
        return {"coef": self.coef, "power": self.power, "shift": self.shift}


@dataclass(frozen=True)
class CoercivityEnvelope:
    """Bounds ``lower(|p|) <= H(x, p, omega) <= upper(|p|)``.

    The Lagrangian envelopes follow by conjugation: ``theta_L_lower`` is the conjugate of
    the upper bound and ``theta_L_upper`` the conjugate of the lower bound.
    """

    lower: PowerProfile
    upper: PowerProfile

    @property
    def theta_L_lower(self) -> PowerProfile:
        return self.upper.conjugate()

    @property
    def theta_L_upper(self) -> PowerProfile:
        return self.lower.conjugate()

    def check(self, radius: float = 10.0, num: int = 401) -> bool:
        r = np.linspace(0.0, radius, num)
        ok = bool(np.all(self.lower(r) <= self.upper(r) + 1e-12))
        ok &= bool(np.all(self.theta_L_lower(r) <= self.theta_L_upper(r) + 1e-12))
        return ok

    def describe(self) -> dict:
        return {"lower": self.lower.describe(), "upper": self.upper.describe()}


# ------------------------------------------------------------------------ kinetics


@dataclass(frozen=True)
class PowerKinetic:
    """Radial kinetic energy ``K(p) = scale * |p|**power``."""

    scale: float = 0.5
    power: float = 2.0

    def __call__(self, p: np.ndarray) -> np.ndarray:
        return self.scale * np.linalg.norm(p, axis=-1) ** self.power

    def conjugate(self, q: np.ndarray) -> np.ndarray:
        prof = PowerProfile(self.scale, self.power).conjugate()
        return prof(np.linalg.norm(q, axis=-1))

    def bounds(self) -> tuple[PowerProfile, PowerProfile]:
        prof = PowerProfile(self.scale, self.power)
        return prof, prof

    def describe(self) -> dict:
        return {"type": "power", "scale": self.scale, "power": self.power}


@dataclass(frozen=True, eq=False)
class QuadraticKinetic:
    """``K(p) = 0.5 * p^T M p`` with ``M`` symmetric positive definite."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if not np.allclose(m, m.T):
            raise ValueError("kinetic matrix must be symmetric")
        if np.linalg.eigvalsh(m)[0] <= 0:
            raise ValueError("kinetic matrix must be positive definite")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_inv", np.linalg.inv(m))

    def __call__(self, p):
        return 0.5 * np.einsum("...i,ij,...j->...", p, self.matrix, p)

    def conjugate(self, q):
        return 0.5 * np.einsum("...i,ij,...j->...", q, self._inv, q)

    def bounds(self) -> tuple[PowerProfile, PowerProfile]:
        ev = np.linalg.eigvalsh(self.matrix)
        return PowerProfile(0.5 * ev[0], 2.0), PowerProfile(0.5 * ev[-1], 2.0)

    def describe(self) -> dict:
        return {"type": "quadratic", "matrix": self.matrix.tolist()}


# ----------------------------------------------------------------------- potentials


@dataclass(frozen=True)
class ZeroPotential:
    dim: int
    offset: float = 0.0

    def __call__(self, x):
        return np.zeros(np.shape(x)[:-1]) + self.offset

    def bounds(self):
        return self.offset, self.offset

    def describe(self):
        return {"preset": "zero", "dim": self.dim, "offset": self.offset}


@dataclass(frozen=True)
class CosineSum:
    """``amplitude * sum_i cos(2 pi x_i) + offset``."""

    dim: int
    amplitude: float = 1.0
    offset: float = 0.0

    def __call__(self, x):
        return self.amplitude * np.cos(TWO_PI * x).sum(axis=-1) + self.offset

    def bounds(self):
        a = abs(self.amplitude) * self.dim
        return self.offset - a, self.offset + a

    def describe(self):
        return {"preset": "cosine", "dim": self.dim, "amplitude": self.amplitude,
                "offset": self.offset}


@dataclass(frozen=True)
class CosineProduct:
    """``amplitude * prod_i cos(2 pi x_i) + offset``."""

    dim: int
    amplitude: float = 1.0
    offset: float = 0.0

    def __call__(self, x):
        return self.amplitude * np.cos(TWO_PI * x).prod(axis=-1) + self.offset

    def bounds(self):
        a = abs(self.amplitude)
        return self.offset - a, self.offset + a

    def describe(self):
        return {"preset": "cosine_product", "dim": self.dim,
                "amplitude": self.amplitude, "offset": self.offset}


@dataclass(frozen=True, eq=False)
class TablePotential:
    """One-periodic potential given by samples on a closed grid, trigonometrically interpolated.

    ``values`` has shape ``(N + 1,) * dim`` and includes both endpoints of the unit
    period, so opposite faces must agree.
    """

    values: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        dim = vals.ndim
        if dim not in (1, 2) or min(vals.shape) < 3:
            raise ValueError("potential table must be 1D or 2D with at least 3 samples per axis")
        scale = max(1.0, float(np.max(np.abs(vals))))
        for axis in range(dim):
            first = np.take(vals, 0, axis=axis)
            last = np.take(vals, -1, axis=axis)
            if np.max(np.abs(first - last)) > 1e-9 * scale:
                raise ValueError(
                    f"potential table is not periodic along axis {axis}: "
                    "period mismatch between first and last samples")
        core = vals[(slice(0, -1),) * dim]
        coeffs = np.fft.fftn(core) / core.size
        freqs = [np.fft.fftfreq(n, d=1.0 / n) for n in core.shape]
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_coeffs", coeffs)
        object.__setattr__(self, "_freqs", freqs)
        fine = np.linspace(0.0, 1.0, 257)
        grid = np.stack(np.meshgrid(*([fine] * dim), indexing="ij"), axis=-1)
        dense = self(grid)
        object.__setattr__(self, "_bounds", (float(dense.min()) - 1e-9, float(dense.max()) + 1e-9))

    @property
    def dim(self) -> int:
        return self.values.ndim

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        if self.dim == 1:
            ph = np.exp(1j * TWO_PI * np.outer(flat[:, 0], self._freqs[0]))
            out = ph @ self._coeffs
        else:
            p0 = np.exp(1j * TWO_PI * np.outer(flat[:, 0], self._freqs[0]))
            p1 = np.exp(1j * TWO_PI * np.outer(flat[:, 1], self._freqs[1]))
            out = np.einsum("mi,ij,mj->m", p0, self._coeffs, p1)
        return out.real.reshape(x.shape[:-1]) + self.offset

    def bounds(self):
        lo, hi = self._bounds
        return lo, hi

    def describe(self):
        return {"preset": "table", "values": self.values.tolist(), "offset": self.offset}


def potential_from_spec(spec: Mapping[str, Any], dim: int):
    """Build a potential from a preset block such as ``{"preset": "cosine", "amplitude": 1}``."""
    spec = dict(spec)
    preset = spec.pop("preset")
    offset = float(spec.pop("offset", 0.0))
    if preset == "zero":
        pot = ZeroPotential(dim, offset)
    elif preset == "cosine":
        pot = CosineSum(dim, float(spec.pop("amplitude", 1.0)), offset)
    elif preset == "cosine_product":
        pot = CosineProduct(dim, float(spec.pop("amplitude", 1.0)), offset)
    elif preset == "table":
        pot = TablePotential(np.asarray(spec.pop("values"), dtype=float), offset)
        if pot.dim != dim:
            raise ValueError(f"table potential has dimension {pot.dim}, expected {dim}")
    else:
        raise ValueError(f"unknown potential preset {preset!r}")
    if spec:
        raise ValueError(f"unknown potential parameters {sorted(spec)}")
    return pot


# --------------------------------------------------------------------------- medium

Evaluator = Callable[[np.ndarray, np.ndarray, tuple], np.ndarray]


@dataclass(frozen=True, eq=False)
class Medium:
    """A stationary family ``(H, L, tau)`` over an environment space.

    ``hamiltonian`` and ``lagrangian`` take broadcastable point arrays of shape
    ``(..., dim)`` and the environment parameter tuple.  ``lagrangian`` is ``None`` when
    no closed form is known; :func:`eval_L` then conjugates numerically.
    """

    dim: int
    kind: str
    hamiltonian: Evaluator
    lagrangian: Evaluator | None
    envelope: CoercivityEnvelope
    alpha: np.ndarray | None = None
    description: Mapping[str, Any] = field(default_factory=dict)
    homogeneity: float | None = None

    @property
    def medium_id(self) -> str:
        return digest(self.description)

    @property
    def singleton(self) -> bool:
        """True when the environment space is a single point (periodic and metric media)."""
        return self.kind in ("periodic", "metric")


def make_periodic_medium(dim: int = 1, potential=None, kinetic=None) -> Medium:
    """Periodic medium ``H(x, p) = K(p) + V(x)`` with a singleton environment space.

    ``potential`` is a potential object or a preset mapping (default ``V = 0``);
    ``kinetic`` is a :class:`PowerKinetic`, a :class:`QuadraticKinetic` or a mapping
    ``{"power": ..., "scale": ...}`` (default ``|p|^2 / 2``).
    """
    if dim not in (1, 2):
        raise ValueError("periodic media are supported in dimension 1 or 2")
    if potential is None:
        potential = ZeroPotential(dim)
    elif isinstance(potential, Mapping):
        potential = potential_from_spec(potential, dim)
    if potential.dim != dim:
        raise ValueError("potential dimension does not match the medium")
    kinetic = _kinetic_from(kinetic, dim)
    lo, hi = potential.bounds()
    klo, khi = kinetic.bounds()
    envelope = CoercivityEnvelope(PowerProfile(klo.coef, klo.power, lo),
                                  PowerProfile(khi.coef, khi.power, hi))

    def hamiltonian(x, p, params):
        return kinetic(p) + potential(x)

    def lagrangian(x, q, params):
        return kinetic.conjugate(q) - potential(x)

    desc = {"kind": "periodic", "dim": dim, "kinetic": kinetic.describe(),
            "potential": potential.describe()}
    return Medium(dim, "periodic", hamiltonian, lagrangian, envelope, None, desc)


def _kinetic_from(kinetic, dim: int):
    if kinetic is None:
        return PowerKinetic()
    if isinstance(kinetic, (PowerKinetic, QuadraticKinetic)):
        k = kinetic
    elif isinstance(kinetic, Mapping):
        spec = dict(kinetic)
        if "matrix" in spec:
            k = QuadraticKinetic(np.asarray(spec["matrix"], dtype=float))
        else:
            power = float(spec.get("power", 2.0))
            scale = float(spec.get("scale", 0.5))
            if power <= 1.0:
                raise ValueError(f"kinetic energy |p|^{power} is not superlinear")
            if scale <= 0:
                raise ValueError("kinetic scale must be positive")
            k = PowerKinetic(scale, power)
    else:
        raise TypeError("unsupported kinetic description")
    if isinstance(k, PowerKinetic) and k.power <= 1.0:
        raise ValueError(f"kinetic energy |p|^{k.power} is not superlinear")
    if isinstance(k, QuadraticKinetic) and k.matrix.shape != (dim, dim):
        raise ValueError("kinetic matrix shape does not match the dimension")
    return k


def find_resonance(alpha: Sequence[float], height: int = 10**6,
                   tol: float = 1e-9) -> tuple[int, ...] | None:
    """Return a nonzero integer vector ``nu`` with ``(alpha, 1) . nu = 0`` and
    ``|nu|_inf <= height``, or ``None`` when none is detected.

    For one frequency this is exact up to ``height`` via best rational approximation.
    For several frequencies the search is exhaustive up to ``min(height, 40)``.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.size == 1:
        a = float(alpha[0])
        frac = Fraction(a).limit_denominator(height)
        q, p = frac.denominator, frac.numerator
        if abs(q * a - p) <= tol and abs(p) <= height:
            return (q, -p)
        return None
    bound = min(height, 40)
    for nu in product(range(-bound, bound + 1), repeat=alpha.size):
        if not any(nu):
            continue
        s = float(np.dot(nu, alpha))
        r = round(s)
        if abs(s - r) <= tol and abs(r) <= height:
            return tuple(nu) + (-int(r),)
    return None


def make_quasiperiodic_medium(alpha, potential=None, kinetic_matrix=None,
                              audit_height: int = 10**6) -> Medium:
    """Restrict a torus Hamiltonian to the leaves ``theta = omega + alpha . x``.

    The base Hamiltonian on ``T^(n+1) x R^(n+1)`` is ``0.5 P^T Q P + W(y)``;
    the resulting family is
    ``H_alpha(x, p, omega) = 0.5 (p, p.alpha)^T Q (p, p.alpha) + W(x, omega + alpha.x)``
    with ``tau_h(omega) = omega + alpha . h mod 1``.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    n = alpha.size
    nu = find_resonance(alpha, audit_height)
    if nu is not None:
        raise ResonanceError(nu, alpha)
    if potential is None:
        potential = CosineProduct(n + 1, 1.0)
    elif isinstance(potential, Mapping):
        potential = potential_from_spec(potential, n + 1)
    if potential.dim != n + 1:
        raise ValueError("base potential must live on the (n+1)-torus")
    Q = np.eye(n + 1) if kinetic_matrix is None else np.asarray(kinetic_matrix, dtype=float)
    B = np.vstack([np.eye(n), alpha[None, :]])
    kinetic = QuadraticKinetic(B.T @ Q @ B)
    lo, hi = potential.bounds()
    klo, khi = kinetic.bounds()
    envelope = CoercivityEnvelope(PowerProfile(klo.coef, 2.0, lo), PowerProfile(khi.coef, 2.0, hi))

    def leaf_potential(x, params):
        theta = params[0] + x @ alpha
        return potential(np.concatenate([x, theta[..., None]], axis=-1))

    def hamiltonian(x, p, params):
        x, p = np.broadcast_arrays(x, p)
        return kinetic(p) + leaf_potential(x, params)

    def lagrangian(x, q, params):
        x, q = np.broadcast_arrays(x, q)
        return kinetic.conjugate(q) - leaf_potential(x, params)

    desc = {"kind": "quasi-periodic", "dim": n, "alpha": [float.hex(float(a)) for a in alpha],
            "base_kinetic": Q.tolist(), "potential": potential.describe()}
    return Medium(n, "quasi-periodic", hamiltonian, lagrangian, envelope, alpha, desc)


# ---------------------------------------------------------------------- environments


def sample_environment(medium: Medium, seed: int) -> EnvironmentSample:
    """Draw omega from the environment law, deterministically in ``seed``."""
    seed = int(seed) % (1 << 64)
    if medium.singleton:
        return EnvironmentSample((), 0, medium.medium_id)
    rng = np.random.default_rng(seed)
    return EnvironmentSample((float(rng.random()),), seed, medium.medium_id)


def shift_env(medium: Medium, g, omega: EnvironmentSample) -> EnvironmentSample:
    """Apply ``tau_g`` to ``omega``."""
    if omega.medium_id != medium.medium_id:
        raise MediumMismatchError(
            f"environment belongs to medium {omega.medium_id}, not {medium.medium_id}")
    if medium.singleton:
        return omega
    h = np.asarray(g.h if isinstance(g, GroupElement) else g, dtype=float).reshape(-1)
    phase = (omega.params[0] + float(np.dot(medium.alpha, h))) % 1.0
    if phase >= 1.0:
        phase = 0.0
    return EnvironmentSample((phase,), omega.seed, omega.medium_id)


# ----------------------------------------------------------------------- evaluation


def eval_H(medium: Medium, x, p, omega: EnvironmentSample) -> np.ndarray:
    x = as_points(x, medium.dim)
    p = as_points(p, medium.dim)
    return medium.hamiltonian(x, p, omega.params)


def _legendre_radius(medium: Medium, qnorm: float) -> float:
    # maximizer p* obeys lower(|p*|) - |q||p*| <= upper(0)
    lower = medium.envelope.lower
    target = medium.envelope.upper(0.0)
    r = 1.0
    while lower(r) - qnorm * r <= target:
        r *= 2.0
    lo, hi = 0.0, r
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if lower(mid) - qnorm * mid <= target:
            lo = mid
        else:
            hi = mid
    return hi


def numeric_legendre(medium: Medium, x, q, omega: EnvironmentSample,
                     step: float = 1e-2) -> np.ndarray:
    """``sup_p p.q - H(x, p, omega)`` over a uniform momentum grid.

    The grid radius is taken from the lower coercivity envelope so that the maximizer is
    interior; an argmax on the grid boundary raises :class:`LegendreBoundaryError`.
    """
    x = as_points(x, medium.dim)
    q = as_points(q, medium.dim)
    x, q = np.broadcast_arrays(x, q)
    shape = x.shape[:-1]
    xf = x.reshape(-1, medium.dim)
    qf = q.reshape(-1, medium.dim)
    radius = 1.25 * _legendre_radius(medium, float(np.max(np.linalg.norm(qf, axis=-1)))) + 2 * step
    m = int(math.ceil(radius / step))
    axis = np.arange(-m, m + 1) * step
    if medium.dim == 1:
        grid = axis[:, None]
    else:
        grid = np.stack(np.meshgrid(*([axis] * medium.dim), indexing="ij"), -1).reshape(-1, medium.dim)
    on_edge = np.any(np.abs(np.abs(grid) - m * step) < 0.5 * step, axis=-1)
    out = np.empty(len(xf))
    chunk = max(1, 2_000_000 // len(grid))
    for start in range(0, len(xf), chunk):
        xs = xf[start:start + chunk, None, :]
        qs = qf[start:start + chunk, None, :]
        vals = grid[None] @ qs.transpose(0, 2, 1)
        vals = vals[..., 0] - medium.hamiltonian(xs, grid[None], omega.params)
        idx = np.argmax(vals, axis=1)
        if np.any(on_edge[idx]):
            raise LegendreBoundaryError(
                "numeric Legendre argmax on the momentum grid boundary; increase the radius")
        out[start:start + chunk] = vals[np.arange(len(idx)), idx]
    return out.reshape(shape)


def eval_L(medium: Medium, x, q, omega: EnvironmentSample, step: float = 1e-2,
           numeric: bool = False) -> np.ndarray:
    """Lagrangian ``L(x, q, omega)``: closed form when known, else a numeric conjugate."""
    if medium.lagrangian is not None and not numeric:
        x = as_points(x, medium.dim)
        q = as_points(q, medium.dim)
        return medium.lagrangian(x, q, omega.params)
    return numeric_legendre(medium, x, q, omega, step)


# ---------------------------------------------------------------------------- audits


@dataclass
class AuditReport:
    """Empirical check of the standing assumptions on a random sample set."""

    samples: int
    stationarity_defect: float
    convexity_margin: float
    coercivity_slack: float
    continuity_defect: float
    second_difference_max: float
    tolerance: float
    passed: dict[str, bool]
    notes: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "stationarity_defect": self.stationarity_defect,
            "convexity_margin": self.convexity_margin,
            "coercivity_slack": self.coercivity_slack,
            "continuity_defect": self.continuity_defect,
            "second_difference_max": self.second_difference_max,
            "tolerance": self.tolerance,
            "passed": dict(self.passed),
            "all_passed": self.all_passed,
            "notes": list(self.notes),
        }


def audit_assumptions(medium: Medium, budget: int = 1000, seed: int = 0,
                      tol: float = 1e-10, convexity_tol: float = 1e-9,
                      x_range: float = 5.0, p_range: float = 3.0,
                      shift_range: int = 5) -> AuditReport:
    """Sample ``(x, p, omega, g)`` and check (H1)-(H5) numerically.

    (H1) continuity in omega, (H2) bounded second differences, (H3) strict midpoint
    convexity in p, (H4) the coercivity sandwich, (H5) stationarity.
    """
    if budget <= 0:
        raise ValueError("audit budget must be positive")
    n = medium.dim
    rng = np.random.default_rng(seed)
    x = rng.uniform(-x_range, x_range, (budget, n))
    p1 = rng.uniform(-p_range, p_range, (budget, n))
    p2 = rng.uniform(-p_range, p_range, (budget, n))
    g = rng.integers(-shift_range, shift_range + 1, (budget, n))
    env_seeds = rng.integers(0, 2**63 - 1, budget)

    stat = 0.0
    cont = 0.0
    h_vals = np.empty(budget)
    for i in range(budget):
        om = sample_environment(medium, int(env_seeds[i]))
        H = medium.hamiltonian
        h_here = H(x[i] + g[i], p1[i], om.params)
        h_shift = H(x[i], p1[i], shift_env(medium, GroupElement(tuple(g[i])), om).params)
        stat = max(stat, float(abs(h_here - h_shift)))
        h_vals[i] = H(x[i], p1[i], om.params)
        if not medium.singleton:
            om2 = EnvironmentSample(((om.params[0] + 1e-7) % 1.0,), om.seed, om.medium_id)
            cont = max(cont, float(abs(H(x[i], p1[i], om2.params) - h_vals[i])))

    om0 = sample_environment(medium, seed)
    Hm = medium.hamiltonian
    mid = Hm(x, 0.5 * (p1 + p2), om0.params)
    avg = 0.5 * (Hm(x, p1, om0.params) + Hm(x, p2, om0.params))
    sep = np.sum((p1 - p2) ** 2, axis=-1)
    margin = float(np.min((avg - mid) / np.maximum(sep, 1e-300)))

    pn = np.linalg.norm(p1, axis=-1)
    env = medium.envelope
    slack = float(min(np.min(h_vals - env.lower(pn)), np.min(env.upper(pn) - h_vals)))

    step = 1e-3
    sec = 0.0
    for axis in range(n):
        e = np.zeros(n)
        e[axis] = step
        d2p = (Hm(x, p1 + e, om0.params) - 2 * Hm(x, p1, om0.params)
               + Hm(x, p1 - e, om0.params)) / step**2
        d2x = (Hm(x + e, p1, om0.params) - 2 * Hm(x, p1, om0.params)
               + Hm(x - e, p1, om0.params)) / step**2
        sec = max(sec, float(np.max(np.abs(d2p))), float(np.max(np.abs(d2x))))

    passed = {
        "H1_continuity": bool(cont <= 1e-4),
        "H2_regularity": bool(np.isfinite(sec)),
        "H3_strict_convexity": bool(margin > convexity_tol),
        "H4_coercivity": bool(slack >= -1e-12 and env.check()),
        "H5_stationarity": bool(stat <= tol),
    }
    notes = []
    if medium.kind == "quasi-periodic":
        notes.append("ergodicity of tau is assumed from non-resonance, not verified")
    return AuditReport(budget, stat, margin, slack, cont, sec, tol, passed, notes)
