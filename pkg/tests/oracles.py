"""Independent reference values computed without the lattice pipeline."""

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq


def cosine_threshold() -> float:
    """Width of the flat piece of H_bar for H = p^2/2 + cos(2 pi x), by quadrature."""
    val, _ = quad(lambda s: math.sqrt(2.0 * (1.0 - math.cos(2 * math.pi * s))), 0.0, 1.0)
    return val


def cosine_hbar(P: float) -> float:
    """Energy E >= max V with int_0^1 sqrt(2 (E - cos 2 pi s)) ds = |P|."""
    P = abs(P)
    if P <= cosine_threshold():
        return 1.0

    def action(E):
        return quad(lambda s: math.sqrt(2.0 * (E - math.cos(2 * math.pi * s))), 0.0, 1.0,
                    limit=200)[0] - P

    return brentq(action, 1.0, 1.0 + P * P, xtol=1e-13)


def huber(h, t, slope=1.0):
    """Hopf-Lax solution for v0 = slope |h| and L = |q|^2 / 2."""
    h = np.abs(np.asarray(h, dtype=float))
    return np.where(h >= slope * t, slope * h - 0.5 * slope**2 * t, h**2 / (2 * t))


def free_lattice_action(d: float, t: float, dx: float, dt: float) -> float:
    """Discrete minimal action for L = q^2/2 with velocities restricted to multiples of dx/dt.

    By convexity the optimal path uses the two lattice velocities bracketing d/t, with
    the integer step counts fixed by the total displacement.
    """
    K = int(round(abs(d) / dx))
    S = int(round(t / dt))
    q, r = divmod(K, S)
    unit = dx / dt
    return dt * 0.5 * unit**2 * (r * (q + 1) ** 2 + (S - r) * q**2)


def conformal_axis_norms(a: float) -> tuple[float, float]:
    """Stable norms of e1 and e2 for g = (1 + a cos 2 pi x1)^2 id.

    A curve in class e1 crosses every value of x1, so its length is at least
    int_0^1 (1 + a cos 2 pi s) ds = 1, attained by a horizontal segment.  A curve in
    class e2 can sit on the line where the conformal factor is smallest, 1 - |a|.
    """
    return 1.0, 1.0 - abs(a)
