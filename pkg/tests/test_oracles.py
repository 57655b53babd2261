"""Frozen outputs of the independent oracles, so a change to them is visible."""

import math

import numpy as np
import pytest

from oracles import cosine_hbar, cosine_threshold, free_lattice_action, huber

# values computed once by quadrature plus bisection and frozen here
FROZEN_HBAR = {0.0: 1.0, 1.0: 1.0, 1.5: 1.2446376406283928, 2.0: 2.063795422862204}


def test_threshold_is_four_over_pi():
    assert cosine_threshold() == pytest.approx(4 / math.pi, abs=1e-12)


@pytest.mark.parametrize("P", sorted(FROZEN_HBAR))
def test_cosine_hbar_frozen(P):
    assert cosine_hbar(P) == pytest.approx(FROZEN_HBAR[P], abs=1e-10)
    assert cosine_hbar(-P) == cosine_hbar(P)


def test_cosine_hbar_large_momentum_is_free_like():
    # far above the potential the correction to P^2/2 is of order 1/P^2
    P = 20.0
    assert abs(cosine_hbar(P) - P * P / 2) < 0.05


def test_huber_matches_brute_force_hopf_lax():
    q = np.linspace(-6, 6, 240001)
    for h in (0.0, 0.3, 0.9, 1.7):
        for t in (0.5, 1.0):
            brute = np.min(np.abs(h - t * q) + t * q * q / 2)
            assert huber(h, t) == pytest.approx(brute, abs=1e-8)


def test_free_lattice_action_small_cases():
    # one step of one cell at unit lattice speed: dt * 1/2 * (dx/dt)^2
    assert free_lattice_action(0.1, 0.1, 0.1, 0.1) == pytest.approx(0.05)
    # two steps, three cells: speeds 2 and 1
    assert free_lattice_action(0.3, 0.2, 0.1, 0.1) == pytest.approx(0.1 * 0.5 * (4 + 1))
