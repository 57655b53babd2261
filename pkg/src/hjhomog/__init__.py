"""Numerical homogenization toolkit for Hamilton-Jacobi dynamics in random media on Z^n covers."""

__version__ = "0.1.0"

from .action import ActionTable, Lattice, lax_oleinik_step, minimal_action, rescaled_action
from .effective import (DirectionGrid, EffectiveTable, effective_hamiltonian,
                        effective_lagrangian_table, phi_map, subadditive_estimate)
from .media import (Medium, audit_assumptions, eval_L, make_periodic_medium,
                    make_quasiperiodic_medium, sample_environment, shift_env)
from .solver import InitialDatum, convergence_error, solve_homogenized, solve_rescaled
from .stablenorm import MetricFamily, metric_medium, periodic_stable_norm, stationary_stable_norm
