import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjhomog.action import Lattice, minimal_action
from hjhomog.effective import homogeneity_check, uniform_points
from hjhomog.media import audit_assumptions, eval_H, eval_L, sample_environment
from hjhomog.stablenorm import (MetricFamily, StableNormTable, audit_metric_family,
                                metric_medium, norm_audit, path_length,
                                periodic_stable_norm, stationary_stable_norm)

from oracles import conformal_axis_norms

cell = st.integers(0, 8).map(lambda k: k / 4)


def _scaled(c):
    return MetricFamily(2, lambda x: c * np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)),
                        (c, c), {"preset": "scaled", "c": c}, lambda x: np.full(x.shape[:-1], c))


def test_conformal_amplitude_checked():
    with pytest.raises(ValueError):
        MetricFamily.conformal(1.0)
    rep = audit_metric_family(MetricFamily.conformal(0.5))
    assert rep["all_passed"], rep


def test_metric_medium_closed_forms(conformal_family):
    med = metric_medium(conformal_family)
    om = sample_environment(med, 0)
    x = np.array([[0.0, 0.3], [0.25, 0.0], [0.5, 2.0]])
    v = np.array([[1.0, 0.0], [0.5, -1.0], [0.0, 2.0]])
    f = (1 + 0.5 * np.cos(2 * np.pi * x[:, 0])) ** 2
    assert np.allclose(eval_L(med, x, v, om), f * (v**2).sum(axis=1))
    assert np.allclose(eval_H(med, x, v, om), (v**2).sum(axis=1) / (4 * f))
    flat = metric_medium(MetricFamily.flat())
    assert float(eval_H(flat, [0.3, 0.1], [2.0, 0.0], om)) == pytest.approx(1.0)
    assert med.homogeneity == 2.0


def test_metric_medium_passes_assumption_audit(conformal_family):
    assert audit_assumptions(metric_medium(conformal_family), budget=300).all_passed


def test_numeric_conjugate_of_metric_lagrangian(conformal_family):
    med = metric_medium(conformal_family)
    om = sample_environment(med, 0)
    x = np.array([[0.1, 0.2], [0.6, 0.0]])
    v = np.array([[0.3, -0.2], [0.5, 0.5]])
    num = eval_L(med, x, v, om, step=5e-3, numeric=True)
    assert np.allclose(num, eval_L(med, x, v, om), atol=1e-4)


def test_flat_graph_lengths_exact_on_edge_directions():
    flat = MetricFamily.flat()
    for end, want in (((1.0, 0.0), 1.0), ((1.0, 1.0), math.sqrt(2)), ((2.0, 1.0), math.sqrt(5))):
        assert path_length(flat, (0.0, 0.0), end, res=10) == pytest.approx(want, abs=1e-12)


def test_flat_graph_metrication_bounded():
    # 16 directions: worst Euclidean overestimate is below 3%
    got = path_length(MetricFamily.flat(), (0.0, 0.0), (1.0, 0.35), res=20)
    assert 0 <= got / math.hypot(1.0, 0.35) - 1 <= 0.03


@settings(max_examples=10, deadline=None)
@given(a=st.tuples(cell, cell), b=st.tuples(cell, cell))
def test_graph_distance_symmetric(a, b):
    fam = MetricFamily.conformal(0.5)
    box = dict(res=8, margin=2.0)
    ab = path_length(fam, a, b, **box)
    ba = path_length(fam, b, a, **box)
    assert ab == pytest.approx(ba, abs=1e-12)


def test_graph_monotone_under_domination(conformal_family):
    big = _scaled(2.25)  # (1 + 0.5)^2 dominates the conformal factor everywhere
    for end in ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0)):
        assert path_length(conformal_family, (0, 0), end, res=16) <= \
            path_length(big, (0, 0), end, res=16)
        assert path_length(big, (0, 0), end, res=16) == pytest.approx(1.5 * math.hypot(*end))


def test_periodic_norm_conformal_axes(conformal_family):
    n1, n2 = conformal_axis_norms(0.5)
    v1, _, _ = periodic_stable_norm(conformal_family, [1, 0], (2, 4), res=20)
    v2, _, _ = periodic_stable_norm(conformal_family, [0, 1], (2, 4), res=20)
    assert v1 == pytest.approx(n1, rel=0.05)
    assert v2 == pytest.approx(n2, rel=0.05)
    assert periodic_stable_norm(MetricFamily.flat(), [1, 0], (2,), res=20)[0] == \
        pytest.approx(1.0, rel=0.02)
    with pytest.raises(ValueError, match="integral"):
        periodic_stable_norm(conformal_family, [0.5, 0], (2,))


def test_minimal_action_against_dijkstra(conformal_family):
    med = metric_medium(conformal_family)
    om = sample_environment(med, 0)
    lat = Lattice(dx=0.05, dt=0.1, speed_cap=2.0)
    for end in ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0)):
        t = 1.0
        d = path_length(conformal_family, (0.0, 0.0), end, res=20)
        phi = minimal_action(med, om, [0.0, 0.0], list(end), t, lat)
        # for a quadratic Lagrangian the action of a geodesic is length^2 / t
        assert phi == pytest.approx(d * d / t, rel=0.05)


def test_stationary_norm_flat(flat_table):
    sn = stationary_stable_norm(flat_table)
    r = np.linalg.norm(sn.points, axis=1)
    nz = r > 0
    assert np.max(np.abs(sn.values[nz] / r[nz] - 1)) <= 0.03
    assert sn.value([0.0, 0.0]) == pytest.approx(0.0, abs=1e-6)
    assert sn.audit["passed"]


def test_stationary_norm_conformal(conformal_table):
    sn = stationary_stable_norm(conformal_table)
    assert sn.value([0.0, 1.0]) == pytest.approx(conformal_axis_norms(0.5)[1], rel=0.05)
    aud = sn.audit
    assert aud["passed"] and aud["collinear_defect"] <= 0.05
    # evenness
    for p, v in zip(sn.points, sn.values):
        assert sn.value(-p) == pytest.approx(v, rel=0.05, abs=1e-9)


def test_homogeneity_of_metric_tables(flat_table, conformal_table):
    assert homogeneity_check(flat_table)["max_defect"] <= 0.05
    assert homogeneity_check(conformal_table)["max_defect"] <= 0.05


def test_negative_lagrangian_is_a_defect(flat_table):
    import dataclasses
    bad = dataclasses.replace(flat_table, convexified=flat_table.convexified - 0.1)
    with pytest.raises(ValueError, match="pipeline defect"):
        stationary_stable_norm(bad)


def test_norm_audit_detects_non_norm():
    pts = uniform_points(2, 2.0, 1.0)
    r = np.linalg.norm(pts, axis=1)
    euclid = StableNormTable(pts, r, "ergodic", np.zeros(len(pts)))
    rep = norm_audit(euclid)
    assert rep["passed"] and rep["collinear_defect"] <= 1e-12
    square = StableNormTable(pts, r**2, "ergodic", np.zeros(len(pts)))
    rep = norm_audit(square)
    assert not rep["passed"]
    assert rep["homogeneity"] >= 0.5 and rep["triangle"] >= 0.5


def test_csv_columns(flat_table):
    sn = stationary_stable_norm(flat_table)
    assert sn.to_csv().splitlines()[0] == "h0,h1,norm,method,spread"
