"""Acceptance criteria 1-8, one test each, with a PASS/FAIL line printed per criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from hjhomog.action import Lattice, action_tables, lax_oleinik_step, sandwich_report
from hjhomog.cli import main
from hjhomog.effective import (DirectionGrid, double_conjugate_gap, effective_hamiltonian,
                               effective_lagrangian_table, homogeneity_check)
from hjhomog.media import make_periodic_medium, sample_environment
from hjhomog.solver import InitialDatum, solve_rescaled
from hjhomog.stablenorm import periodic_stable_norm, stationary_stable_norm

from conftest import FINE_1D
from oracles import conformal_axis_norms, cosine_hbar

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
pytestmark = pytest.mark.slow


def _verdict(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    return line


def test_criterion_1_free_closed_forms():
    t0 = time.perf_counter()
    med = make_periodic_medium(1)
    lat = Lattice(dx=0.05, dt=0.05, speed_cap=4.0)
    grid = DirectionGrid.uniform(1, 2.5, 1 / 16)
    tab = effective_lagrangian_table(med, grid, [0], [4, 8, 16], lat)
    P = np.arange(-24, 25) / 16
    tab = effective_hamiltonian(tab, P)
    elapsed = time.perf_counter() - t0
    h = grid.points[:, 0]
    sel = (np.abs(h) <= 1.5) & (h != 0)
    rel_L = np.abs(tab.convexified[sel] - h[sel] ** 2 / 2) / (h[sel] ** 2 / 2)
    nzP = P != 0
    rel_H = np.abs(tab.H_bar[nzP] - P[nzP] ** 2 / 2) / (P[nzP] ** 2 / 2)
    zero_ok = abs(tab.value([0.0])) <= 1e-12 and abs(tab.H_bar[~nzP][0]) <= 1e-12
    ok = rel_L.max() <= 0.05 and rel_H.max() <= 0.05 and zero_ok and elapsed <= 60
    _verdict(1, ok, f"max rel err L_bar={rel_L.max():.3f} H_bar={rel_H.max():.3f} "
                    f"(tol 0.05), runtime {elapsed:.1f}s")
    assert ok


def test_criterion_2_cosine_cell_problem(cosine1):
    t0 = time.perf_counter()
    grid = DirectionGrid.uniform(1, 2.5, 1 / 16)
    tab = effective_lagrangian_table(cosine1, grid, [0], [4, 8, 16], FINE_1D)
    P = np.arange(-32, 33) / 16
    tab = effective_hamiltonian(tab, P)
    elapsed = time.perf_counter() - t0
    flat = np.abs(P) <= 4 / math.pi
    err_flat = float(np.max(np.abs(tab.H_bar[flat] - 1.0)))
    errs = {}
    for p in (1.5, 2.0, -1.5, -2.0):
        k = int(np.flatnonzero(np.isclose(P, p))[0])
        want = cosine_hbar(p)
        errs[p] = abs(tab.H_bar[k] - want) / want
    ok = err_flat <= 0.05 and max(errs.values()) <= 0.05 and elapsed <= 600
    _verdict(2, ok, f"flat piece max err {err_flat:.4f}; rel err at |P|=1.5,2: "
                    f"{max(errs[1.5], errs[-1.5]):.4f}, {max(errs[2.0], errs[-2.0]):.4f}; "
                    f"runtime {elapsed:.1f}s")
    assert ok


def _converge(config, out):
    code = main(["converge", "--config", str(config), "--out", str(out)])
    rep = json.loads((out / "convergence.json").read_text())
    return code, rep["reports"]


def test_criterion_3_homogenized_limit(tmp_path):
    t0 = time.perf_counter()
    lines, ok = [], True
    for name in ("cosine", "quasiperiodic"):
        code, reports = _converge(CONFIGS / f"{name}.toml", tmp_path / name)
        for r in reports:
            errs = r["errors"]
            good = all(math.isfinite(e) and e > 0 for e in errs) and errs[-1] <= 0.5 * errs[0]
            ok = ok and good
            lines.append(f"{name} seed={r['seed']} datum={r['datum']['preset']} base={r['base']} "
                         f"errors={[round(e, 4) for e in errs]} ratio={errs[-1] / errs[0]:.3f}")
        ok = ok and code == 0
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed <= 1800
    sys.__stdout__.write("\n" + "".join("  " + ln + "\n" for ln in lines))
    _verdict(3, ok, f"{len(lines)} (medium, seed, datum, base) cases; runtime {elapsed:.1f}s")
    assert ok


def test_criterion_4_ergodic_concentration(quasi_table16):
    rel = quasi_table16.relative_omega_spread()
    vals = {h: float(rel[quasi_table16.grid.lookup([h])]) for h in (-1.0, -0.5, 0.5, 1.0)}
    ok = len(quasi_table16.provenance["seeds"]) == 8 and max(vals.values()) <= 0.10
    _verdict(4, ok, "relative omega-spread " + ", ".join(f"h={h:+}: {v:.3f}" for h, v in vals.items())
             + " (tol 0.10)")
    assert ok


def _invariants(cosine1, quasi1, cosine_table):
    out = {}
    coarse = Lattice(dx=0.1, dt=0.1, speed_cap=2.0)
    rng = np.random.default_rng(0)

    # subadditivity over integer translates and integer times
    worst = -np.inf
    for seed in range(3):
        om = sample_environment(quasi1, seed)
        for a in (-2.0, -1.0, 0.0, 1.0, 2.0):
            for b in (-1.0, 0.0, 1.0):
                for n, m in ((1, 1), (1, 2), (2, 3)):
                    whole, = action_tables(quasi1, om, [0.0], [n + m], coarse)
                    first, = action_tables(quasi1, om, [0.0], [n], coarse)
                    second, = action_tables(quasi1, om, [a], [m], coarse)
                    lhs = whole.value_at(a + b)
                    worst = max(worst, lhs - first.value_at(a) - second.value_at(a + b))
    out["subadditivity excess"] = (worst, worst <= 1e-12)

    # Lax-Oleinik monotonicity, constants, semigroup
    om = sample_environment(quasi1, 1)
    mono, const = -np.inf, 0.0
    for _ in range(200):
        u = rng.uniform(-5, 5, 41)
        bump = rng.uniform(0, 2, 41)
        c = rng.uniform(-10, 10)
        base = lax_oleinik_step(u, om, quasi1, coarse)
        mono = max(mono, float(np.max(base - lax_oleinik_step(u + bump, om, quasi1, coarse))))
        const = max(const, float(np.max(np.abs(lax_oleinik_step(u + c, om, quasi1, coarse)
                                               - base - c))))
    out["monotonicity excess"] = (mono, mono <= 1e-12)
    out["constant commutation"] = (const, const <= 1e-12)
    omc = sample_environment(cosine1, 0)
    s, t = 0.3, 0.2
    whole, = action_tables(cosine1, omc, [0.0], [s + t], coarse)
    first, = action_tables(cosine1, omc, [0.0], [s], coarse)
    semi = 0.0
    for z in np.round(np.arange(-0.5, 0.51, 0.1), 10):
        best = np.inf
        for y in np.round(first.axis(), 10):
            if np.isfinite(first.value_at(y)) and abs(z - y) <= coarse.reach(t) + 1e-9:
                second, = action_tables(cosine1, omc, [y], [t], coarse)
                best = min(best, first.value_at(y) + second.value_at(z))
        semi = max(semi, abs(best - whole.value_at(z)))
    out["semigroup defect"] = (semi, semi <= 1e-12)

    # sandwich with slack C (dx + dt) t, C = 1
    sw = -np.inf
    for med in (cosine1, quasi1):
        for tab in action_tables(med, sample_environment(med, 2), [0.0], [0.5, 1.0, 2.0, 4.0],
                                 FINE_1D):
            rep = sandwich_report(tab, med)
            sw = max(sw, max(rep.lower_violation, rep.upper_violation) - rep.slack)
    out["sandwich excess over slack"] = (sw, sw <= 0)

    # argmins within rho(t): solve_rescaled asserts this at every step
    try:
        for e in (0.2, 0.1):
            for d in (InitialDatum.zero(), InitialDatum.capped_abs(1.0, 1.0)):
                solve_rescaled(quasi1, om, e, d, 1.0, FINE_1D)
        out["argmins outside rho"] = (0.0, True)
    except AssertionError as exc:
        out["argmins outside rho"] = (str(exc), False)

    mid = cosine_table.midpoint_defect()
    out["midpoint defect"] = (mid, mid <= 1e-12)
    gap, tol = double_conjugate_gap(cosine_table)
    out[f"double conjugate gap (tol {tol:.3g})"] = (gap, gap <= tol)
    return out


def test_criterion_5_invariant_suites(cosine1, quasi1, cosine_table):
    res = _invariants(cosine1, quasi1, cosine_table)
    ok = all(v[1] for v in res.values())
    sys.__stdout__.write("\n")
    for k, (v, good) in res.items():
        sys.__stdout__.write(f"  {k}: {v if isinstance(v, str) else f'{v:.3g}'} "
                             f"{'ok' if good else 'VIOLATED'}\n")
    _verdict(5, ok, f"{sum(v[1] for v in res.values())}/{len(res)} invariant checks hold")
    assert ok


def test_criterion_6_stable_norms(flat_table, conformal_table, conformal_family):
    flat = stationary_stable_norm(flat_table)
    r = np.linalg.norm(flat.points, axis=1)
    nz = r > 0
    flat_err = float(np.max(np.abs(flat.values[nz] / r[nz] - 1)))
    conf = stationary_stable_norm(conformal_table)
    e2 = conf.value([0.0, 1.0])
    e2_err = abs(e2 - conformal_axis_norms(0.5)[1]) / conformal_axis_norms(0.5)[1]
    agree = {}
    for h in ([1, 0], [0, 1], [1, 1]):
        per, _, _ = periodic_stable_norm(conformal_family, h, (2, 4, 8), res=40)
        agree[tuple(h)] = abs(conf.value(h) - per) / per
    audits = [flat.audit, conf.audit]
    worst_audit = max(max(a["positivity"], a["homogeneity"], a["triangle"]) for a in audits)
    ok = flat_err <= 0.03 and e2_err <= 0.05 and max(agree.values()) <= 0.05 and worst_audit <= 0.05
    _verdict(6, ok, f"flat err {flat_err:.4f} (tol 0.03); conformal |e2|={e2:.4f} err {e2_err:.4f}; "
                    f"agreement max {max(agree.values()):.4f}; norm_audit max {worst_audit:.4f}")
    assert ok


def test_criterion_7_homogeneity(flat_table, conformal_table):
    d = {name: homogeneity_check(t)["max_defect"]
         for name, t in (("flat", flat_table), ("conformal", conformal_table))}
    ok = max(d.values()) <= 0.05
    _verdict(7, ok, ", ".join(f"{k} max defect {v:.4f}" for k, v in d.items()) + " (tol 0.05)")
    assert ok


def _artifacts(out):
    m = json.loads((out / "manifest.json").read_text())
    return {name: (out / name).read_bytes() for name in m["artifacts"]}, m


def test_criterion_8_determinism(tmp_path):
    runs = {}
    for cmd, cfg in (("effective", "quasiperiodic"), ("converge", "cosine")):
        for w in (1, 4, 8):
            out = tmp_path / f"{cmd}-{w}"
            code = main([cmd, "--config", str(CONFIGS / f"{cfg}.toml"), "--out", str(out),
                         "--workers", str(w)])
            runs[(cmd, w)] = (code, *_artifacts(out))
    ok = True
    for cmd in ("effective", "converge"):
        ref = runs[(cmd, 1)]
        for w in (4, 8):
            cur = runs[(cmd, w)]
            same = cur[0] == ref[0] and cur[1] == ref[1] \
                and cur[2]["artifacts"] == ref[2]["artifacts"]
            ok = ok and same
    n = sum(len(runs[(c, 1)][1]) for c in ("effective", "converge"))
    _verdict(8, ok, f"{n} artifacts compared across workers 1, 4, 8")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
