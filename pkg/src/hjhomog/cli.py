"""Command-line experiment runner: ``hjhomog {audit,effective,converge,stable-norm}``.

Exit codes: 0 success, 1 failed scientific audit or check, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .action import ActionCache, Lattice, LatticeError
from .config import ConfigError, ExperimentConfig, load_config
from .effective import (DirectionGrid, GridBoundaryError, effective_hamiltonian,
                        effective_lagrangian_table, homogeneity_check, uniform_points)
from .media import (ResonanceError, audit_assumptions, make_periodic_medium,
                    make_quasiperiodic_medium, sample_environment)
from .solver import (InitialDatum, audit_datum, convergence_error, solve_homogenized,
                     solve_rescaled)
from .stablenorm import (MetricFamily, audit_metric_family, metric_medium, periodic_stable_norm,
                         stationary_stable_norm)

log = logging.getLogger("hjhomog")

CACHE_ENV = "HJHOMOG_CACHE"


class ScienceFailure(Exception):
    """A scientific audit or check failed; maps to exit status 1."""


class Run:
    """Collects artifacts and writes them, plus the manifest, from a single thread."""

    def __init__(self, command: str, cfg: ExperimentConfig, cfg_hash: str, out: Path,
                 cache: ActionCache | None):
        self.command = command
        self.cfg = cfg
        self.cfg_hash = cfg_hash
        self.out = out
        self.cache = cache
        self.artifacts: dict[str, bytes] = {}
        self.timings: dict[str, float] = {}
        self.audits: dict[str, bool] = {}
        self.warnings: list[str] = []

    def add(self, name: str, text: str):
        self.artifacts[name] = text.encode("utf-8")

    def add_json(self, name: str, obj):
        self.add(name, json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")

    def timed(self, label: str):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = time.perf_counter() - self.t
        return _T()

    def finish(self, status: int) -> int:
        self.out.mkdir(parents=True, exist_ok=True)
        hashes = {}
        for name in sorted(self.artifacts):
            data = self.artifacts[name]
            (self.out / name).write_bytes(data)
            hashes[name] = hashlib.sha256(data).hexdigest()
        manifest = {
            "command": self.command,
            "config_hash": self.cfg_hash,
            "tool_version": __version__,
            "artifacts": hashes,
            "timings_s": self.timings,
            "audits": self.audits,
            "warnings": self.warnings,
            "cache": None if self.cache is None else {
                "root": str(self.cache.root), "hits": self.cache.hits, "misses": self.cache.misses},
            "exit_status": status,
        }
        (self.out / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return status


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# -------------------------------------------------------------------- builders


def build_medium(cfg: ExperimentConfig):
    m = cfg.medium
    try:
        if m.kind == "periodic":
            return make_periodic_medium(m.dim, m.potential, m.kinetic)
        if m.kind == "quasi-periodic":
            km = None
            if m.kinetic is not None:
                extra = set(m.kinetic) - {"matrix"}
                if extra:
                    raise ValueError(f"quasi-periodic kinetic accepts only 'matrix', got {sorted(extra)}")
                km = np.asarray(m.kinetic["matrix"], dtype=float)
            return make_quasiperiodic_medium(m.alpha, m.potential, km, m.resonance_height)
        return metric_medium(MetricFamily.from_spec(m.metric, m.dim))
    except ResonanceError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"medium: {exc}") from None


def build_lattice(cfg: ExperimentConfig) -> Lattice:
    try:
        return Lattice(**cfg.lattice.model_dump())
    except LatticeError as exc:
        raise ConfigError(f"lattice: {exc}") from None


def run_audit(run: Run, medium) -> bool:
    a = run.cfg.medium.audit
    rep = audit_assumptions(medium, a.budget, a.seed, a.stationarity_tol, a.convexity_tol)
    out = {"medium_id": medium.medium_id, "description": medium.description,
           "assumptions": rep.to_dict()}
    ok = rep.all_passed
    if medium.kind == "metric":
        fam = MetricFamily.from_spec(run.cfg.medium.metric, medium.dim)
        mrep = audit_metric_family(fam, a.budget, a.seed, a.stationarity_tol)
        out["metric"] = mrep
        ok = ok and mrep["all_passed"]
    run.audits["assumptions"] = bool(ok)
    run.add_json("audit.json", out)
    return bool(ok)


def build_table(run: Run, medium, lattice: Lattice, workers: int, hamiltonian: bool = True):
    cfg = run.cfg
    d = cfg.grids.directions
    grid = DirectionGrid.uniform(medium.dim, d.radius, d.step, d.disc)
    with run.timed("effective_lagrangian"):
        table = effective_lagrangian_table(
            medium, grid, cfg.schedule.seeds, cfg.schedule.horizons, lattice,
            cfg.schedule.base_points, cfg.tolerances.unconverged_fraction, workers, run.cache)
    if hamiltonian:
        p = cfg.grids.momenta
        with run.timed("effective_hamiltonian"):
            table = effective_hamiltonian(table, uniform_points(medium.dim, p.radius, p.step, p.disc))
    n_bad = int(table.unconverged.sum())
    if n_bad:
        run.warnings.append(f"{n_bad} direction(s) flagged unconverged (schedule spread above "
                            f"{cfg.tolerances.unconverged_fraction:g} of the value)")
    return table


# -------------------------------------------------------------------- commands


def cmd_audit(run: Run, args) -> int:
    try:
        medium = build_medium(run.cfg)
    except ResonanceError as exc:
        run.audits["non_resonance"] = False
        run.add_json("audit.json", {"resonance": {"vector": list(exc.vector),
                                                  "alpha": list(exc.alpha), "message": str(exc)}})
        print(f"audit failed: {exc}", file=sys.stderr)
        return run.finish(1)
    run.audits["non_resonance"] = True
    ok = run_audit(run, medium)
    return run.finish(0 if ok else 1)


def _prepare(run: Run):
    try:
        medium = build_medium(run.cfg)
    except ResonanceError as exc:
        run.audits["non_resonance"] = False
        raise ScienceFailure(str(exc)) from None
    if not run_audit(run, medium):
        raise ScienceFailure("assumption audit failed; see audit.json")
    return medium, build_lattice(run.cfg)


def cmd_effective(run: Run, args) -> int:
    medium, lattice = _prepare(run)
    table = build_table(run, medium, lattice, args.workers)
    run.add("effective_lagrangian.csv", table.lagrangian_csv())
    run.add("effective_hamiltonian.csv", table.hamiltonian_csv())
    meta = table.metadata()
    meta["sandwich"] = table.sandwich()
    meta["midpoint_defect"] = table.midpoint_defect()
    run.add_json("effective.json", meta)
    if args.strict and table.unconverged.any():
        return run.finish(1)
    return run.finish(0)


def cmd_converge(run: Run, args) -> int:
    cfg = run.cfg
    if cfg.schedule.eps is None:
        raise ConfigError("missing required key 'schedule.eps' for the converge command")
    medium, lattice = _prepare(run)
    table = build_table(run, medium, lattice, args.workers, hamiltonian=False)
    K = cfg.grids.K
    if len(K.h_box) != medium.dim or any(len(b) != medium.dim for b in K.bases):
        raise ConfigError("grids.K: box and base points must match the medium dimension")
    T = max(K.times)
    rows = ["eps,sup_error,K,seed,datum,base"]
    reports = []
    ok = True
    for di, dspec in enumerate(cfg.converge.data):
        try:
            datum = InitialDatum.from_spec(dspec)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"converge.data.{di}: {exc}") from None
        drep = audit_datum(datum, cfg.schedule.eps, medium.dim)
        run.audits[f"datum_{di}"] = drep["passed"]
        if not drep["passed"]:
            raise ScienceFailure(f"datum {datum.name} fails its equicontinuity audit")
        lo = min(b[0] for b in K.h_box)
        hi = max(b[1] for b in K.h_box)
        step = cfg.converge.hopf_lax_step
        axis = np.arange(int(round((hi - lo) / step)) + 1) * step + lo
        with run.timed(f"homogenized_{di}"):
            v = solve_homogenized(table, datum, T, [axis] * medium.dim, K.times)
        jobs = [(seed, tuple(b), e) for seed in cfg.schedule.seeds for b in K.bases
                for e in cfg.schedule.eps]

        def solve(job):
            seed, base, e = job
            om = sample_environment(medium, seed)
            return solve_rescaled(medium, om, e, datum, T, lattice, K.times,
                                  region=max(abs(lo), abs(hi)), base=base)

        with run.timed(f"rescaled_{di}"):
            if args.workers > 1:
                with ThreadPoolExecutor(max_workers=args.workers) as pool:
                    fields = list(pool.map(solve, jobs))
            else:
                fields = [solve(j) for j in jobs]
        ne = len(cfg.schedule.eps)
        for gi in range(0, len(jobs), ne):
            seed, base, _ = jobs[gi]
            rep = convergence_error(fields[gi:gi + ne], v, [tuple(b) for b in K.h_box], K.times,
                                    base, K.h_step)
            reports.append({"datum": datum.describe(), **rep.to_dict()})
            ok = ok and rep.verdict
            for e, err in zip(rep.eps, rep.errors):
                rows.append(",".join([format(e, ".17g"), format(err, ".17g"), "K0", str(seed),
                                      datum.name, " ".join(format(c, ".17g") for c in base)]))
    run.audits["convergence"] = bool(ok)
    run.add("convergence.csv", "\n".join(rows) + "\n")
    run.add_json("convergence.json", {"reports": reports, "verdict": bool(ok),
                                      "table": table.metadata()})
    return run.finish(0 if ok else 1)


def cmd_stable_norm(run: Run, args) -> int:
    cfg = run.cfg
    if cfg.medium.kind != "metric":
        raise ConfigError("medium.kind must be 'metric' for the stable-norm command")
    medium, lattice = _prepare(run)
    table = build_table(run, medium, lattice, args.workers, hamiltonian=False)
    sn = stationary_stable_norm(table, cfg.tolerances.norm)
    fam = MetricFamily.from_spec(cfg.medium.metric, medium.dim)
    sc = cfg.stable_norm
    lines = sn.to_csv().rstrip("\n").split("\n")
    agreement = {}
    with run.timed("periodic_oracle"):
        for h in sc.classes:
            val, spread, _ = periodic_stable_norm(fam, h, sc.schedule, sc.resolution, sc.reach)
            lines.append(",".join([format(float(c), ".17g") for c in h]
                                  + [format(val, ".17g"), "periodic-oracle", format(spread, ".17g")]))
            try:
                erg = sn.value(h)
                agreement[str(list(h))] = abs(erg - val) / val if val > 0 else abs(erg)
            except KeyError:
                run.warnings.append(f"class {h} is not on the direction grid; no agreement check")
    homog = homogeneity_check(table)
    audit = {"norm_audit": sn.audit, "agreement": agreement, "homogeneity": homog,
             "tolerances": cfg.tolerances.model_dump()}
    passed = (sn.audit["passed"]
              and all(v <= cfg.tolerances.agreement for v in agreement.values())
              and homog["max_defect"] <= cfg.tolerances.homogeneity)
    run.audits["stable_norm"] = bool(passed)
    run.add("stable_norm.csv", "\n".join(lines) + "\n")
    run.add_json("stable_norm_audit.json", audit)
    if not passed:
        run.warnings.append("stable-norm audit violations above tolerance")
        if args.strict:
            return run.finish(1)
    return run.finish(0)


COMMANDS = {"audit": cmd_audit, "effective": cmd_effective, "converge": cmd_converge,
            "stable-norm": cmd_stable_norm}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjhomog", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--cache", help=f"action-table cache directory (default: ${CACHE_ENV})")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--strict", action="store_true", help="treat warnings as failures")
        p.add_argument("--seed-override", type=int, metavar="K",
                       help="replace the configured seed list with the single seed K")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        ap.error("--workers must be at least 1")
    try:
        cfg, cfg_hash, doc = load_config(args.config)
        if args.seed_override is not None:
            if not 0 <= args.seed_override < 2**64:
                raise ConfigError("--seed-override must be a 64-bit unsigned integer")
            cfg = cfg.model_copy(update={"schedule": cfg.schedule.model_copy(
                update={"seeds": [args.seed_override]})})
            cfg_hash = cfg_hash + f"+seed{args.seed_override}"
        out = Path(args.out or cfg.output.dir)
        cache_dir = args.cache or os.environ.get(CACHE_ENV)
        cache = ActionCache(cache_dir) if cache_dir else None
        run = Run(args.command, cfg, cfg_hash, out, cache)
        return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ScienceFailure, GridBoundaryError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        try:
            return run.finish(1)
        except NameError:
            return 1


if __name__ == "__main__":
    sys.exit(main())
