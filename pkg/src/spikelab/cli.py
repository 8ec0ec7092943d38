"""Command-line entry point: ``spikelab {groundstate,solve,continue,verify}``.

Exit codes: 0 success, 1 computational failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .fields import write_field, write_pgm
from .geometry import DomainSpec, GeometryError, Grid, build_mask
from .seeding import Configuration, SamplingExhausted, feasible_radius
from .system import CouplingError, CouplingMatrix

log = logging.getLogger("spikelab")

MAX_NODES = 4_000_000


class ConfigError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class RunConfig:
    domain: dict = field(default_factory=lambda: {"shape": "disk", "params": [1.0], "center": [0.0, 0.0]})
    ell: int = 2
    p: float = 2.0
    beta: list | None = None
    eps: float = 0.05
    eps_schedule: list | None = None
    cells_per_eps: float = 8.0
    r: float | str = "auto"
    seeds: int = 20
    rng_seed: int = 0
    jobs: int = 1
    out: str = "runs/out"
    method: str = "lbfgs"
    max_iter: int = 20000
    grad_tol: float = 1e-8
    reference_box: float = 32.0
    points: list | None = None

    @classmethod
    def from_dict(cls, d: dict, where: str = "config") -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{where}.{unknown[0]}", "unknown field")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    # -- derived objects, each raising ConfigError with the field name --

    def domain_spec(self) -> DomainSpec:
        try:
            return DomainSpec.from_dict(self.domain)
        except (GeometryError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError("domain", str(exc)) from exc

    def coupling(self) -> CouplingMatrix:
        try:
            if self.beta is None:
                if self.ell == 2:
                    return CouplingMatrix(CouplingMatrix.default().beta, self.p)
                return CouplingMatrix.uniform(self.ell, p=self.p)
            return CouplingMatrix.from_config(self.ell, self.p, self.beta)
        except (CouplingError, ValueError) as exc:
            raise ConfigError("beta", str(exc)) from exc

    def schedule(self) -> list[float]:
        return [float(e) for e in (self.eps_schedule or [self.eps])]

    def grid_for(self, eps: float) -> Grid:
        return Grid.fit(self.domain_spec(), eps / self.cells_per_eps)

    def validate(self, command: str) -> None:
        spec = self.domain_spec()
        self.coupling()
        if not isinstance(self.ell, int) or self.ell < 2:
            raise ConfigError("ell", "need an integer ell >= 2")
        sched = self.schedule()
        if any(not e > 0 for e in sched):
            raise ConfigError("eps_schedule" if self.eps_schedule else "eps", "eps must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigError("eps_schedule", f"must be strictly decreasing, got {sched}")
        if not self.cells_per_eps >= 8:
            raise ConfigError("cells_per_eps", f"eps/h = {self.cells_per_eps:g} violates the eps/h >= 8 rule")
        for e in sched:
            g = self.grid_for(e)
            if g.nx * g.ny > MAX_NODES:
                raise ConfigError("eps", f"grid of {g.nx}x{g.ny} nodes at eps={e:g} exceeds {MAX_NODES} nodes")
            try:
                build_mask(spec, g)
            except GeometryError as exc:
                raise ConfigError("cells_per_eps", str(exc)) from exc
        if self.r != "auto" and not (isinstance(self.r, (int, float)) and self.r > 0):
            raise ConfigError("r", "must be a positive number or 'auto'")
        if self.r != "auto" and self.r >= spec.narrowest / 2:
            # no point of the domain is farther than the inradius from the boundary
            raise ConfigError("r", f"r={self.r:g} is not below the inradius {spec.narrowest / 2:g}; F is empty")
        for name in ("seeds", "jobs", "max_iter"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.method not in ("lbfgs", "gradient"):
            raise ConfigError("method", f"unknown descent method {self.method!r}")
        if not self.grad_tol > 0:
            raise ConfigError("grad_tol", "must be positive")
        if self.points is not None:
            try:
                cfg = Configuration(tuple(tuple(p) for p in self.points))
            except (TypeError, ValueError) as exc:
                raise ConfigError("points", str(exc)) from exc
            if cfg.ell != self.ell:
                raise ConfigError("points", f"{cfg.ell} points for ell={self.ell}")

    def solve_config(self):
        from .solver import SolveConfig

        return SolveConfig(grad_tol=self.grad_tol, max_iter=self.max_iter, method=self.method)


def parse_domain(text: str) -> dict:
    """'disk:1', 'rectangle:2,1', 'ellipse:1.5,0.8' with optional '@cx,cy'."""
    shape, _, rest = text.partition(":")
    params, _, center = rest.partition("@")
    try:
        vals = [float(v) for v in params.split(",") if v]
        c = [float(v) for v in center.split(",")] if center else [0.0, 0.0]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad domain {text!r}: {exc}") from exc
    return {"shape": shape, "params": vals, "center": c}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _points(text: str) -> list[list[float]]:
    return [_floats(chunk) for chunk in text.split(";") if chunk.strip()]


def _radius(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"r must be a number or 'auto', got {text!r}") from exc


def load_config(path: str | None, overrides: dict) -> RunConfig:
    base: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(path, str(exc)) from exc
        try:
            base = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from exc
        if not isinstance(base, dict):
            raise ConfigError(path, "top level must be an object")
        if "config" in base and isinstance(base["config"], dict):
            base = base["config"]  # a manifest from an earlier run
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_dict(base, where=path or "config")
    except TypeError as exc:
        raise ConfigError(path or "config", str(exc)) from exc


# -- output helpers -------------------------------------------------------------

def _num(x) -> str:
    x = float(x)
    return repr(x) if np.isfinite(x) else ("nan" if np.isnan(x) else ("inf" if x > 0 else "-inf"))


def _versions() -> dict:
    return {"spikelab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _component_columns(ell: int) -> list[str]:
    cols = []
    for i in range(1, ell + 1):
        cols += [f"sign_{i}", f"bx_{i}", f"by_{i}", f"conc_{i}", f"local_mass_{i}"]
    return cols


def _component_values(rep, cm) -> list:
    from .diagnostics import local_mass

    ell = rep.state.ell
    b = rep.barycenters if rep.barycenters is not None else np.full((ell, 2), np.nan)
    conc = rep.concentration if rep.concentration is not None else np.full(ell, np.nan)
    mass = local_mass(rep.state, np.diag(cm.beta), cm.p, b)
    out = []
    for i in range(ell):
        out += [rep.signs[i] if rep.signs else "", _num(b[i][0]), _num(b[i][1]), _num(conc[i]), _num(mass[i])]
    return out


def _write_solutions(directory: Path, tagged_states) -> dict:
    """Field binaries and PGM heatmaps on a fixed per-component scale [0, max|u_i|]."""
    directory.mkdir(parents=True, exist_ok=True)
    tagged_states = list(tagged_states)
    if not tagged_states:
        return {"vmin": 0.0, "vmax": []}
    ell = tagged_states[0][1].ell
    vmax = [max(float(np.max(np.abs(s.u[i]))) for _, s in tagged_states) for i in range(ell)]
    for tag, s in tagged_states:
        for i in range(ell):
            stem = directory / f"{tag}_u{i + 1}"
            write_field(stem.with_suffix(".field"), s.u[i], s.mask.grid)
            write_pgm(stem.with_suffix(".pgm"), np.abs(s.u[i]), 0.0, vmax[i])
    return {"vmin": 0.0, "vmax": vmax, "values": "abs(u_i)"}


def _trace_rows(tag, rep) -> list[list]:
    return [[tag, it, _num(J), _num(g), _num(st)] for it, J, g, st in rep.trace]


# -- subcommands ------------------------------------------------------------------

def cmd_groundstate(args) -> int:
    from .groundstate import cached_solve, radial_shooting_oracle, solve_scalar
    from .solver import SolverError

    if args.ball is not None:
        spec = DomainSpec.disk(args.ball)
        h = args.h if args.h else args.eps / args.cells_per_eps
    else:
        spec = DomainSpec.rectangle(args.box, args.box)
        h = args.h if args.h else args.box / args.n
    if not (args.eps > 0 and args.p > 1 and h > 0 and all(b > 0 for b in args.beta)):
        print("error: need eps > 0, p > 1, h > 0 and beta > 0", file=sys.stderr)
        return 2
    grid = Grid.fit(spec, h, pad=1 if args.ball is None else 2)
    try:
        build_mask(spec, grid)
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    header = ["beta", "p", "eps", "domain", "h", "energy", "mass", "beta_law_energy", "nehari_defect", "iterations"]
    oracle = args.ball is None and args.eps == 1.0 and not args.no_oracle
    if oracle:
        header += ["oracle_energy", "oracle_mass", "energy_rel_diff", "mass_rel_diff"]
    rows = []
    for beta in args.beta:
        try:
            if args.no_cache:
                gs = solve_scalar(spec, grid, beta, args.p, args.eps)
            else:
                gs = cached_solve(spec, grid, beta, args.p, args.eps)
        except SolverError as exc:
            print(f"error: ground state beta={beta:g} p={args.p:g} eps={args.eps:g} on {gs_tag(spec)} failed: {exc}",
                  file=sys.stderr)
            return 1
        mass = gs.mass / args.eps ** 2
        row = [beta, args.p, args.eps, gs_tag(spec), grid.h, gs.energy, mass,
               gs.energy * beta ** (1 / (args.p - 1)), gs.nehari_defect(), gs.iterations]
        if oracle:
            orc = radial_shooting_oracle(beta, args.p)
            row += [orc.energy, orc.mass, gs.energy / orc.energy - 1, mass / orc.mass - 1]
        rows.append(row)
    print("  ".join(f"{c:>15}" for c in header))
    for row in rows:
        print("  ".join(f"{v:>15.10g}" if isinstance(v, float) else f"{v!s:>15}" for v in row))
    if args.csv:
        _write_csv(Path(args.csv), header, [[_num(v) if isinstance(v, float) else v for v in r] for r in rows])
    return 0


def gs_tag(spec: DomainSpec) -> str:
    return f"{spec.shape}({','.join(f'{v:g}' for v in spec.params)})"


def _resolve(cfg: RunConfig, eps: float):
    spec = cfg.domain_spec()
    grid = cfg.grid_for(eps)
    r = cfg.r
    if r == "auto":
        r = feasible_radius(spec, cfg.ell, cfg.rng_seed, grid=grid)
        log.info("auto r = %g", r)
    return spec, grid, float(r)


def _manifest(cfg: RunConfig, command: str, **extra) -> dict:
    return {"command": command, "config": cfg.to_dict(), "versions": _versions(), **extra}


def cmd_solve(cfg: RunConfig) -> int:
    from .solver import limit_energies, matched_reference, multistart

    cm = cfg.coupling()
    eps = cfg.schedule()[-1] if cfg.eps_schedule else cfg.eps
    spec, grid, r = _resolve(cfg, eps)
    ref = matched_reference(cm.p, cfg.cells_per_eps, cfg.reference_box)
    cinf = limit_energies(cm, ref)
    configs = None
    if cfg.points is not None:
        configs = [Configuration(tuple(tuple(p) for p in cfg.points), r)]
    sol = multistart(spec, grid, cm, eps, r, cfg.seeds, cfg.rng_seed, cfg.solve_config(),
                     reference=ref, jobs=cfg.jobs, configs=configs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["orbit", "seed", "energy", "gap", "residual", "rel_grad", "iterations", "separation"]
    header += _component_columns(cm.ell)
    rows = []
    for k, o in enumerate(sol.orbits):
        rep = o.report
        rows.append([k, o.seed_index, _num(rep.energy), _num(rep.energy - cinf.sum()), _num(rep.residual),
                     _num(rep.grad_norm), rep.iterations, _num(rep.separation)] + _component_values(rep, cm))
    _write_csv(out / "summary.csv", header, rows)
    trace = []
    for k, rep in enumerate(sol.reports):
        if rep is not None:
            trace += _trace_rows(k, rep)
    _write_csv(out / "trace.csv", ["seed", "iteration", "energy", "rel_grad", "step"], trace)
    scale = _write_solutions(out / "solutions", [(f"orbit{k:02d}", o.report.state) for k, o in enumerate(sol.orbits)])
    outcomes = []
    for k, rep in enumerate(sol.reports):
        if rep is None:
            outcomes.append({"seed": k, "outcome": "discarded"})
        else:
            outcomes.append({"seed": k, "outcome": rep.outcome, "iterations": rep.iterations,
                             "energy": rep.energy, "rel_grad": rep.grad_norm, "note": rep.note})
    man = _manifest(cfg, "solve", eps=eps, r=r, grid=grid.to_dict(),
                    configurations=[c.to_json() for c in sol.configs], outcomes=outcomes,
                    failures=[{"seed": k, "reason": m} for k, m in sol.failures],
                    ball_energies=sol.ball_energies.tolist(), limit_energies=cinf.tolist(),
                    reference={"box": cfg.reference_box, "h": ref.profile.grid.h, "energy": ref.energy},
                    orbits=[{"orbit": k, "seed": o.seed_index, "energy": o.report.energy}
                            for k, o in enumerate(sol.orbits)],
                    pgm_scale=scale)
    (out / "manifest.json").write_text(json.dumps(man, indent=1) + "\n")
    n = len(sol)
    print(f"{n} distinct orbit(s) from {sol.converged}/{len(sol.configs)} converged seeds "
          f"(eps={eps:g}, r={r:g}, h={grid.h:g}); count >= ell={cm.ell}: {'yes' if n >= cm.ell else 'no'}")
    for k, o in enumerate(sol.orbits):
        print(f"  orbit {k}: energy {o.report.energy:.10f}  signs {','.join(o.report.signs)}  "
              f"separation/eps {o.report.separation:.3f}")
    if n < cm.ell:
        print(f"warning: fewer than ell={cm.ell} distinct orbits found", file=sys.stderr)
    return 0


def cmd_continue(cfg: RunConfig) -> int:
    from .solver import BranchLost, continuation, limit_energies, matched_reference

    sched = cfg.schedule()
    if len(sched) == 1:
        return cmd_solve(cfg)
    cm = cfg.coupling()
    spec, grid0, r = _resolve(cfg, sched[0])
    ref = matched_reference(cm.p, cfg.cells_per_eps, cfg.reference_box)
    cinf = limit_energies(cm, ref)
    start = Configuration(tuple(tuple(p) for p in cfg.points), r) if cfg.points is not None else None
    try:
        stages = continuation(spec, cm, sched, r, cfg.solve_config(), cfg.cells_per_eps,
                              config=start, rng_seed=cfg.rng_seed, reference=ref)
    except BranchLost as exc:
        print(f"error: branch lost at stage {exc.stage} (eps={sched[exc.stage]:g}): {exc}", file=sys.stderr)
        return 1
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["stage", "eps", "h", "energy", "gap", "residual", "rel_grad", "iterations", "separation"]
    header += _component_columns(cm.ell)
    rows, trace = [], []
    for s in stages:
        rep = s.report
        rows.append([s.index, _num(s.eps), _num(s.h), _num(rep.energy), _num(s.gap), _num(rep.residual),
                     _num(rep.grad_norm), rep.iterations, _num(rep.separation)] + _component_values(rep, cm))
        trace += _trace_rows(s.index, rep)
    _write_csv(out / "summary.csv", header, rows)
    _write_csv(out / "trace.csv", ["stage", "iteration", "energy", "rel_grad", "step"], trace)
    scale = _write_solutions(out / "solutions", [(f"stage{s.index:02d}", s.report.state) for s in stages])
    man = _manifest(cfg, "continue", schedule=sched, r=r,
                    grids=[cfg.grid_for(e).to_dict() for e in sched], limit_energies=cinf.tolist(),
                    reference={"box": cfg.reference_box, "h": ref.profile.grid.h, "energy": ref.energy},
                    stages=[{"stage": s.index, "eps": s.eps, "energy": s.report.energy, "gap": s.gap,
                             "iterations": s.report.iterations} for s in stages],
                    pgm_scale=scale)
    (out / "manifest.json").write_text(json.dumps(man, indent=1) + "\n")
    print(f"{'stage':>5} {'eps':>8} {'energy':>16} {'gap':>12} {'sep/eps':>9} "
          + " ".join(f"{'conc_' + str(i + 1):>10}" for i in range(cm.ell)))
    for s in stages:
        rep = s.report
        conc = rep.concentration if rep.concentration is not None else np.full(cm.ell, np.nan)
        print(f"{s.index:>5} {s.eps:>8g} {rep.energy:>16.10f} {s.gap:>12.3e} {rep.separation:>9.3f} "
              + " ".join(f"{c:>10.3e}" for c in conc))
    return 0


def cmd_verify(args) -> int:
    from .checks import SUITES, run_suites

    names = args.suite or list(SUITES)
    bad = [n for n in names if n not in SUITES]
    if bad:
        print(f"error: unknown suite(s) {', '.join(bad)}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return 2
    results = run_suites(names)
    for res in results:
        print(res.line())
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


# -- parser -------------------------------------------------------------------------

def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (flags override its values)")
    p.add_argument("--domain", type=parse_domain, help="e.g. disk:1, rectangle:2,1@0.5,0.5, ellipse:1.5,0.8")
    p.add_argument("--ell", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--beta", type=_floats, help="row-major comma-separated ell x ell matrix")
    p.add_argument("--eps", type=float)
    p.add_argument("--cells-per-eps", dest="cells_per_eps", type=float, help="grid resolution eps/h (>= 8)")
    p.add_argument("--r", type=_radius, help="separation radius or 'auto'")
    p.add_argument("--seeds", type=int)
    p.add_argument("--rng-seed", dest="rng_seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--method", choices=("lbfgs", "gradient"))
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--points", type=_points, help="explicit start configuration 'x1,y1;x2,y2'")


RUN_KEYS = ("domain", "ell", "p", "beta", "eps", "cells_per_eps", "r", "seeds", "rng_seed", "jobs", "out",
            "method", "max_iter", "grad_tol", "points")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spikelab", description="Nehari-constrained solver for competitive "
                                 "singularly perturbed elliptic systems on planar domains.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("groundstate", help="scalar ground states and oracle comparison")
    g.add_argument("--beta", type=float, nargs="+", required=True)
    g.add_argument("--p", type=float, default=2.0)
    g.add_argument("--eps", type=float, default=1.0)
    where = g.add_mutually_exclusive_group()
    where.add_argument("--box", type=float, default=24.0, help="side of the whole-space box surrogate")
    where.add_argument("--ball", type=float, help="radius r of the ball problem")
    g.add_argument("--n", type=int, default=512, help="cells across the box")
    g.add_argument("--h", type=float, help="explicit grid spacing")
    g.add_argument("--cells-per-eps", dest="cells_per_eps", type=float, default=8.0)
    g.add_argument("--no-oracle", action="store_true")
    g.add_argument("--no-cache", action="store_true")
    g.add_argument("--csv", help="also write the table to this CSV file")

    s = sub.add_parser("solve", help="multistart from sampled configurations")
    _run_options(s)
    c = sub.add_parser("continue", help="follow a branch along a decreasing eps schedule")
    _run_options(c)
    c.add_argument("--eps-schedule", dest="eps_schedule", type=_floats, help="e.g. 0.2,0.1,0.05")

    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .solver import SolverError

    try:
        if args.command == "groundstate":
            return cmd_groundstate(args)
        if args.command == "verify":
            return cmd_verify(args)
        keys = RUN_KEYS + (("eps_schedule",) if args.command == "continue" else ())
        cfg = load_config(args.config, {k: getattr(args, k, None) for k in keys})
        cfg.validate(args.command)
        return cmd_solve(cfg) if args.command == "solve" else cmd_continue(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SamplingExhausted as exc:
        print(f"config error: r: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
