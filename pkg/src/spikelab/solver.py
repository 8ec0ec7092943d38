"""Nehari-constrained descent, multistart orbit collection and eps-continuation."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .fields import laplacian_array
from .geometry import DomainMask
from .nehari import NehariPoint, NotInU, project
from .system import CouplingMatrix, SystemState, energy_difference, gradient_arrays, pde_residual_norm

log = logging.getLogger(__name__)

OUTCOMES = ("converged", "maxiter", "left_U")


class SolverError(RuntimeError):
    pass


class BranchLost(SolverError):
    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# -- H^1_0 Riesz map ----------------------------------------------------------

class SobolevPreconditioner:
    """Riesz map of the eps-inner product on inside nodes.

    ``apply(g)`` returns G with <G, v>_eps = g . v for every v, i.e. it
    solves (eps^2 K + h^2 I) G = eps^2 g where K is the Dirichlet graph
    Laplacian of the mask.
    """

    def __init__(self, mask: DomainMask, eps: float):
        self.mask = mask
        self.eps = eps
        h = mask.grid.h
        idx = mask.flat_index
        n = idx.size
        ny, nx = mask.inside.shape
        lookup = np.full(ny * nx, -1, dtype=np.int64)
        lookup[idx] = np.arange(n)
        rows, cols = [], []
        for shift in (1, -1, nx, -nx):
            nb = lookup[idx + shift]
            ok = nb >= 0
            rows.append(np.arange(n)[ok])
            cols.append(nb[ok])
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        adj = sp.csc_matrix((np.ones(r.size), (r, c)), shape=(n, n))
        mat = (eps * eps) * (4.0 * sp.identity(n, format="csc") - adj) + (h * h) * sp.identity(n, format="csc")
        self._lu = spla.splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A")
        self._scale = eps * eps

    def apply(self, g: NDArray) -> NDArray:
        idx = self.mask.flat_index
        flat = g.reshape(g.shape[0], -1)
        rhs = np.ascontiguousarray(flat[:, idx].T) * self._scale
        sol = self._lu.solve(rhs)
        out = np.zeros_like(flat)
        out[:, idx] = sol.T
        return out.reshape(g.shape)


def preconditioner(mask: DomainMask, eps: float) -> SobolevPreconditioner:
    cache = mask.__dict__.setdefault("_precond", {})
    pc = cache.get(eps)
    if pc is None:
        pc = cache[eps] = SobolevPreconditioner(mask, eps)
    return pc


def gram_apply(state: SystemState) -> NDArray:
    """M u, with M the Gram matrix of the eps-inner product (u.Mu = ||u||_eps^2)."""
    eps, h = state.eps, state.h
    out = np.empty_like(state.u)
    for i, c in enumerate(state.u):
        out[i] = (h * h / (eps * eps)) * (c - eps * eps * laplacian_array(c, h))
    out[:, ~state.mask.inside] = 0.0
    return out


# -- descent -----------------------------------------------------------------

@dataclass(frozen=True)
class SolveConfig:
    grad_tol: float = 1e-8
    max_iter: int = 20000
    init_step: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-10
    dedup: float = 1e-3
    projection_tol: float = 1e-12
    method: str = "lbfgs"
    memory: int = 10
    trace_every: int = 1

    def __post_init__(self) -> None:
        if not (self.grad_tol > 0 and self.dedup > 0 and self.projection_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.method not in ("gradient", "lbfgs"):
            raise ValueError(f"unknown descent method {self.method!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class SolveReport:
    state: SystemState
    energy: float
    grad_norm: float
    iterations: int
    outcome: str
    signs: list[str] = field(default_factory=list)
    barycenters: NDArray | None = None
    separation: float = float("nan")
    concentration: NDArray | None = None
    residual: float = float("nan")
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    note: str = ""

    @property
    def converged(self) -> bool:
        return self.outcome == "converged"

    @property
    def relative_grad(self) -> float:
        return self.grad_norm


def _dot(x: NDArray, y: NDArray) -> float:
    return float(np.vdot(x, y))


def descend(seed: SystemState, cm: CouplingMatrix, cfg: SolveConfig = SolveConfig(),
            pc: SobolevPreconditioner | None = None) -> SolveReport:
    """Minimize Psi from ``seed`` by projected descent in the eps-metric.

    Each step moves along a preconditioned direction, rescales onto the
    Nehari set and is accepted by Armijo backtracking on Psi.  The stopping
    test is ||grad||_eps <= grad_tol * ||u||_eps.
    """
    point = project(seed, cm, cfg.projection_tol)
    if pc is None:
        pc = preconditioner(seed.mask, seed.eps)
    u = point.state
    J = point.energy
    g = gradient_arrays(u, cm)
    G = pc.apply(g)
    mem: deque = deque(maxlen=cfg.memory)
    trace: list[tuple[int, float, float, float]] = []
    outcome, note = "maxiter", ""
    step = cfg.init_step
    it = 0
    while True:
        gnorm = math.sqrt(max(_dot(g, G), 0.0))
        unorm = math.sqrt(float(np.sum(point.a)))
        rel = gnorm / unorm
        if it % cfg.trace_every == 0:
            trace.append((it, J, rel, step))
        if rel <= cfg.grad_tol:
            outcome = "converged"
            break
        if it >= cfg.max_iter:
            break
        d = _direction(g, G, mem, cfg) if cfg.method == "lbfgs" else -G
        # directions along u_i only rescale and are removed by the projection
        Mu = gram_apply(u)
        coef = np.einsum("kij,kij->k", d, Mu) / point.a
        d = d - coef[:, None, None] * u.u
        slope = _dot(g, d)
        if not slope < 0:
            mem.clear()
            d = -G
            slope = -gnorm * gnorm
        step = cfg.init_step
        accepted = None
        saw_left = False
        while step >= cfg.min_step:
            try:
                trial = project(u.with_values(u.u + step * d), cm, cfg.projection_tol)
            except NotInU:
                saw_left = True
                step *= cfg.backtrack
                continue
            dJ = energy_difference(trial.state, u, cm)
            if dJ <= cfg.armijo * step * slope:
                accepted = (trial, dJ)
                break
            step *= cfg.backtrack
        if accepted is None:
            if saw_left:
                outcome, note = "left_U", f"reprojection failed at iteration {it}"
            else:
                note = f"line search stalled at iteration {it} (relative gradient {rel:.3e})"
            break
        trial, dJ = accepted
        g_new = gradient_arrays(trial.state, cm)
        G_new = pc.apply(g_new)
        s = trial.state.u - u.u
        y = g_new - g
        sy = _dot(s, y)
        if cfg.method == "lbfgs" and sy > 1e-14 * math.sqrt(_dot(s, s) * _dot(y, y)):
            mem.append((s, y, G_new - G, 1.0 / sy))
        point, u, g, G = trial, trial.state, g_new, G_new
        J = J + dJ
        it += 1
    if outcome != "converged":
        log.info("descent ended with %s after %d iterations: %s", outcome, it, note)
    return SolveReport(
        state=u, energy=point.energy, grad_norm=rel, iterations=it, outcome=outcome,
        residual=pde_residual_norm(u, cm), trace=trace, note=note,
    )


def _direction(g, G, mem, cfg) -> NDArray:
    """L-BFGS two-loop recursion with the eps-Riesz map as initial Hessian."""
    if not mem:
        return -G
    q = g.copy()
    PQ = G.copy()
    alphas = []
    for s, y, Py, rho in reversed(mem):
        a = rho * _dot(s, q)
        q -= a * y
        PQ -= a * Py
        alphas.append(a)
    s, y, Py, rho = mem[-1]
    gamma = _dot(s, y) / _dot(y, Py)
    r = gamma * PQ
    for (s, y, Py, rho), a in zip(mem, reversed(alphas)):
        b = rho * _dot(y, r)
        r += (a - b) * s
    return -r


# -- diagnostics on reports ---------------------------------------------------

def annotate(rep: SolveReport, cm: CouplingMatrix, reference=None) -> SolveReport:
    """Fill sign classes, barycenters, separation and concentration errors."""
    from .diagnostics import WindowError, barycenter_vec, concentration_error, separation_ratio, sign_classes

    rep.signs = sign_classes(rep.state)
    try:
        rep.barycenters = barycenter_vec(rep.state)
    except ValueError:
        return rep
    rep.separation = separation_ratio(rep.state, rep.barycenters)
    if reference is not None:
        try:
            rep.concentration = concentration_error(rep.state, reference, np.diag(cm.beta), rep.barycenters)
        except WindowError as exc:
            rep.concentration = np.full(rep.state.ell, np.nan)
            rep.note = (rep.note + "; " if rep.note else "") + str(exc)
    return rep


def limit_energies(cm: CouplingMatrix, reference) -> NDArray:
    """c_{inf,i} from one whole-space ground state through the beta law."""
    k = 1.0 / (cm.p - 1)
    return np.array([reference.energy * (reference.beta / b) ** k for b in np.diag(cm.beta)])


# -- multistart ----------------------------------------------------------------

@dataclass(eq=False)
class Orbit:
    key: object  # diagnostics.OrbitKey
    report: SolveReport
    config: object  # seeding.Configuration
    seed_index: int


@dataclass(eq=False)
class SolutionSet:
    orbits: list[Orbit]
    configs: list
    reports: list[SolveReport | None]
    failures: list[tuple[int, str]]
    ball_energies: NDArray | None = None

    def __len__(self) -> int:
        return len(self.orbits)

    @property
    def energies(self) -> list[float]:
        return [o.report.energy for o in self.orbits]

    @property
    def converged(self) -> int:
        return sum(1 for r in self.reports if r is not None and r.converged)


def _solve_seed(args):
    seed, cm, cfg = args
    try:
        return descend(seed, cm, cfg)
    except (NotInU, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def ball_states(cm: CouplingMatrix, r: float, eps: float, h: float, cfg: SolveConfig | None = None,
                use_cache: bool = True) -> list:
    """Per-component ball ground states on B_r at spacing h."""
    from .geometry import DomainSpec, Grid
    from .groundstate import cached_solve, solve_scalar

    spec = DomainSpec.disk(r)
    grid = Grid.fit(spec, h)
    solve = cached_solve if use_cache else solve_scalar
    out = []
    for b in np.diag(cm.beta):
        out.append(solve(spec, grid, float(b), cm.p, eps, cfg))
    return out


def multistart(spec, grid, cm: CouplingMatrix, eps: float, r: float, n_seeds: int, rng_seed: int,
               cfg: SolveConfig = SolveConfig(), reference=None, jobs: int = 1, use_cache: bool = True,
               configs=None) -> SolutionSet:
    """Descend from i_eps seeds at sampled configurations; keep distinct Z-orbits.

    Per-seed failures are collected; SolverError only if no seed converges.
    Orbits are merged sequentially in (energy, seed index) order.
    """
    from .diagnostics import canonicalize, orbit_distance
    from .geometry import build_mask
    from .groundstate import PlacementError
    from .seeding import i_eps, sample_F

    mask = build_mask(spec, grid)
    gss = ball_states(cm, r, eps, grid.h, cfg, use_cache)
    if configs is None:
        configs = sample_F(spec, cm.ell, r, n_seeds, rng_seed, grid=grid)
    failures: list[tuple[int, str]] = []
    seeds = []
    for k, c in enumerate(configs):
        try:
            seeds.append((k, i_eps(c, gss, mask, eps)))
        except PlacementError as exc:
            failures.append((k, f"placement: {exc}"))
    preconditioner(mask, eps)
    results = _map(_solve_seed, [(s, cm, cfg) for _, s in seeds], jobs)
    reports: list[SolveReport | None] = [None] * len(configs)
    for (k, _), res in zip(seeds, results):
        if isinstance(res, str):
            failures.append((k, res))
            log.warning("seed %d discarded: %s", k, res)
            continue
        reports[k] = annotate(res, cm, reference)
        if not res.converged:
            failures.append((k, f"{res.outcome} after {res.iterations} iterations "
                                f"(relative gradient {res.grad_norm:.3e}) {res.note}".rstrip()))
    good = sorted((k for k, r_ in enumerate(reports) if r_ is not None and r_.converged),
                  key=lambda k: (reports[k].energy, k))
    if not good:
        raise SolverError("no seed converged: " + "; ".join(f"seed {k}: {m}" for k, m in sorted(failures)))
    orbits: list[Orbit] = []
    for k in good:
        rep = reports[k]
        if all(orbit_distance(rep.state, o.report.state) >= cfg.dedup for o in orbits):
            orbits.append(Orbit(canonicalize(rep.state), rep, configs[k], k))
    failures.sort()
    return SolutionSet(orbits, list(configs), reports, failures, np.array([g.energy for g in gss]))


# -- continuation --------------------------------------------------------------

MIN_CELLS_PER_EPS = 8.0


@dataclass(eq=False)
class Stage:
    index: int
    eps: float
    h: float
    report: SolveReport
    gap: float  # energy - sum c_inf


def transfer(state: SystemState, mask: DomainMask, eps: float) -> SystemState:
    """Bilinear node-value transfer of ``state`` onto ``mask`` at a new eps."""
    from scipy.interpolate import RegularGridInterpolator

    ax, ay = state.mask.grid.axes()
    X, Y = mask.grid.coords()
    pts = np.column_stack([Y[mask.inside], X[mask.inside]])
    out = np.zeros((state.ell,) + mask.inside.shape)
    for i, c in enumerate(state.u):
        f = RegularGridInterpolator((ay, ax), c, method="linear", bounds_error=False, fill_value=0.0)
        out[i][mask.inside] = f(pts)
    return SystemState(out, eps, mask)


def check_schedule(eps_schedule, hs) -> None:
    eps_schedule = list(eps_schedule)
    if not eps_schedule:
        raise ValueError("empty eps schedule")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError(f"eps schedule must be strictly decreasing: {eps_schedule}")
    for e, h in zip(eps_schedule, hs):
        if e / h < MIN_CELLS_PER_EPS * (1 - 1e-12):
            raise ValueError(f"eps/h = {e / h:.3g} < {MIN_CELLS_PER_EPS:g} at eps = {e:g}")


def continuation(spec, cm: CouplingMatrix, eps_schedule, r: float, cfg: SolveConfig = SolveConfig(),
                 cells_per_eps: float = MIN_CELLS_PER_EPS, grids=None, config=None, rng_seed: int = 0,
                 reference=None, use_cache: bool = True) -> list[Stage]:
    """Follow one solution branch along a decreasing eps schedule.

    Stage 0 starts from i_eps at ``config`` (sampled if None); later stages
    warm-start from the previous solution transferred to a grid with
    h = eps / cells_per_eps.  Raises BranchLost with the failing stage.
    """
    from .geometry import Grid, build_mask
    from .groundstate import PlacementError
    from .seeding import i_eps, sample_F

    eps_schedule = [float(e) for e in eps_schedule]
    if grids is None:
        grids = [Grid.fit(spec, e / cells_per_eps) for e in eps_schedule]
    if len(grids) != len(eps_schedule):
        raise ValueError("one grid per stage required")
    check_schedule(eps_schedule, [g.h for g in grids])
    cinf = limit_energies(cm, reference).sum() if reference is not None else float("nan")
    stages: list[Stage] = []
    prev = None
    for k, (eps, grid) in enumerate(zip(eps_schedule, grids)):
        mask = build_mask(spec, grid)
        try:
            if prev is None:
                gss = ball_states(cm, r, eps, grid.h, cfg, use_cache)
                if config is None:
                    config = sample_F(spec, cm.ell, r, 1, rng_seed, grid=grid)[0]
                seed = i_eps(config, gss, mask, eps)
            else:
                seed = transfer(prev, mask, eps)
            rep = descend(seed, cm, cfg)
        except (NotInU, PlacementError, ValueError) as exc:
            raise BranchLost(k, f"{type(exc).__name__}: {exc}") from exc
        if not rep.converged:
            raise BranchLost(k, f"descent ended with {rep.outcome} after {rep.iterations} iterations "
                                f"(relative gradient {rep.grad_norm:.3e}) {rep.note}".rstrip())
        annotate(rep, cm, reference)
        stages.append(Stage(k, eps, grid.h, rep, rep.energy - cinf))
        log.info("stage %d eps=%g energy=%.10g gap=%.3e separation=%.3f", k, eps, rep.energy,
                 rep.energy - cinf, rep.separation)
        prev = rep.state
    return stages


def matched_reference(p: float, cells_per_eps: float = MIN_CELLS_PER_EPS, L: float = 32.0,
                      use_cache: bool = True, beta: float = 1.0):
    """Whole-space ground state at the rescaled spacing 1/cells_per_eps.

    Stage grids with h = eps / cells_per_eps are, after z = x / eps, the same
    lattice, so energy gaps and profile errors against this reference are
    free of the O(h^2) bias that a finer reference would introduce.
    """
    from .geometry import DomainSpec, Grid
    from .groundstate import cached_solve, whole_space

    n = int(round(L * cells_per_eps))
    if not use_cache:
        return whole_space(beta, p, L, n)
    spec = DomainSpec.rectangle(L, L)
    return cached_solve(spec, Grid.fit(spec, L / n, pad=1), beta, p, 1.0)
