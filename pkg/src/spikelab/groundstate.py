"""Positive least-energy solutions of the scalar problems.

``solve_scalar`` handles both the whole-space problem (eps = 1 on a large
box) and the ball problem on B_r; the radial shooting oracle is an
independent check of the former.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .fields import Field, eps_norm_sq, mixed_integral, read_field, write_field
from .geometry import DomainMask, DomainSpec, Grid, boundary_distance, build_mask
from .system import CouplingMatrix, SystemState
from .solver import SolveConfig, SolverError, descend

WIDTHS = (1.0, 0.5, 2.0)


class PlacementError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


@dataclass(eq=False)
class GroundState:
    profile: Field
    energy: float
    beta: float
    p: float
    eps: float
    domain: DomainSpec
    iterations: int = 0
    grad_norm: float = 0.0

    @property
    def tag(self) -> str:
        if self.domain.shape == "disk":
            return f"ball({self.domain.params[0]:g})"
        return f"box({self.domain.params[0]:g})"

    @property
    def mass(self) -> float:
        """int w^2 (unweighted)."""
        h = self.profile.grid.h
        return float(h * h * np.sum(self.profile.values ** 2))

    @property
    def support_radius(self) -> float:
        return self.domain.params[0] if self.domain.shape == "disk" else 0.5 * self.domain.narrowest

    def nehari_defect(self) -> float:
        """|a - beta b| / a for the scalar Nehari constraint."""
        a = eps_norm_sq(self.profile, self.eps)
        b = mixed_integral(self.profile, self.profile, self.p, self.eps)
        return abs(a - self.beta * b) / a


def solve_scalar(domain: DomainSpec, grid: Grid, beta: float, p: float, eps: float,
                 cfg: SolveConfig | None = None, widths=WIDTHS, mask: DomainMask | None = None) -> GroundState:
    """Least-energy positive solution of -eps^2 Lap w + w = beta |w|^{2p-2} w on ``domain``.

    Descent on the scalar Nehari manifold from centered Gaussians of width
    ``eps * w`` for each w in ``widths``; the lowest energy is kept.
    """
    if not (beta > 0 and p > 1 and eps > 0):
        raise ValueError(f"need beta > 0, p > 1, eps > 0 (got {beta}, {p}, {eps})")
    cfg = cfg or SolveConfig()
    mask = mask or build_mask(domain, grid)
    cm = CouplingMatrix.scalar(beta, p)
    X, Y = grid.coords()
    r2 = (X - domain.center[0]) ** 2 + (Y - domain.center[1]) ** 2
    best = None
    failures = []
    for w in widths:
        width = eps * w
        seed = SystemState(np.exp(-r2 / (2 * width * width)), eps, mask)
        rep = descend(seed, cm, cfg)
        if not rep.converged:
            failures.append(f"width {width:g}: {rep.outcome} after {rep.iterations} iterations "
                            f"(relative gradient {rep.grad_norm:.3e}; {rep.note}); last trace {rep.trace[-3:]}")
            continue
        if best is None or rep.energy < best.energy:
            best = rep
    if best is None:
        raise SolverError(f"scalar ground state on {domain.shape}{domain.params} did not converge: "
                          + "; ".join(failures))
    prof = best.state.u[0]
    if prof.sum() < 0:
        prof = -prof
    return GroundState(Field(prof, mask), best.energy, beta, p, eps, domain, best.iterations, best.grad_norm)


def whole_space(beta: float, p: float, L: float = 24.0, n: int = 512, cfg: SolveConfig | None = None) -> GroundState:
    """Box surrogate of the problem on R^2 (eps = 1, side L, spacing L/n)."""
    spec = DomainSpec.rectangle(L, L)
    return solve_scalar(spec, Grid.fit(spec, L / n, pad=1), beta, p, 1.0, cfg)


def ball(r: float, beta: float, p: float, eps: float, h: float, cfg: SolveConfig | None = None) -> GroundState:
    """Ball problem on B_r, on a grid of spacing h with a node at the center."""
    spec = DomainSpec.disk(r)
    return solve_scalar(spec, Grid.fit(spec, h), beta, p, eps, cfg)


def beta_scale(beta: float, p: float) -> float:
    """Amplitude factor beta^{-1/(2p-2)} mapping the beta = 1 solution to beta."""
    return beta ** (-1.0 / (2 * p - 2))


def place(gs: GroundState, xi, target: DomainMask) -> Field:
    """Translate the profile to the node nearest xi on the target grid.

    Offsets are whole multiples of h; no interpolation.
    """
    src = gs.profile.grid
    tg = target.grid
    if abs(src.h - tg.h) > 1e-12 * tg.h:
        raise PlacementError(f"grid spacings differ ({src.h} vs {tg.h})")
    rad = gs.support_radius
    if boundary_distance(target.spec, xi) <= rad:
        raise PlacementError(f"support of radius {rad:g} around {tuple(xi)} leaves the domain")
    i0, j0 = tg.node_of(xi)
    ci, cj = src.node_of(gs.domain.center)
    jj, ii = np.nonzero(gs.profile.values)
    ti = ii - ci + i0
    tj = jj - cj + j0
    ok = (ti >= 0) & (ti < tg.nx) & (tj >= 0) & (tj < tg.ny)
    if not np.all(ok) or not np.all(target.inside[tj, ti]):
        raise PlacementError(f"snapped support around node {(i0, j0)} leaves the domain")
    out = np.zeros(target.inside.shape)
    out[tj, ti] = gs.profile.values[jj, ii]
    return Field(out, target)


# -- radial oracle ------------------------------------------------------------

@dataclass
class RadialProfile:
    rho: NDArray
    w: NDArray
    dw: NDArray
    w0: float
    energy: float
    mass: float


def _rk4_shoot(w0: float, beta: float, p: float, dr: float, nsteps: int, keep: bool = False):
    """Integrate w'' = -w'/rho + w - beta |w|^{2p-2} w from the origin.

    Returns +1 for overshoot (w crosses zero), -1 for undershoot (w turns up),
    0 if neither happened by rmax; optionally the samples.
    """
    q = 2 * p - 1

    def rhs(r, w, v):
        return v, -v / r + w - beta * math.copysign(abs(w) ** q, w)

    c = 0.5 * (w0 - beta * w0 ** q)
    r, w, v = dr, w0 + 0.5 * c * dr * dr, c * dr
    if keep:
        rs, ws, vs = [0.0, r], [w0, w], [0.0, v]
    verdict = 0
    for _ in range(nsteps - 1):
        k1w, k1v = rhs(r, w, v)
        k2w, k2v = rhs(r + dr / 2, w + dr / 2 * k1w, v + dr / 2 * k1v)
        k3w, k3v = rhs(r + dr / 2, w + dr / 2 * k2w, v + dr / 2 * k2v)
        k4w, k4v = rhs(r + dr, w + dr * k3w, v + dr * k3v)
        w += dr / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
        v += dr / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        r += dr
        if keep:
            rs.append(r)
            ws.append(w)
            vs.append(v)
        if w < 0:
            verdict = 1
            break
        if v > 0:
            verdict = -1
            break
    if keep:
        return verdict, np.array(rs), np.array(ws), np.array(vs)
    return verdict


def radial_shooting_oracle(beta: float, p: float, rmax: float = 14.0, tol: float = 1e-13,
                           dr: float = 2.5e-3, bracket=(0.5, 6.0)) -> RadialProfile:
    """Decaying radial solution of -Lap w + w = beta |w|^{2p-2} w in R^2.

    Bisection on w(0) with RK4 integration; energy and mass by Simpson's
    rule in rho d rho out to the point where the shot leaves the decaying
    branch.  The bracket is given for beta = 1 and scaled by the beta law.
    """
    if not (beta > 0 and p > 1):
        raise ValueError("need beta > 0 and p > 1")
    nsteps = int(round(rmax / dr))
    k = beta_scale(beta, p)
    lo, hi = bracket[0] * k, bracket[1] * k
    if _rk4_shoot(lo, beta, p, dr, nsteps) != -1 or _rk4_shoot(hi, beta, p, dr, nsteps) != 1:
        raise OracleError(f"shooting bracket [{lo}, {hi}] does not straddle the ground state")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        v = _rk4_shoot(mid, beta, p, dr, nsteps)
        if v == 1:
            hi = mid
        elif v == -1:
            lo = mid
        else:
            lo = hi = mid
    w0 = 0.5 * (lo + hi)
    _, rs, ws, vs = _rk4_shoot(lo, beta, p, dr, nsteps, keep=True)
    # drop the tail where the undershoot turns upward
    stop = int(np.argmin(ws)) + 1
    rs, ws, vs = rs[:stop], ws[:stop], vs[:stop]
    if len(rs) % 2 == 0:
        rs, ws, vs = rs[:-1], ws[:-1], vs[:-1]
    dens_m = ws * ws * rs
    dens_e = (0.5 * (vs * vs + ws * ws) - beta / (2 * p) * np.abs(ws) ** (2 * p)) * rs
    mass = 2 * math.pi * _simpson(dens_m, dr)
    en = 2 * math.pi * _simpson(dens_e, dr)
    return RadialProfile(rs, ws, vs, w0, en, mass)


def _simpson(f: NDArray, dx: float) -> float:
    return float(dx / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum()))


# -- cache --------------------------------------------------------------------

def cache_dir() -> Path:
    return Path(os.environ.get("NEHARI_CACHE_DIR", Path.home() / ".cache" / "spikelab"))


def _cache_key(domain: DomainSpec, beta: float, p: float, eps: float, h: float) -> str:
    blob = json.dumps({"domain": domain.to_dict(), "beta": beta, "p": p, "eps": eps, "h": h},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def cached_solve(domain: DomainSpec, grid: Grid, beta: float, p: float, eps: float,
                 cfg: SolveConfig | None = None, directory: Path | None = None) -> GroundState:
    """solve_scalar backed by a content-addressed on-disk cache.

    Entries are written once and never modified.
    """
    base = Path(directory) if directory is not None else cache_dir()
    key = _cache_key(domain, beta, p, eps, grid.h)
    binf, meta = base / f"{key}.field", base / f"{key}.json"
    mask = build_mask(domain, grid)
    if binf.exists() and meta.exists():
        info = json.loads(meta.read_text())
        vals, g2 = read_field(binf)
        if vals.shape == mask.inside.shape and info["grid"] == grid.to_dict():
            return GroundState(Field(vals, mask), info["energy"], beta, p, eps, domain,
                               info.get("iterations", 0), info.get("grad_norm", 0.0))
    gs = solve_scalar(domain, grid, beta, p, eps, cfg, mask=mask)
    base.mkdir(parents=True, exist_ok=True)
    tmp = binf.with_suffix(".tmp")
    write_field(tmp, gs.profile.values, grid)
    os.replace(tmp, binf)
    meta.write_text(json.dumps({
        "domain": domain.to_dict(), "beta": beta, "p": p, "eps": eps, "h": grid.h,
        "grid": grid.to_dict(), "energy": gs.energy, "iterations": gs.iterations,
        "grad_norm": gs.grad_norm,
    }, indent=1, sort_keys=True))
    return gs
