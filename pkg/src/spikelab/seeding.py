"""Configuration spaces F_{l,r}, E_{l,r} and the seeding map.

Sampling uses a counter-based Philox stream keyed by the caller's seed, so
results depend only on (domain, l, r, count, seed, grid).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import DomainMask, DomainSpec, Grid, boundary_distance
from .system import SystemState

MAX_REJECTIONS = 10 ** 6


class SamplingExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class Configuration:
    points: tuple[tuple[float, float], ...]
    r: float = 0.0

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if self.r < 0:
            raise ValueError("separation radius must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "r", float(self.r))

    @property
    def ell(self) -> int:
        return len(self.points)

    def array(self) -> NDArray:
        return np.array(self.points, dtype=float).reshape(-1, 2)

    def with_radius(self, r: float) -> "Configuration":
        return Configuration(self.points, r)

    def to_json(self) -> dict:
        return {"r": self.r, "points": [list(p) for p in self.points]}

    @classmethod
    def from_json(cls, d) -> "Configuration":
        if isinstance(d, str):
            d = json.loads(d)
        return cls(tuple(tuple(p) for p in d["points"]), d.get("r", 0.0))


def _pairwise(pts: NDArray) -> NDArray:
    diff = pts[:, None, :] - pts[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def in_F(cfg: Configuration, spec: DomainSpec) -> bool:
    """dist(xi_i, complement) > r for all i and |xi_i - xi_j| > 2r for i != j."""
    pts = cfg.array()
    if not np.all(np.asarray(boundary_distance(spec, pts)) > cfg.r):
        return False
    d = _pairwise(pts)
    iu = np.triu_indices(len(pts), 1)
    return bool(np.all(d[iu] > 2 * cfg.r))


def in_E(cfg: Configuration, spec: DomainSpec) -> bool:
    """Index-dependent thresholds 2^{l-i+1} r (1-based i) on the boundary
    distance of xi_i and on its distance to every earlier point."""
    pts = cfg.array()
    ell = len(pts)
    bd = np.asarray(boundary_distance(spec, pts))
    d = _pairwise(pts)
    for i in range(ell):
        thr = 2.0 ** (ell - i) * cfg.r
        if not bd[i] > thr:
            return False
        if i and not np.all(d[i, :i] > thr):
            return False
    return True


def in_F_batch(pts: NDArray, r: float, spec: DomainSpec) -> NDArray:
    """Vectorized in_F over an array of tuples of shape (n, l, 2)."""
    bd = np.asarray(boundary_distance(spec, pts))
    ok = np.all(bd > r, axis=1)
    for i, j in itertools.combinations(range(pts.shape[1]), 2):
        ok &= np.hypot(*(pts[:, i] - pts[:, j]).T) > 2 * r
    return ok


def in_E_batch(pts: NDArray, r: float, spec: DomainSpec) -> NDArray:
    ell = pts.shape[1]
    bd = np.asarray(boundary_distance(spec, pts))
    ok = np.ones(pts.shape[0], dtype=bool)
    for i in range(ell):
        thr = 2.0 ** (ell - i) * r
        ok &= bd[:, i] > thr
        for j in range(i):
            ok &= np.hypot(*(pts[:, i] - pts[:, j]).T) > thr
    return ok


def clearance(pts: NDArray, spec: DomainSpec, i: int) -> float:
    """Packing radius of point i: min(dist(xi_i, boundary), half the distance
    to the nearest other point).  The largest r with cfg in F_{l,r} is the
    minimum over i."""
    bd = float(boundary_distance(spec, pts[i]))
    others = np.delete(pts, i, axis=0)
    if len(others) == 0:
        return bd
    return min(bd, 0.5 * float(np.min(np.hypot(*(others - pts[i]).T))))


def _admissible(cand, pts, r: float, spec: DomainSpec) -> bool:
    # incremental in_F test: pts is already admissible
    x, y = cand
    if not all(math.hypot(x - a, y - b) > 2 * r for a, b in pts):
        return False
    return float(boundary_distance(spec, cand)) > r


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(stream)]))


def _sampler(spec: DomainSpec, rng: np.random.Generator, grid: Grid | None):
    hx, hy = spec.half_extent
    cx, cy = spec.center

    def draw(around=None, radius=None):
        if around is None:
            p = (cx + rng.uniform(-hx, hx), cy + rng.uniform(-hy, hy))
        else:
            ang = rng.uniform(0, 2 * np.pi)
            rad = radius * np.sqrt(rng.uniform())
            p = (around[0] + rad * np.cos(ang), around[1] + rad * np.sin(ang))
        return grid.snap(p) if grid is not None else p

    return draw


def sample_F(spec: DomainSpec, ell: int, r: float, count: int, rng_seed: int,
             grid: Grid | None = None, spread_sweeps: int = 6, candidates: int = 16,
             max_rejections: int = MAX_REJECTIONS) -> list[Configuration]:
    """``count`` configurations in F_{ell,r}(spec) by rejection sampling.

    Each accepted tuple is then spread by local farthest-point refinement:
    every point in turn is replaced by the admissible candidate (from a
    shrinking neighbourhood) with the largest clearance.  With ``grid`` all
    points are snapped to grid nodes before any test.
    """
    if ell < 1 or count < 0:
        raise ValueError("need ell >= 1 and count >= 0")
    rng = rng_for(rng_seed)
    draw = _sampler(spec, rng, grid)
    out: list[Configuration] = []
    rejections = 0
    while len(out) < count:
        pts: list[tuple[float, float]] = []
        stuck = 0
        while len(pts) < ell:
            cand = draw()
            if _admissible(cand, pts, r, spec):
                pts.append(cand)
                stuck = 0
                continue
            rejections += 1
            stuck += 1
            if rejections >= max_rejections:
                raise SamplingExhausted(
                    f"no configuration in F_{{{ell},{r:g}}} after {rejections} rejections; r too large?")
            if stuck > 1000:
                pts, stuck = [], 0
        arr = np.array(pts)
        radius = spec.diameter / 4
        for _ in range(spread_sweeps):
            for i in range(ell):
                best, best_c = arr[i].copy(), clearance(arr, spec, i)
                for _ in range(candidates):
                    trial = arr.copy()
                    trial[i] = draw(arr[i], radius)
                    if not in_F(Configuration(trial, r), spec):
                        continue
                    c = clearance(trial, spec, i)
                    if c > best_c:
                        best, best_c = trial[i].copy(), c
                arr[i] = best
            radius *= 0.5
        out.append(Configuration(tuple(map(tuple, arr)), r))
    return out


def feasible_radius(spec: DomainSpec, ell: int, rng_seed: int = 0,
                    fractions=(0.3, 0.2, 0.15, 0.1, 0.05), grid: Grid | None = None,
                    max_rejections: int = 2 * 10 ** 5) -> float:
    """Largest r = f * diam(spec) over ``fractions`` for which sampling succeeds."""
    for f in sorted(fractions, reverse=True):
        r = f * spec.diameter
        try:
            sample_F(spec, ell, r, 1, rng_seed, grid, spread_sweeps=0, max_rejections=max_rejections)
        except SamplingExhausted:
            continue
        return r
    raise SamplingExhausted(f"F_{{{ell},r}} looks empty for every tried r")


def i_eps(cfg: Configuration, gss, mask: DomainMask, eps: float) -> SystemState:
    """Disjoint ball profiles placed at the configuration points."""
    from .groundstate import place

    gss = list(gss)
    if len(gss) != cfg.ell:
        raise ValueError(f"{cfg.ell} points but {len(gss)} ground states")
    for g in gss:
        if abs(g.eps - eps) > 1e-15 * eps:
            raise ValueError(f"ground state solved at eps={g.eps}, seeding at eps={eps}")
    return SystemState(np.stack([place(g, x, mask).values for g, x in zip(gss, cfg.points)]), eps, mask)
