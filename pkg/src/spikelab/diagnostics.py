"""Barycenters, sign classes, Z-orbit keys and concentration metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import RectBivariateSpline

from .fields import Field, eps_norm_sq
from .geometry import Grid
from .system import SystemState, apply_sign

SIGN_CLASSES = ("nonnegative", "nonpositive", "sign_changing", "zero")
DEDUP = 1e-3
WINDOW_LEAK = 1e-6


class ZeroFieldError(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class WindowError(ValueError):
    """The rescaled component does not fit inside the reference window."""


def barycenter(f, grid: Grid | None = None) -> tuple[float, float]:
    """Center of mass of f^2, b(f) = sum x f^2 / sum f^2.

    Coordinates are summed as offsets from the grid anchor, which keeps the
    shift, symmetry and rescale identities exact at the sum level.
    """
    if isinstance(f, Field):
        vals, grid = f.values, f.grid
    else:
        vals = np.asarray(f, dtype=float)
        if grid is None:
            raise TypeError("a grid is required for bare arrays")
    w = vals * vals
    tot = float(w.sum())
    if not tot > 0:
        raise ZeroFieldError("barycenter of the zero field is undefined")
    ox, oy = grid.offsets()
    bx = float(w.sum(axis=0) @ ox) / tot
    by = float(w.sum(axis=1) @ oy) / tot
    return grid.anchor[0] + bx, grid.anchor[1] + by


def barycenter_vec(state: SystemState) -> NDArray:
    """(l, 2) array of componentwise barycenters."""
    out = np.empty((state.ell, 2))
    for i, c in enumerate(state.u):
        try:
            out[i] = barycenter(c, state.mask.grid)
        except ZeroFieldError as exc:
            raise ZeroFieldError(f"component {i} is identically zero") from exc
    return out


def sign_classify(f, delta_rel: float = 1e-8) -> str:
    """nonnegative iff min f >= -delta_rel max|f| (and symmetrically)."""
    if delta_rel < 0:
        raise ValueError("delta_rel must be nonnegative")
    vals = f.values if isinstance(f, Field) else np.asarray(f)
    top = float(np.max(np.abs(vals)))
    if top == 0:
        return "zero"
    if float(vals.min()) >= -delta_rel * top:
        return "nonnegative"
    if float(vals.max()) <= delta_rel * top:
        return "nonpositive"
    return "sign_changing"


def sign_classes(state: SystemState, delta_rel: float = 1e-8) -> list[str]:
    return [sign_classify(c, delta_rel) for c in state.u]


@dataclass(eq=False)
class OrbitKey:
    state: SystemState  # canonical representative
    signs: tuple[int, ...]  # s with state = s * original


def canonicalize(state: SystemState) -> OrbitKey:
    """Flip every component with negative integral."""
    s = tuple(-1 if float(c.sum()) < 0 else 1 for c in state.u)
    if all(v == 1 for v in s):
        return OrbitKey(state, s)
    return OrbitKey(apply_sign(state, s), s)


def _unit_components(state: SystemState) -> NDArray:
    u = canonicalize(state).state.u
    h = state.h
    n = np.sqrt(h * h * np.sum(u * u, axis=(1, 2)))
    if np.any(n == 0):
        raise ZeroFieldError("orbit distance needs nonzero components")
    return u / n[:, None, None]


def orbit_distance(a: SystemState, b: SystemState) -> float:
    """Mean over components of the discrete L^2 distance between the
    L^2-normalized canonical representatives.

    Zero on Z-orbits, symmetric, and a sum of Euclidean distances on unit
    spheres, hence a pseudometric.  Disjoint bumps sit at sqrt(2).
    """
    if a.mask is not b.mask and (a.mask.inside.shape != b.mask.inside.shape
                                 or a.mask.grid != b.mask.grid
                                 or not np.array_equal(a.mask.inside, b.mask.inside)):
        raise GridMismatch("orbit distance needs states on the same grid")
    if a.ell != b.ell:
        raise GridMismatch(f"component counts differ ({a.ell} vs {b.ell})")
    h = a.h
    d = _unit_components(a) - _unit_components(b)
    return float(np.mean(np.sqrt(h * h * np.sum(d * d, axis=(1, 2)))))


def separation_ratio(state: SystemState, bary: NDArray | None = None) -> float:
    """min over i != j of |b(u_i) - b(u_j)| / eps."""
    if state.ell < 2:
        return float("inf")
    b = barycenter_vec(state) if bary is None else bary
    return min(math.dist(b[i], b[j]) for i, j in itertools.combinations(range(len(b)), 2)) / state.eps


def _reference_interpolator(gs) -> RectBivariateSpline:
    # cubic: bilinear interpolation leaves an O(h^2) floor of a few 1e-3
    ax, ay = gs.profile.grid.axes()
    return RectBivariateSpline(ay, ax, gs.profile.values, kx=3, ky=3)


def reference_profile(state: SystemState, gs, beta: float, center, interp=None) -> NDArray:
    """beta-scaled whole-space profile omega((x - center)/eps) on the state's nodes.

    Zero outside the reference box.
    """
    interp = interp or _reference_interpolator(gs)
    lam = (gs.beta / beta) ** (1.0 / (2 * gs.p - 2))
    ax, ay = gs.profile.grid.axes()
    X, Y = state.mask.grid.coords()
    inside = state.mask.inside
    zx = (X[inside] - center[0]) / state.eps
    zy = (Y[inside] - center[1]) / state.eps
    ok = (zx >= ax[0]) & (zx <= ax[-1]) & (zy >= ay[0]) & (zy <= ay[-1])
    vals = np.zeros(zx.shape)
    vals[ok] = interp.ev(zy[ok], zx[ok])
    out = np.zeros(inside.shape)
    out[inside] = lam * vals
    return out


def concentration_error(state: SystemState, whole_space_gs, betas, bary: NDArray | None = None) -> NDArray:
    """Relative eps-norm distance of each canonical component to the rescaled
    whole-space profile centred at its barycenter.

    ``whole_space_gs`` is one eps = 1 ground state (any beta; the beta law maps
    it to beta_ii) or a list with one per component.  Evaluation happens on the
    state's own nodes, i.e. on the grid rescaled by 1/eps, with bicubic
    spline interpolation of the reference.
    """
    ell = state.ell
    refs = list(whole_space_gs) if isinstance(whole_space_gs, (list, tuple)) else [whole_space_gs] * ell
    betas = np.broadcast_to(np.asarray(betas, dtype=float), (ell,))
    canon = canonicalize(state).state
    b = barycenter_vec(canon) if bary is None else bary
    X, Y = state.mask.grid.coords()
    cache: dict[int, RectBivariateSpline] = {}
    out = np.empty(ell)
    for i in range(ell):
        g = refs[i]
        interp = cache.setdefault(id(g), _reference_interpolator(g))
        ax, ay = g.profile.grid.axes()
        ui = canon.u[i]
        zx = np.abs((X - b[i][0]) / state.eps - g.domain.center[0])
        zy = np.abs((Y - b[i][1]) / state.eps - g.domain.center[1])
        outside = (zx > min(-ax[0], ax[-1])) | (zy > min(-ay[0], ay[-1]))
        m2 = ui * ui
        leak = float(m2[outside].sum()) / float(m2.sum())
        if leak > WINDOW_LEAK:
            raise WindowError(f"component {i}: {leak:.2e} of the mass falls outside the reference window")
        ref = reference_profile(state, g, betas[i], b[i], interp)
        den = eps_norm_sq(ref, state.eps, state.h)
        out[i] = math.sqrt(eps_norm_sq(ui - ref, state.eps, state.h) / den)
    return out


def local_mass(state: SystemState, beta_diag, p: float, bary: NDArray | None = None) -> NDArray:
    """eps^{-2} int_{B_eps(b_i)} beta_ii |u_i|^{2p}: the rescaled mass in a unit ball."""
    b = barycenter_vec(state) if bary is None else bary
    X, Y = state.mask.grid.coords()
    h = state.h
    out = np.empty(state.ell)
    for i, c in enumerate(state.u):
        near = (X - b[i][0]) ** 2 + (Y - b[i][1]) ** 2 < state.eps ** 2
        out[i] = beta_diag[i] * h * h * float(np.sum(np.abs(c[near]) ** (2 * p))) / state.eps ** 2
    return out
