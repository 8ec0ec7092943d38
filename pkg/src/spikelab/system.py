"""The coupled energy, its partial gradients and the sign-group action.

All quantities are exact functions of the discrete node values: the
gradient returned by :func:`partial_gradient` is the true gradient of the
discrete :func:`energy`, not a discretization of the continuum gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .fields import Field, ParameterError, abs_pow, edge_terms, laplacian_array, odd_pow
from .geometry import DomainMask

DEFAULT_BETA = ((1.0, -1.0), (-1.0, 1.5))
DEFAULT_P = 2.0


class CouplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Symmetric couplings (beta_ii > 0, beta_ij < 0) and the exponent p.

    A 1x1 matrix is accepted and describes the scalar problem.
    """

    beta: NDArray[np.float64]
    p: float = DEFAULT_P

    def __post_init__(self) -> None:
        b = np.array(self.beta, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] < 1:
            raise CouplingError(f"beta must be a square matrix, got shape {b.shape}")
        if not np.all(np.isfinite(b)):
            raise CouplingError("beta entries must be finite")
        if not np.array_equal(b, b.T):
            raise CouplingError("beta must be symmetric")
        if not np.all(np.diag(b) > 0):
            raise CouplingError("diagonal couplings beta_ii must be positive")
        off = b[~np.eye(b.shape[0], dtype=bool)]
        if not np.all(off < 0):
            raise CouplingError("off-diagonal couplings beta_ij must be negative (competitive regime)")
        if not (np.isfinite(self.p) and self.p > 1):
            raise CouplingError(f"exponent p must exceed 1, got {self.p}")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "p", float(self.p))

    @property
    def ell(self) -> int:
        return self.beta.shape[0]

    @classmethod
    def default(cls) -> "CouplingMatrix":
        return cls(np.array(DEFAULT_BETA), DEFAULT_P)

    @classmethod
    def scalar(cls, beta: float, p: float) -> "CouplingMatrix":
        return cls(np.array([[beta]]), p)

    @classmethod
    def uniform(cls, ell: int, diag=None, off: float = -1.0, p: float = DEFAULT_P) -> "CouplingMatrix":
        """ell x ell matrix with given diagonal (default 1, 1.5, 2, ...) and constant off-diagonal."""
        d = [1.0 + 0.5 * i for i in range(ell)] if diag is None else list(diag)
        b = np.full((ell, ell), float(off))
        np.fill_diagonal(b, d)
        return cls(b, p)

    @classmethod
    def from_config(cls, ell: int, p: float, beta) -> "CouplingMatrix":
        flat = np.asarray(beta, dtype=float).ravel()
        if flat.size != ell * ell:
            raise CouplingError(f"beta needs {ell * ell} entries for ell={ell}, got {flat.size}")
        if ell < 2:
            raise CouplingError("systems need ell >= 2")
        return cls(flat.reshape(ell, ell), p)

    def to_dict(self) -> dict:
        return {"ell": self.ell, "p": self.p, "beta": self.beta.ravel().tolist()}


@dataclass(eq=False)
class SystemState:
    """An ell-tuple of grid functions (stacked as ``u[i]``) and eps."""

    u: NDArray[np.float64]
    eps: float
    mask: DomainMask = field(repr=False)

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        u = np.array(self.u, dtype=np.float64)
        if u.ndim == 2:
            u = u[None]
        if u.shape[1:] != self.mask.inside.shape:
            raise ValueError(f"components of shape {u.shape[1:]} do not fit grid {self.mask.inside.shape}")
        u[:, ~self.mask.inside] = 0.0
        if not np.all(np.isfinite(u)):
            raise ValueError("state values must be finite")
        self.u = u

    @property
    def ell(self) -> int:
        return self.u.shape[0]

    @property
    def h(self) -> float:
        return self.mask.grid.h

    @property
    def components(self) -> list[Field]:
        return [Field(c, self.mask) for c in self.u]

    @classmethod
    def from_fields(cls, fields, eps: float) -> "SystemState":
        fields = list(fields)
        masks = {id(f.mask) for f in fields}
        if len(masks) != 1:
            raise ValueError("all components must share one grid and mask")
        return cls(np.stack([f.values for f in fields]), eps, fields[0].mask)

    def with_values(self, u: NDArray) -> "SystemState":
        """Same grid and eps, new component array (assumed already masked)."""
        s = object.__new__(SystemState)
        s.u, s.eps, s.mask = u, self.eps, self.mask
        return s

    def copy(self) -> "SystemState":
        return self.with_values(self.u.copy())


def norms_and_overlaps(state: SystemState, p: float) -> tuple[NDArray, NDArray]:
    """a_i = ||u_i||_eps^2 and b_ij = eps^{-2} int |u_i|^p |u_j|^p."""
    eps, h = state.eps, state.h
    ell = state.ell
    a = np.empty(ell)
    pw = [abs_pow(c, p) for c in state.u]
    b = np.empty((ell, ell))
    w = h * h / (eps * eps)
    for i, c in enumerate(state.u):
        ex, ey = edge_terms(c)
        a[i] = float(np.sum(ex) + np.sum(ey)) + w * float(np.sum(c * c))
        for j in range(i + 1):
            b[i, j] = b[j, i] = w * float(np.sum(pw[i] * pw[j]))
    return a, b


def energy_from_parts(a: NDArray, b: NDArray, cm: CouplingMatrix) -> float:
    return 0.5 * float(np.sum(a)) - float(np.sum(cm.beta * b)) / (2 * cm.p)


def energy(state: SystemState, cm: CouplingMatrix) -> float:
    a, b = norms_and_overlaps(state, cm.p)
    return energy_from_parts(a, b, cm)


def constraint_values(state: SystemState, cm: CouplingMatrix) -> NDArray:
    a, b = norms_and_overlaps(state, cm.p)
    return a - np.sum(cm.beta * b, axis=1)


def nonlinearity(state: SystemState, cm: CouplingMatrix) -> NDArray:
    """sum_j beta_ij |u_j|^p |u_i|^{p-2} u_i, stacked over i."""
    p = cm.p
    pw = np.stack([abs_pow(c, p) for c in state.u])
    coupled = np.tensordot(cm.beta, pw, axes=1)
    return coupled * np.stack([odd_pow(c, p - 1) for c in state.u])


def residual_arrays(state: SystemState, cm: CouplingMatrix) -> NDArray:
    """-eps^2 Lap_h u_i + u_i - sum_j beta_ij |u_j|^p |u_i|^{p-2} u_i, zero outside."""
    eps, h, inside = state.eps, state.h, state.mask.inside
    out = nonlinearity(state, cm)
    np.subtract(state.u, out, out=out)
    for i, c in enumerate(state.u):
        out[i] -= eps * eps * laplacian_array(c, h)
    out[:, ~inside] = 0.0
    return out


def gradient_arrays(state: SystemState, cm: CouplingMatrix) -> NDArray:
    """Euclidean gradient of :func:`energy` with respect to every node value."""
    return residual_arrays(state, cm) * (state.h ** 2 / state.eps ** 2)


def partial_gradient(state: SystemState, cm: CouplingMatrix, i: int) -> Field:
    if not 0 <= i < state.ell:
        raise IndexError(f"component {i} out of range for ell={state.ell}")
    eps, h = state.eps, state.h
    p = cm.p
    ui = state.u[i]
    nl = sum(cm.beta[i, j] * abs_pow(state.u[j], p) for j in range(state.ell)) * odd_pow(ui, p - 1)
    r = -eps * eps * laplacian_array(ui, h) + ui - nl
    return Field(r * (h * h / (eps * eps)), state.mask)


def pde_residual_norm(state: SystemState, cm: CouplingMatrix) -> float:
    """Max over components of the discrete L2 norm of the strong residual."""
    r = residual_arrays(state, cm)
    h = state.h
    return float(max(np.sqrt(h * h * np.sum(ri * ri)) for ri in r))


def apply_sign(state: SystemState, s) -> SystemState:
    s = np.asarray(s)
    if s.shape != (state.ell,) or not np.all(np.abs(s) == 1):
        raise ValueError(f"sign vector must have {state.ell} entries in {{+1, -1}}")
    return state.with_values(state.u * s.astype(float)[:, None, None])


def energy_difference(new: SystemState, old: SystemState, cm: CouplingMatrix) -> float:
    """energy(new) - energy(old), summed from node-wise differences.

    Much more accurate than differencing two totals when the states are
    close, which the line search relies on near convergence.
    """
    eps, h, p = new.eps, new.h, cm.p
    w = h * h / (eps * eps)
    quad = 0.0
    for un, uo in zip(new.u, old.u):
        for ax in (0, 1):
            dn, do = np.diff(un, axis=ax), np.diff(uo, axis=ax)
            quad += float(np.sum((dn - do) * (dn + do)))
        quad += w * float(np.sum((un - uo) * (un + uo)))
    pn = [abs_pow(c, p) for c in new.u]
    po = [abs_pow(c, p) for c in old.u]
    mixed = 0.0
    ell = new.ell
    for i in range(ell):
        for j in range(i + 1):
            k = 1.0 if i == j else 2.0
            mixed += k * cm.beta[i, j] * float(np.sum(pn[i] * pn[j] - po[i] * po[j]))
    return 0.5 * quad - w * mixed / (2 * p)
