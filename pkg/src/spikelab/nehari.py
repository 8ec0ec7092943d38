"""Componentwise scaling onto the Nehari-type set and the reduced functional."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .system import CouplingMatrix, SystemState, energy_from_parts, norms_and_overlaps

T_MIN, T_MAX = 1e-8, 1e8
MAX_NEWTON = 200


class NotInU(ArithmeticError):
    """No positive componentwise multiple of the state lies on the Nehari set."""


class ZeroComponent(ValueError):
    pass


@dataclass(eq=False)
class NehariPoint:
    state: SystemState
    t: NDArray[np.float64]
    residual: NDArray[np.float64]
    energy: float
    iterations: int = 0
    a: NDArray | None = None  # eps-norms squared of the projected components
    b: NDArray | None = None  # overlap matrix of the projected components


def closed_form_scaling(a: NDArray, b: NDArray, cm: CouplingMatrix) -> NDArray:
    """Decoupled solution t_i = (a_i / (beta_ii b_ii))^{1/(2p-2)}."""
    return (a / (np.diag(cm.beta) * np.diag(b))) ** (1.0 / (2 * cm.p - 2))


def _scaled_parts(a, b, t, p):
    tp = t ** p
    return a * t * t, b * np.outer(tp, tp)


def _normalized_residual(a, b, t, cm):
    at, bt = _scaled_parts(a, b, t, cm.p)
    r = at - np.sum(cm.beta * bt, axis=1)
    return r, r / np.maximum(1.0, at)


def solve_scaling(a: NDArray, b: NDArray, cm: CouplingMatrix, tol: float = 1e-10) -> tuple[NDArray, int]:
    """Positive t with t_i^2 a_i = sum_j beta_ij t_i^p t_j^p b_ij for all i.

    Damped Newton on G_i(s) = 1 - sum_j c_ij exp((p-2) s_i + p s_j),
    s = log t, started from the decoupled closed form.
    """
    p = cm.p
    ell = len(a)
    c = cm.beta * b / a[:, None]
    s = np.log(closed_form_scaling(a, b, cm))
    if not np.all(np.isfinite(s)):
        raise NotInU("closed-form start is not finite")

    def G(s):
        e = np.exp((p - 2) * s[:, None] + p * s[None, :])
        return 1.0 - np.sum(c * e, axis=1), e

    def worst(s):
        return float(np.max(np.abs(_normalized_residual(a, b, np.exp(s), cm)[1])))

    res = worst(s)
    for it in range(MAX_NEWTON + 1):
        if res <= tol:
            return np.exp(s), it
        if it == MAX_NEWTON:
            break
        g, e = G(s)
        ce = c * e
        jac = -p * ce
        jac[np.diag_indices(ell)] -= (p - 2) * np.sum(ce, axis=1)
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise NotInU("singular Newton system in the scaling projection") from exc
        lam = 1.0
        while True:
            trial = s + lam * step
            r_trial = worst(trial) if np.all(np.abs(trial) < 1e3) else np.inf
            if r_trial < res or lam < 1e-12:
                break
            lam *= 0.5
        s = trial
        res = r_trial
        t = np.exp(s)
        if not np.all((t >= T_MIN) & (t <= T_MAX)):
            raise NotInU(f"scaling left [{T_MIN}, {T_MAX}]: t={t}")
    raise NotInU(f"Newton projection did not converge in {MAX_NEWTON} iterations (residual {res:.3e})")


def project(state: SystemState, cm: CouplingMatrix, tol: float = 1e-10) -> NehariPoint:
    if state.ell != cm.ell:
        raise ValueError(f"state has {state.ell} components, coupling matrix {cm.ell}")
    l2 = np.sum(state.u * state.u, axis=(1, 2))
    if np.any(l2 == 0):
        raise ZeroComponent(f"components {np.flatnonzero(l2 == 0).tolist()} are identically zero")
    a, b = norms_and_overlaps(state, cm.p)
    t, its = solve_scaling(a, b, cm, tol)
    at, bt = _scaled_parts(a, b, t, cm.p)
    resid = at - np.sum(cm.beta * bt, axis=1)
    new = state.with_values(state.u * t[:, None, None])
    return NehariPoint(new, t, resid, energy_from_parts(at, bt, cm), its, at, bt)


def psi(state: SystemState, cm: CouplingMatrix) -> float:
    """Energy after projection; constant along positive componentwise rays."""
    return project(state, cm).energy


def nehari_energy_identity(point: NehariPoint, cm: CouplingMatrix) -> float:
    """J(u) - (1/2 - 1/(2p)) ||u||^2; vanishes on the Nehari set."""
    a = point.a
    if a is None:
        a, _ = norms_and_overlaps(point.state, cm.p)
    return point.energy - (0.5 - 0.5 / cm.p) * float(np.sum(a))
