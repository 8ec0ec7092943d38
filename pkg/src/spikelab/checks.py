"""Property suites run by ``spikelab verify`` (and reused by the tests).

Each suite returns a :class:`SuiteResult`; none of them needs more than a
few seconds at the default sizes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import system
from .diagnostics import barycenter, canonicalize
from .fields import Field, eps_norm_sq, mixed_integral
from .geometry import DomainSpec, Grid, build_mask
from .nehari import nehari_energy_identity, project
from .seeding import in_E_batch, in_F_batch
from .system import CouplingError, SystemState, apply_sign, energy, energy_difference, partial_gradient


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _bumps(mask, rng, n=3, width=(0.15, 0.35), floor=0.0, signs=False):
    X, Y = mask.grid.coords()
    hx, hy = mask.spec.half_extent
    cx, cy = mask.spec.center
    out = np.full(X.shape, floor)
    for _ in range(n):
        x0 = cx + rng.uniform(-0.5, 0.5) * hx
        y0 = cy + rng.uniform(-0.5, 0.5) * hy
        w = rng.uniform(*width)
        amp = rng.uniform(0.5, 1.5) * (rng.choice([-1, 1]) if signs else 1)
        out += amp * np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2 * w * w))
    return out


def small_disk(n: int = 24):
    spec = DomainSpec.disk(1.0)
    return build_mask(spec, Grid.fit(spec, 1.0 / n))


def gradient_check(n_states: int = 50, seed: int = 0, mask=None, t: float = 1e-5) -> tuple[float, list[float]]:
    """Max relative error of partial_gradient against central differences.

    States are positive (floored away from zero) so that |u|^{p-2}u stays
    smooth; the derivative is taken along a random smooth direction.
    """
    rng = np.random.default_rng(seed)
    mask = mask or small_disk()
    errs = []
    for k in range(n_states):
        p = (1.5, 2.0)[k % 2]
        cm = system.CouplingMatrix(np.array([[1.0, -0.7], [-0.7, 1.5]]), p)
        eps = rng.uniform(0.2, 0.6)
        u = SystemState(np.stack([_bumps(mask, rng, floor=0.2) for _ in range(2)]), eps, mask)
        i = k % 2
        v = np.zeros_like(u.u)
        v[i] = _bumps(mask, rng, signs=True)
        v[:, ~mask.inside] = 0.0
        up, um = u.with_values(u.u + t * v), u.with_values(u.u - t * v)
        fd = energy_difference(up, um, cm) / (2 * t)
        an = float(np.vdot(partial_gradient(u, cm, i).values, v[i]))
        errs.append(abs(fd - an) / abs(an))
    return max(errs), errs


def suite_gradient() -> SuiteResult:
    worst, errs = gradient_check(20)
    return SuiteResult("gradient", worst < 1e-6, f"max relative FD error {worst:.2e} over {len(errs)} states")


def suite_coupling() -> SuiteResult:
    bad = {
        "positive off-diagonal": ([[1.0, 0.5], [0.5, 1.0]], 2.0),
        "zero off-diagonal": ([[1.0, 0.0], [0.0, 1.0]], 2.0),
        "asymmetric": ([[1.0, -1.0], [-0.5, 1.0]], 2.0),
        "nonpositive diagonal": ([[0.0, -1.0], [-1.0, 1.0]], 2.0),
        "p <= 1": ([[1.0, -1.0], [-1.0, 1.0]], 1.0),
    }
    missed = []
    for name, (b, p) in bad.items():
        try:
            system.CouplingMatrix(np.array(b), p)
        except CouplingError:
            continue
        missed.append(name)
    try:
        system.CouplingMatrix.default()
        ok_default = True
    except CouplingError:
        ok_default = False
    ok = not missed and ok_default
    detail = "all invalid matrices rejected" if not missed else f"accepted invalid: {', '.join(missed)}"
    return SuiteResult("coupling", ok, detail)


def nehari_identity_check(n_states: int = 20, seed: int = 1, mask=None) -> float:
    """Max |J - (1/2 - 1/2p) sum a| / |J| over projected random states."""
    rng = np.random.default_rng(seed)
    mask = mask or small_disk()
    worst = 0.0
    for k in range(n_states):
        p = (1.5, 2.0, 3.0)[k % 3]
        cm = system.CouplingMatrix(np.array([[1.0, -1.0], [-1.0, 1.5]]), p)
        u = SystemState(np.stack([_bumps(mask, rng, n=1, width=(0.1, 0.2)) for _ in range(2)]), 0.3, mask)
        pt = project(u, cm)
        worst = max(worst, abs(nehari_energy_identity(pt, cm)) / abs(pt.energy))
    return worst


def suite_nehari() -> SuiteResult:
    worst = nehari_identity_check()
    return SuiteResult("nehari identity", worst <= 1e-9, f"max relative defect {worst:.2e}")


def closed_form_check(mask=None, p: float = 2.0, eps: float = 0.3):
    """Disjoint bumps: projection against t_i from the scalar integrals."""
    mask = mask or small_disk()
    X, Y = mask.grid.coords()
    cm = system.CouplingMatrix(np.array([[1.0, -1.0], [-1.0, 1.5]]), p)
    u = np.stack([np.where((X + 0.5) ** 2 + Y ** 2 < 0.16, 0.3 * np.cos(np.hypot(X + 0.5, Y) * np.pi / 0.8), 0),
                  np.where((X - 0.5) ** 2 + Y ** 2 < 0.16, 2.0 * np.cos(np.hypot(X - 0.5, Y) * np.pi / 0.8), 0)])
    s = SystemState(u, eps, mask)
    pt = project(s, cm)
    want = np.array([
        (eps_norm_sq(Field(c, mask), eps) / (cm.beta[i, i] * mixed_integral(Field(c, mask), Field(c, mask), p, eps)))
        ** (1 / (2 * p - 2)) for i, c in enumerate(u)])
    return float(np.max(np.abs(pt.t / want - 1))), pt.iterations


def suite_closed_form() -> SuiteResult:
    worst, its = 0.0, 0
    for p in (1.5, 2.0, 3.0):
        e, i = closed_form_check(p=p)
        worst, its = max(worst, e), max(its, i)
    return SuiteResult("closed-form projection", worst <= 1e-10 and its <= 2,
                       f"max relative deviation {worst:.2e}, Newton iterations {its}")


def barycenter_checks() -> dict[str, float]:
    """Deviations in the four barycenter identities on constructed fields."""
    spec = DomainSpec.rectangle(2.0, 2.0, center=(0.3, -0.2))
    grid = Grid.fit(spec, 1 / 32)
    X, Y = grid.coords()
    xi = grid.point(grid.ia + 5, grid.ja - 3)
    R2 = (X - xi[0]) ** 2 + (Y - xi[1]) ** 2
    radial = np.exp(-R2 / 0.02) * (R2 < 0.16)
    rng = np.random.default_rng(7)
    lumpy = np.zeros_like(X)
    inner = (np.abs(X - 0.3) < 0.5) & (np.abs(Y + 0.2) < 0.5)
    lumpy[inner] = rng.normal(size=inner.sum())
    out = {}
    out["B1"] = max(abs(a - b) for a, b in zip(barycenter(lumpy, grid), barycenter(-lumpy, grid)))
    b0 = barycenter(lumpy, grid)
    dev = 0.0
    for kx, ky in ((3, 0), (0, -4), (5, 7), (-6, 2)):
        shifted = np.roll(np.roll(lumpy, ky, axis=0), kx, axis=1)
        b1 = barycenter(shifted, grid)
        dev = max(dev, abs(b1[0] - b0[0] - kx * grid.h), abs(b1[1] - b0[1] - ky * grid.h))
    out["B2"] = dev
    out["B3"] = max(abs(a - b) for a, b in zip(barycenter(radial, grid), xi))
    dev = 0.0
    for c in (2.0, 0.05, 3.7):
        bc = barycenter(lumpy, grid.rescaled(c))
        dev = max(dev, abs(bc[0] - b0[0] / c), abs(bc[1] - b0[1] / c))
    out["B4"] = dev
    return out


def suite_barycenter() -> SuiteResult:
    devs = barycenter_checks()
    worst = max(devs.values())
    return SuiteResult("barycenter B1-B4", worst <= 1e-12,
                       ", ".join(f"{k} {v:.1e}" for k, v in devs.items()))


def suite_z_invariance() -> SuiteResult:
    from .solver import SolveConfig, descend

    mask = small_disk()
    rng = np.random.default_rng(3)
    cm = system.CouplingMatrix.default()
    u = SystemState(np.stack([_bumps(mask, rng, n=1, width=(0.1, 0.2)) for _ in range(2)]), 0.3, mask)
    problems = []
    for s in ((-1, 1), (1, -1), (-1, -1)):
        su = apply_sign(u, s)
        if energy(su, cm) != energy(u, cm):
            problems.append(f"energy differs for s={s}")
        if not np.array_equal(canonicalize(su).state.u, canonicalize(u).state.u):
            problems.append(f"canonical forms differ for s={s}")
    cfg = SolveConfig(max_iter=15)
    a = descend(u, cm, cfg)
    b = descend(apply_sign(u, (-1, 1)), cm, cfg)
    dev = float(np.max(np.abs(apply_sign(b.state, (-1, 1)).u - a.state.u)))
    if dev > 1e-12:
        problems.append(f"descent not equivariant ({dev:.1e})")
    return SuiteResult("Z-invariance", not problems, "; ".join(problems) or f"equivariance deviation {dev:.1e}")


def suite_scaling() -> SuiteResult:
    from .groundstate import solve_scalar

    spec = DomainSpec.rectangle(16.0, 16.0)
    grid = Grid.fit(spec, 16 / 128, pad=1)
    mask = build_mask(spec, grid)
    p = 2.0
    e1 = solve_scalar(spec, grid, 1.0, p, 1.0, mask=mask).energy
    worst = 0.0
    for beta in (0.5, 2.0):
        eb = solve_scalar(spec, grid, beta, p, 1.0, mask=mask).energy
        worst = max(worst, abs(eb / (e1 * beta ** (-1 / (p - 1))) - 1))
    # eps-norm is invariant under the node-value-preserving rescale x -> x / eps
    eps = 0.37
    f = _bumps(mask, np.random.default_rng(4))
    f[~mask.inside] = 0
    n1 = eps_norm_sq(f, eps, grid.h)
    n2 = eps_norm_sq(f, 1.0, grid.h / eps)
    dn = abs(n1 / n2 - 1)
    ok = worst <= 1e-6 and dn <= 1e-12
    return SuiteResult("scaling identities", ok, f"beta law deviation {worst:.1e}, rescale deviation {dn:.1e}")


def predicate_checks(n: int = 10 ** 4, seed: int = 5) -> dict[str, int]:
    """Counts of violations of F_{l,2^l r} in E_{l,r} and E_{l,0} = F_l."""
    rng = np.random.default_rng(seed)
    out = {"containment": 0, "E0=F0": 0, "F containment hits": 0}
    for spec in (DomainSpec.disk(1.0), DomainSpec.rectangle(1.0, 1.0, (0.5, 0.5)), DomainSpec.ellipse(1.5, 0.8)):
        hx, hy = spec.half_extent
        for ell in (2, 3):
            pts = np.empty((n, ell, 2))
            pts[..., 0] = spec.center[0] + rng.uniform(-hx, hx, (n, ell))
            pts[..., 1] = spec.center[1] + rng.uniform(-hy, hy, (n, ell))
            for r in (0.01, 0.03, 0.05):
                f = in_F_batch(pts, 2 ** ell * r, spec)
                e = in_E_batch(pts, r, spec)
                out["containment"] += int(np.sum(f & ~e))
                out["F containment hits"] += int(np.sum(f))
            out["E0=F0"] += int(np.sum(in_F_batch(pts, 0.0, spec) != in_E_batch(pts, 0.0, spec)))
    return out


def suite_predicates() -> SuiteResult:
    c = predicate_checks()
    ok = c["containment"] == 0 and c["E0=F0"] == 0 and c["F containment hits"] > 0
    return SuiteResult("configuration predicates", ok,
                       f"{c['containment']} containment and {c['E0=F0']} E0/F0 violations; "
                       f"{c['F containment hits']} tuples in the small F")


SUITES = {
    "coupling": suite_coupling,
    "gradient": suite_gradient,
    "nehari": suite_nehari,
    "closed_form": suite_closed_form,
    "barycenter": suite_barycenter,
    "z_invariance": suite_z_invariance,
    "scaling": suite_scaling,
    "predicates": suite_predicates,
}


def run_suites(names=None) -> list[SuiteResult]:
    out = []
    for name in names or SUITES:
        t = time.perf_counter()
        try:
            res = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(name, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t
        out.append(res)
    return out
