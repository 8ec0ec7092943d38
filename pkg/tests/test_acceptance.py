"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` or as a script.  Lines
are also collected into the "acceptance criteria" section of the pytest
terminal summary.
"""

import itertools
import sys
import time

import numpy as np
import pytest

from spikelab import checks
from spikelab.cli import main as cli_main
from spikelab.diagnostics import barycenter_vec, orbit_distance, sign_classes
from spikelab.geometry import DomainSpec, Grid, build_mask, in_dilation
from spikelab.groundstate import ball, radial_shooting_oracle, solve_scalar, whole_space
from spikelab.seeding import feasible_radius, i_eps, sample_F
from spikelab.solver import continuation, limit_energies, matched_reference, multistart
from spikelab.system import CouplingMatrix, energy

DISK = DomainSpec.disk(1.0)


def report(record_property, n, ok, detail):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print("\n" + line)
    record_property("acceptance", line)
    assert ok, line


@pytest.fixture(scope="module")
def fine_ref():
    return whole_space(1.0, 2.0)


@pytest.fixture(scope="module")
def cm():
    return CouplingMatrix.default()


@pytest.fixture(scope="module")
def multistart_runs(cm):
    """Criterion 8 runs, shared with criteria 9 and 10."""
    out = {}
    ref = matched_reference(2.0)
    for ell, eps in ((2, 0.05), (3, 0.04)):
        c = cm if ell == 2 else CouplingMatrix.uniform(3)
        grid = Grid.fit(DISK, eps / 8)
        r = feasible_radius(DISK, ell, 0, grid=grid)
        t0 = time.perf_counter()
        sol = multistart(DISK, grid, c, eps, r, 20, rng_seed=0, reference=ref)
        out[ell] = dict(sol=sol, cm=c, eps=eps, r=r, grid=grid, seconds=time.perf_counter() - t0,
                        cinf=limit_energies(c, ref).sum())
    return out


def test_c01_gradient(record_property):
    t0 = time.perf_counter()
    worst, errs = checks.gradient_check(50, seed=0, t=1e-5)
    dt = time.perf_counter() - t0
    report(record_property, 1, worst < 1e-6 and len(errs) == 50 and dt < 30,
           f"max relative FD error {worst:.2e} over {len(errs)} states, p in (1.5, 2), step 1e-5, {dt:.2f}s")


def test_c02_nehari_identity(record_property):
    worst = checks.nehari_identity_check(50, seed=2)
    report(record_property, 2, worst <= 1e-9, f"max |J - (1/2 - 1/2p) sum a| / |J| = {worst:.2e} over 50 states")


def test_c03_closed_form(record_property):
    worst, its = 0.0, 0
    for p in (1.5, 2.0, 3.0):
        for eps in (0.2, 0.3, 0.5):
            d, i = checks.closed_form_check(p=p, eps=eps)
            worst, its = max(worst, d), max(its, i)
    report(record_property, 3, worst <= 1e-10 and its <= 2,
           f"max relative deviation from closed form {worst:.2e}, Newton iterations <= {its}")


def test_c04_oracle(record_property):
    t0 = time.perf_counter()
    gs = whole_space(1.0, 2.0, L=24.0, n=512)
    orc = radial_shooting_oracle(1.0, 2.0)
    dt = time.perf_counter() - t0
    de = gs.energy / orc.energy - 1
    dm = gs.mass / orc.mass - 1
    ok = abs(de) < 1e-2 and abs(dm) < 1e-2 and abs(orc.mass - 11.7009) < 1e-3 and dt < 120
    report(record_property, 4, ok,
           f"grid E={gs.energy:.6f} mass={gs.mass:.5f}; oracle E={orc.energy:.6f} mass={orc.mass:.5f} "
           f"(rel {de:+.1e}, {dm:+.1e}), {dt:.1f}s")


def test_c05_beta_law(record_property):
    spec = DomainSpec.rectangle(24.0, 24.0)
    grid = Grid.fit(spec, 24 / 512, pad=1)
    mask = build_mask(spec, grid)
    base = solve_scalar(spec, grid, 1.0, 2.0, 1.0, mask=mask)
    devs = {}
    for beta in (0.5, 1.5, 2.0):
        gs = solve_scalar(spec, grid, beta, 2.0, 1.0, mask=mask)
        devs[beta] = abs(gs.energy / (beta ** (-1.0) * base.energy) - 1)
    worst = max(devs.values())
    report(record_property, 5, worst <= 1e-6,
           "relative deviation " + ", ".join(f"beta={b:g}: {d:.1e}" for b, d in devs.items()))


def test_c06_ball_limit(record_property, fine_ref, cm):
    t0 = time.perf_counter()
    r = 1.0
    lines, ok = [], True
    for i in range(2):
        b = cm.beta[i, i]
        cinf = fine_ref.energy * (fine_ref.beta / b)
        gaps = []
        for f in (0.2, 0.1, 0.05):
            eps = f * r
            gs = ball(r, b, 2.0, eps, eps * 24 / 512)
            gaps.append((gs.energy - cinf) / cinf)
        mags = [abs(g) for g in gaps]
        ok &= all(b2 < a for a, b2 in zip(mags, mags[1:])) and mags[-1] < 0.02
        lines.append(f"beta_{i + 1}{i + 1}={b:g}: " + " -> ".join(f"{g:+.1e}" for g in gaps))
    dt = time.perf_counter() - t0
    report(record_property, 6, ok and dt < 300, "relative gap " + "; ".join(lines) + f", {dt:.0f}s")


def test_c07_seed_additivity(record_property, cm):
    eps, r = 0.05, 0.4
    grid = Grid.fit(DISK, eps / 8)
    mask = build_mask(DISK, grid)
    gss = [ball(r, cm.beta[i, i], 2.0, eps, grid.h) for i in range(2)]
    target = sum(g.energy for g in gss)
    cfgs = sample_F(DISK, 2, r, 20, rng_seed=7, grid=grid)
    worst = max(abs(energy(i_eps(c, gss, mask, eps), cm) / target - 1) for c in cfgs)
    report(record_property, 7, worst <= 1e-9 and len(cfgs) == 20,
           f"max |J(i_eps) / sum c_eps,r - 1| = {worst:.1e} over {len(cfgs)} configurations")


def test_c08_multiplicity(record_property, multistart_runs):
    parts, ok, total = [], True, 0.0
    for ell, run in multistart_runs.items():
        sol = run["sol"]
        n = len(sol)
        signs_ok = all(set(sign_classes(o.report.state)) == {"nonnegative"} for o in sol.orbits)
        dmin = min((orbit_distance(a.report.state, b.report.state)
                    for a, b in itertools.combinations(sol.orbits, 2)), default=float("inf"))
        e = sol.energies
        ok &= n >= ell and signs_ok and dmin >= 1e-3
        total += run["seconds"]
        parts.append(f"ell={ell} eps={run['eps']:g}: {n} orbits from {sol.converged}/20 converged, "
                     f"nonnegative={signs_ok}, min pair distance {dmin:.2e}, "
                     f"energy spread {max(e) - min(e):.1e}")
    report(record_property, 8, ok and total < 1800, "; ".join(parts) + f", {total:.0f}s")


def test_c09_sign_purity(record_property, multistart_runs):
    checked, bad = 0, 0
    for run in multistart_runs.values():
        for rep in run["sol"].reports:
            if rep is None or not rep.converged or rep.energy > 1.1 * run["cinf"]:
                continue
            checked += 1
            if "sign_changing" in sign_classes(rep.state, 1e-8):
                bad += 1
    report(record_property, 9, checked > 0 and bad == 0,
           f"{checked} low-energy solutions checked, {bad} sign-changing (delta_rel 1e-8)")


def test_c10_barycenters_in_configuration_space(record_property, multistart_runs):
    checked, bad, worst = 0, 0, float("inf")
    for run in multistart_runs.values():
        h, r = run["grid"].h, run["r"]
        for o in run["sol"].orbits:
            b = barycenter_vec(o.report.state)
            sep = min(np.hypot(*(b[i] - b[j])) for i, j in itertools.combinations(range(len(b)), 2))
            worst = min(worst, sep / h)
            checked += 1
            if not (sep > 4 * h and all(in_dilation(DISK, p, r) for p in b)):
                bad += 1
    report(record_property, 10, checked > 0 and bad == 0,
           f"{checked} solutions, {bad} outside F_l(Omega_r+); min separation {worst:.1f} h")


def test_c11_concentration_trends(record_property, cm):
    ref = matched_reference(2.0)
    t0 = time.perf_counter()
    stages = continuation(DISK, cm, [0.2, 0.1, 0.05], 0.4, reference=ref)
    dt = time.perf_counter() - t0
    sep = [s.report.separation for s in stages]
    conc = np.array([s.report.concentration for s in stages])
    gaps = [s.gap for s in stages]
    ok = (all(b >= a for a, b in zip(sep, sep[1:]))
          and np.all(np.diff(conc, axis=0) < 0) and np.all(conc[-1] < 0.05)
          and all(b < a for a, b in zip(gaps, gaps[1:])) and dt < 1200)
    report(record_property, 11, ok,
           "separation/eps " + " -> ".join(f"{s:.2f}" for s in sep)
           + "; concentration " + " -> ".join("/".join(f"{c:.1e}" for c in row) for row in conc)
           + "; gap " + " -> ".join(f"{g:.1e}" for g in gaps) + f", {dt:.0f}s")


def test_c12_barycenter_properties(record_property):
    devs = checks.barycenter_checks()
    report(record_property, 12, max(devs.values()) <= 1e-12,
           ", ".join(f"{k} {v:.1e}" for k, v in devs.items()))


def test_c13_predicates(record_property):
    c = checks.predicate_checks(10 ** 4)
    ok = c["containment"] == 0 and c["E0=F0"] == 0 and c["F containment hits"] > 0
    report(record_property, 13, ok,
           f"{c['containment']} containment violations ({c['F containment hits']} tuples in the small F), "
           f"{c['E0=F0']} E0/F0 disagreements, 10^4 tuples per domain and ell")


def test_c14_determinism(record_property, tmp_path):
    first = tmp_path / "first"
    assert cli_main(["solve", "--eps", "0.2", "--seeds", "4", "--rng-seed", "11", "--out", str(first)]) == 0
    runs = []
    for k in range(2):
        out = tmp_path / f"rerun{k}"
        assert cli_main(["solve", "--config", str(first / "manifest.json"), "--out", str(out)]) == 0
        runs.append((out / "summary.csv").read_bytes())
    same = runs[0] == runs[1] == (first / "summary.csv").read_bytes()
    report(record_property, 14, same, f"summary.csv byte-identical across runs: {same} ({len(runs[0])} bytes)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
