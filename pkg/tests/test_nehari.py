import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from spikelab.checks import closed_form_check, nehari_identity_check
from spikelab.geometry import DomainSpec, Grid, build_mask
from spikelab.nehari import NehariPoint, NotInU, ZeroComponent, closed_form_scaling, nehari_energy_identity, project, psi
from spikelab.system import CouplingMatrix, SystemState, apply_sign, constraint_values, energy, norms_and_overlaps


@pytest.fixture(scope="module")
def mask():
    spec = DomainSpec.disk(1.0)
    return build_mask(spec, Grid.fit(spec, 1 / 16))


def overlapping(mask, seed=0):
    X, Y = mask.grid.coords()
    r = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        x0, y0 = r.uniform(-0.3, 0.3, 2)
        out.append(r.uniform(0.5, 2) * np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / 0.08))
    return np.stack(out)


def test_projection_lands_on_manifold_and_is_idempotent(mask, default_cm):
    u = SystemState(overlapping(mask), 0.3, mask)
    pt = project(u, default_cm)
    a = pt.a
    assert np.all(np.abs(pt.residual) <= 1e-10 * np.maximum(1.0, a))
    assert np.all(np.abs(constraint_values(pt.state, default_cm)) <= 1e-9 * np.maximum(1.0, a))
    again = project(pt.state, default_cm)
    assert np.all(np.abs(again.t - 1) < 1e-8)


def test_equivariance_and_ray_invariance(mask, default_cm):
    u = SystemState(overlapping(mask, 3), 0.25, mask)
    pt = project(u, default_cm)
    flipped = project(apply_sign(u, (-1, 1)), default_cm)
    assert np.array_equal(flipped.t, pt.t)
    assert np.array_equal(flipped.state.u, apply_sign(pt.state, (-1, 1)).u)
    scaled = u.with_values(u.u * np.array([3.7, 0.21])[:, None, None])
    assert psi(scaled, default_cm) == pytest.approx(pt.energy, rel=1e-10)
    assert psi(apply_sign(u, (-1, -1)), default_cm) == pt.energy


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_disjoint_supports_match_closed_form(p):
    dev, its = closed_form_check(p=p)
    assert dev <= 1e-10
    assert its <= 2


def test_energy_identity_on_and_off_manifold(mask, default_cm):
    assert nehari_identity_check(12, seed=4) <= 1e-9
    u = SystemState(overlapping(mask, 7), 0.3, mask)
    pt = project(u, default_cm)
    assert abs(nehari_energy_identity(pt, default_cm)) <= 1e-9 * abs(pt.energy)
    # negative control: an unprojected state violates the identity
    raw = NehariPoint(u, np.ones(2), np.zeros(2), energy(u, default_cm))
    assert abs(nehari_energy_identity(raw, default_cm)) > 1e-3 * abs(raw.energy)


def test_zero_component_and_not_in_u(mask, default_cm):
    u = overlapping(mask)
    u[1] = 0
    with pytest.raises(ZeroComponent):
        project(SystemState(u, 0.3, mask), default_cm)
    bad = CouplingMatrix(np.array([[1.0, -2.0], [-2.0, 1.5]]), 2.0)
    same = overlapping(mask)[:1].repeat(2, axis=0)
    with pytest.raises(NotInU):
        project(SystemState(same, 0.3, mask), bad)
    with pytest.raises(ValueError):
        project(SystemState(same, 0.3, mask), CouplingMatrix.uniform(3))


def test_matches_brute_force_maximization(mask, default_cm):
    # the projected energy is the max of J(t1 u1, t2 u2) over t > 0
    for seed in range(3):
        u = SystemState(overlapping(mask, seed), 0.3, mask)
        a, b = norms_and_overlaps(u, default_cm.p)
        p, beta = default_cm.p, default_cm.beta

        def neg(t):
            t = np.abs(np.asarray(t))
            tp = t ** p
            return -(0.5 * np.sum(a * t * t) - np.sum(beta * b * np.outer(tp, tp)) / (2 * p))

        t0 = closed_form_scaling(a, b, default_cm)
        ranges = [(0.2 * t0[i], 3.0 * t0[i]) for i in range(2)]
        best = optimize.brute(neg, ranges, Ns=200, finish=None)
        best = optimize.minimize(neg, best, method="Nelder-Mead",
                                 options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000}).x
        pt = project(u, default_cm)
        assert -neg(best) == pytest.approx(pt.energy, rel=1e-6)
        assert np.allclose(np.abs(best), pt.t, rtol=1e-4)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c1=st.floats(0.1, 10), c2=st.floats(0.1, 10))
def test_psi_ray_invariance_property(seed, c1, c2):
    spec = DomainSpec.disk(1.0)
    m = build_mask(spec, Grid.fit(spec, 1 / 12))
    cm = CouplingMatrix.default()
    u = SystemState(overlapping(m, seed), 0.3, m)
    v = u.with_values(u.u * np.array([c1, -c2])[:, None, None])
    assert psi(v, cm) == pytest.approx(psi(u, cm), rel=1e-9)
