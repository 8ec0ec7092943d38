import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikelab.checks import barycenter_checks
from spikelab.diagnostics import (
    GridMismatch, WindowError, ZeroFieldError, barycenter, barycenter_vec, canonicalize, concentration_error,
    local_mass, orbit_distance, reference_profile, separation_ratio, sign_classes, sign_classify,
)
from spikelab.fields import Field
from spikelab.geometry import DomainSpec, Grid, build_mask
from spikelab.system import SystemState, apply_sign


def gauss(mask, x0, y0, w):
    X, Y = mask.grid.coords()
    return np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2 * w * w)) * mask.inside


def test_barycenter_identities():
    devs = barycenter_checks()
    assert set(devs) == {"B1", "B2", "B3", "B4"}
    assert max(devs.values()) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), kx=st.integers(-8, 8), ky=st.integers(-8, 8))
def test_barycenter_shift_property(seed, kx, ky):
    grid = Grid((0.0, 0.0), 0.05, 60, 60, 30, 30)
    vals = np.zeros((60, 60))
    vals[20:40, 20:40] = np.random.default_rng(seed).normal(size=(20, 20))
    b0 = barycenter(vals, grid)
    b1 = barycenter(np.roll(np.roll(vals, ky, axis=0), kx, axis=1), grid)
    assert b1[0] - b0[0] == pytest.approx(kx * 0.05, abs=1e-12)
    assert b1[1] - b0[1] == pytest.approx(ky * 0.05, abs=1e-12)


def test_barycenter_errors(disk_mask):
    with pytest.raises(ZeroFieldError):
        barycenter(Field.zeros(disk_mask))
    with pytest.raises(TypeError):
        barycenter(np.ones((3, 3)))
    u = SystemState(np.stack([gauss(disk_mask, 0.2, 0, 0.1), np.zeros(disk_mask.inside.shape)]), 0.1, disk_mask)
    with pytest.raises(ZeroFieldError, match="component 1"):
        barycenter_vec(u)


def test_sign_classes(disk_mask):
    X, _ = disk_mask.grid.coords()
    g = gauss(disk_mask, 0, 0, 0.2)
    dipole = g * X
    assert sign_classify(g) == "nonnegative"
    assert sign_classify(-g) == "nonpositive"
    assert sign_classify(dipole) == "sign_changing"
    assert sign_classify(np.zeros(3)) == "zero"
    assert sign_classify(g - 1e-10 * g.max()) == "nonnegative"
    assert sign_classify(g - 1e-6 * g.max()) == "sign_changing"
    u = SystemState(np.stack([g, -g]), 0.1, disk_mask)
    assert sign_classes(u) == ["nonnegative", "nonpositive"]
    key = canonicalize(u)
    assert key.signs == (1, -1)
    assert sign_classes(key.state) == ["nonnegative", "nonnegative"]
    with pytest.raises(ValueError):
        sign_classify(g, -1.0)


def test_orbit_distance_basics(disk_mask, rng):
    a = SystemState(np.stack([gauss(disk_mask, -0.4, 0, 0.08), gauss(disk_mask, 0.4, 0, 0.08)]), 0.05, disk_mask)
    for s in ((1, 1), (-1, 1), (1, -1), (-1, -1)):
        assert orbit_distance(a, apply_sign(a, s)) == 0.0
    noisy = a.with_values(a.u * (1 + 1e-5 * rng.normal(size=a.u.shape)))
    assert orbit_distance(a, noisy) < 1e-3
    swapped = a.with_values(a.u[::-1].copy())
    assert orbit_distance(a, swapped) == pytest.approx(math.sqrt(2), abs=1e-6)
    small = build_mask(DomainSpec.disk(1.0), Grid.fit(DomainSpec.disk(1.0), 1 / 16))
    other = SystemState(np.ones((2,) + small.inside.shape), 0.05, small)
    with pytest.raises(GridMismatch):
        orbit_distance(a, other)
    with pytest.raises(GridMismatch):
        orbit_distance(a, SystemState(a.u[:1], 0.05, disk_mask))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_orbit_distance_triangle_inequality(seed):
    spec = DomainSpec.disk(1.0)
    mask = build_mask(spec, Grid.fit(spec, 1 / 12))
    r = np.random.default_rng(seed)
    a, b, c = (SystemState(r.normal(size=(2,) + mask.inside.shape), 0.2, mask) for _ in range(3))
    ab, bc, ac = orbit_distance(a, b), orbit_distance(b, c), orbit_distance(a, c)
    assert ac <= ab + bc + 1e-12
    assert orbit_distance(a, b) == pytest.approx(orbit_distance(b, a), abs=1e-15)


def test_separation_ratio(disk_mask):
    g = disk_mask.grid
    p0, p1 = g.point(g.ia - 10, g.ja), g.point(g.ia + 10, g.ja)
    u = SystemState(np.stack([gauss(disk_mask, *p0, 0.05), gauss(disk_mask, *p1, 0.05)]), 0.1, disk_mask)
    assert separation_ratio(u) == pytest.approx(20 * g.h / 0.1, rel=1e-12)
    assert separation_ratio(SystemState(u.u[:1], 0.1, disk_mask)) == math.inf


@pytest.fixture(scope="module")
def lattice_state(whole_space_512):
    # eps chosen so the state grid is the reference grid after z = x / eps
    ref = whole_space_512
    eps = 0.05
    spec = DomainSpec.disk(1.0)
    mask = build_mask(spec, Grid.fit(spec, eps * ref.profile.grid.h))
    g = mask.grid
    c0, c1 = g.point(g.ia - 180, g.ja), g.point(g.ia + 170, g.ja + 40)
    st_ref = SystemState(np.zeros((2,) + mask.inside.shape), eps, mask)
    u0 = reference_profile(st_ref, ref, 1.0, c0)
    u1 = reference_profile(st_ref, ref, 1.5, c1)
    return SystemState(np.stack([u0, u1]), eps, mask), (c0, c1)


def test_concentration_error_on_exact_profile(lattice_state, whole_space_512):
    u, centers = lattice_state
    err = concentration_error(u, whole_space_512, [1.0, 1.5])
    assert np.all(err < 1e-3)
    assert np.allclose(barycenter_vec(u), centers, atol=1e-9)
    flipped = concentration_error(apply_sign(u, (-1, 1)), whole_space_512, [1.0, 1.5])
    assert np.array_equal(err, flipped)
    wrong = concentration_error(u, whole_space_512, [1.5, 1.0])
    assert np.all(wrong > 0.1)
    lm = local_mass(u, [1.0, 1.5], 2.0)
    # beta |u|^{2p} scales like 1/beta under the beta law
    assert np.all(lm > 0) and lm[0] == pytest.approx(1.5 * lm[1], rel=1e-9)


def test_concentration_window_error(disk_mask, whole_space_512):
    wide = SystemState(np.stack([gauss(disk_mask, 0, 0, 0.3)] * 2), 0.01, disk_mask)
    with pytest.raises(WindowError):
        concentration_error(wide, whole_space_512, [1.0, 1.5])
