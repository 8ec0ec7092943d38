import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spikelab.fields import (
    Field, ParameterError, abs_pow, dirichlet_energy, eps_norm_sq, gradient_pairing, integrate, laplacian,
    mixed_integral, odd_pow, pgm_bytes, read_field, write_field, write_pgm,
)
from spikelab.geometry import DomainSpec, Grid, build_mask


@pytest.fixture(scope="module")
def square():
    spec = DomainSpec.rectangle(2.0, 2.0)
    return build_mask(spec, Grid.fit(spec, 1 / 16))


def test_area_of_unit_disk():
    spec = DomainSpec.disk(1.0)
    mask = build_mask(spec, Grid.fit(spec, 1 / 256))
    one = Field(np.ones(mask.inside.shape), mask)
    assert abs(integrate(one) / math.pi - 1) < 2e-2
    assert integrate(Field.zeros(mask)) == 0.0
    x = Field.from_function(mask, lambda X, Y: X)
    assert abs(integrate(x)) <= 1e-12 * math.sqrt(integrate(Field(x.values ** 2, mask)))


def test_outside_values_forced_to_zero_and_finite(square):
    f = Field(np.ones(square.inside.shape), square)
    assert np.all(f.values[~square.inside] == 0)
    bad = np.ones(square.inside.shape)
    bad[square.grid.ja, square.grid.ia] = np.nan
    with pytest.raises(ValueError):
        Field(bad, square)


def test_laplacian_stencil_examples(square):
    g = square.grid
    X, Y = g.coords()
    deep = square.bdist > 3 * g.h
    c = laplacian(Field(np.full(X.shape, 2.5), square))
    assert np.all(c.values[deep] == 0)
    q = laplacian(Field(X ** 2 + Y ** 2, square))
    assert np.allclose(q.values[deep], 4.0, rtol=0, atol=1e-10)
    d = np.zeros(X.shape)
    d[g.ja, g.ia] = 1.0
    L = laplacian(Field(d, square)).values
    h2 = g.h ** 2
    assert L[g.ja, g.ia] == pytest.approx(-4 / h2)
    for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        assert L[g.ja + dj, g.ia + di] == pytest.approx(1 / h2)
    assert np.all(L[~square.inside] == 0)


def test_eps_norm_single_node(square):
    g = square.grid
    a, eps = 1.7, 0.3
    d = np.zeros(square.inside.shape)
    d[g.ja, g.ia] = a
    got = eps_norm_sq(Field(d, square), eps)
    want = (4 * eps ** 2 * a ** 2 + a ** 2 * g.h ** 2) / eps ** 2
    assert got == pytest.approx(want, rel=1e-15)
    assert eps_norm_sq(Field.zeros(square), eps) == 0.0


def test_eps_norm_homogeneity_and_errors(square, rng):
    f = Field(rng.normal(size=square.inside.shape), square)
    assert eps_norm_sq(f * 3.0, 0.4) == pytest.approx(9 * eps_norm_sq(f, 0.4), rel=1e-14)
    with pytest.raises(ParameterError):
        eps_norm_sq(f, 0.0)
    with pytest.raises(ParameterError):
        mixed_integral(f, f, 2.0, -1.0)


def test_mixed_integral_examples(square):
    X, Y = square.grid.coords()
    f = Field(np.where(X < -0.2, 1.0, 0.0), square)
    g = Field(np.where(X > 0.2, 2.0, 0.0), square)
    assert mixed_integral(f, g, 1.5, 0.3) == 0.0
    assert mixed_integral(g, g, 2.0, 0.5) == pytest.approx(integrate(Field(g.values ** 4, square)) / 0.25)
    spec = DomainSpec.disk(1.0)
    m = build_mask(spec, Grid.fit(spec, 1 / 128))
    one = Field(np.ones(m.inside.shape), m)
    assert mixed_integral(one, one, 2.0, 1.0) == pytest.approx(integrate(one), rel=1e-15)
    assert abs(mixed_integral(one, one, 2.0, 1.0) / math.pi - 1) < 2e-2


def _masked(mask, vals):
    v = np.array(vals)
    v[~mask.inside] = 0
    return v


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_summation_by_parts(seed):
    spec = DomainSpec.ellipse(1.0, 0.6)
    mask = build_mask(spec, Grid.fit(spec, 1 / 20))
    r = np.random.default_rng(seed)
    f = Field(r.normal(size=mask.inside.shape), mask)
    g = Field(r.normal(size=mask.inside.shape), mask)
    h = mask.grid.h
    lhs = gradient_pairing(f, g)
    rhs = -h * h * float(np.sum(f.values * laplacian(g).values))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10 * abs(dirichlet_energy(f)))
    assert gradient_pairing(f, f) == pytest.approx(dirichlet_energy(f), rel=1e-14)


@settings(max_examples=30, deadline=None)
# values whose square underflows would make a nonzero field have zero norm
@given(vals=arrays(np.float64, (14, 14), elements=st.floats(-5, 5).map(lambda x: x if abs(x) > 1e-100 else 0.0)),
       eps=st.floats(0.05, 3))
def test_norm_nonnegative_and_zero_only_at_zero(vals, eps):
    spec = DomainSpec.rectangle(1.0, 1.0)
    mask = build_mask(spec, Grid((0.0, 0.0), 0.1, 14, 14, 7, 7))
    f = Field(vals, mask)
    n = eps_norm_sq(f, eps)
    assert n >= 0
    assert (n == 0) == (not np.any(f.values))


def test_grid_scaling_identity(rng):
    spec = DomainSpec.disk(1.0)
    grid = Grid.fit(spec, 1 / 40)
    mask = build_mask(spec, grid)
    eps = 0.23
    mask2 = build_mask(spec.scaled(eps), grid.rescaled(eps))
    assert np.array_equal(mask.inside, mask2.inside)
    vals = _masked(mask, rng.normal(size=mask.inside.shape))
    u, w = Field(vals, mask), Field(vals, mask2)
    assert eps_norm_sq(u, eps) == pytest.approx(eps_norm_sq(w, 1.0), rel=1e-15)
    assert mixed_integral(u, u, 2.0, eps) == pytest.approx(mixed_integral(w, w, 2.0, 1.0), rel=1e-15)


def test_powers_at_zero():
    z = np.array([0.0, -2.0, 3.0])
    assert np.array_equal(abs_pow(z, 1.5), [0.0, 2 ** 1.5, 3 ** 1.5])
    assert np.array_equal(odd_pow(z, 0.5), [0.0, -math.sqrt(2), math.sqrt(3)])
    assert np.all(np.isfinite(odd_pow(z, -0.0 + 0.25)))


def test_binary_roundtrip_and_pgm(tmp_path, square, rng):
    vals = _masked(square, rng.normal(size=square.inside.shape))
    p = tmp_path / "f.field"
    write_field(p, vals, square.grid)
    back, g = read_field(p)
    assert np.array_equal(back, vals)
    assert g.h == square.grid.h and g.origin == square.grid.origin and g.shape == square.grid.shape
    img = pgm_bytes(np.abs(vals), 0.0, 3.0)
    header = b"P5\n%d %d\n255\n" % (square.grid.nx, square.grid.ny)
    assert img.startswith(header) and len(img) == len(header) + vals.size
    write_pgm(tmp_path / "f.pgm", np.abs(vals))
    assert (tmp_path / "f.pgm").read_bytes()[:2] == b"P5"
    (tmp_path / "junk").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        read_field(tmp_path / "junk")
