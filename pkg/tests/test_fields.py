import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from snse2d.errors import HypothesisError, ParameterError
from snse2d.fields import (ForcingSpec, Grid, SpectralField, advection_h, convect_h, project_h, divergence_residual,
                           grad_norm, grad_sq_h, inner, leray_project, nonlinear_term, normalized,
                           random_divfree_field, reality_residual, single_mode_field,
                           sobolev_norm, stokes_apply, taylor_green, to_spec, trilinear_b)

TWO_PI = 2 * np.pi


def _mode_field(grid, k, vec):
    """Full-layout field with coefficient vec at k and its conjugate at -k."""
    c = np.zeros((2, grid.n, grid.n), dtype=complex)
    kx, ky = k
    c[:, kx % grid.n, ky % grid.n] = vec
    c[:, -kx % grid.n, -ky % grid.n] = np.conj(vec)
    return SpectralField(grid, c)


def test_grid_validation():
    for bad in (7, 6, 0, 9):
        with pytest.raises(ParameterError):
            Grid(bad)
    with pytest.raises(ParameterError):
        Grid(16, -1.0)
    with pytest.raises(ParameterError):
        Grid(16, 1.0, 0.0)


def test_grid_mask_symmetric():
    g = Grid(32)
    # every column is symmetric in kx; ky < 0 lives in the conjugate half
    flip = (-np.arange(g.n)) % g.n
    assert np.array_equal(g.mask[flip, 1:], g.mask[:, 1:])
    assert g.cutoff == 10


def test_leray_examples():
    g = Grid(16, TWO_PI)
    a = leray_project(_mode_field(g, (1, 0), np.array([1.0, 0.0])))
    assert np.abs(a.coeffs).max() == 0.0
    b = leray_project(_mode_field(g, (0, 1), np.array([1.0, 0.0])))
    assert np.allclose(b.coeffs, _mode_field(g, (0, 1), np.array([1.0, 0.0])).coeffs)


def test_leray_kills_gradients():
    g = Grid(32)
    x, y = g.xy
    phi = np.sin(g.k0 * x) * np.cos(2 * g.k0 * y) + np.cos(3 * g.k0 * (x + y))
    ph = np.fft.fft2(phi, norm="forward")
    k = np.fft.fftfreq(g.n, 1 / g.n) * g.k0
    c = np.stack([1j * k[:, None] * ph, 1j * k[None, :] * ph])
    out = leray_project(SpectralField(g, c))
    assert np.abs(out.coeffs).max() < 1e-14 * np.abs(c).max()


def test_leray_idempotent(unit_field):
    p = leray_project(unit_field)
    assert np.allclose(p.coeffs, unit_field.coeffs, atol=1e-15)
    assert np.allclose(leray_project(p).coeffs, p.coeffs, atol=1e-16)


def test_stokes_examples():
    g = Grid(16, TWO_PI)
    f = _mode_field(g, (1, 2), np.array([2.0, -1.0]))
    a = stokes_apply(f)
    assert np.allclose(a.coeffs, 5 * f.coeffs)
    assert np.allclose(stokes_apply(a).coeffs, 25 * f.coeffs)
    assert np.abs(stokes_apply(SpectralField.zeros(g)).coeffs).max() == 0


def test_sobolev_examples():
    g = Grid(16, TWO_PI)
    f = normalized(single_mode_field(g, (1, 0)))
    assert sobolev_norm(f, 0) == pytest.approx(1.0, rel=1e-14)
    assert sobolev_norm(f, 1) == pytest.approx(np.sqrt(2), rel=1e-14)
    assert sobolev_norm(f, 2) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ParameterError):
        sobolev_norm(f, -1)


@pytest.mark.parametrize("seed", range(5))
def test_parseval(seed):
    g = Grid(32)
    f = random_divfree_field(seed, g, 2.0)
    u = f.physical()
    phys = np.sqrt(np.sum(u**2) * g.dx**2)
    assert abs(phys - f.norm()) / phys < 1e-12


def test_random_field_invariants():
    g = Grid(32)
    a = random_divfree_field(5, g)
    b = random_divfree_field(5, g)
    assert a.equals(b)
    assert divergence_residual(a) < 1e-12
    assert reality_residual(a) < 1e-15
    assert a.coeffs[:, 0, 0].tolist() == [0, 0]
    with pytest.raises(ParameterError):
        random_divfree_field(5, g, 1.0)


def test_random_field_refinement_stable():
    norms = [random_divfree_field(8, Grid(n), 2.0).norm() for n in (32, 64, 128)]
    assert abs(norms[1] / norms[0] - 1) < 0.05
    assert abs(norms[2] / norms[1] - 1) < 0.05


def _b_quadrature(u, v, w, L):
    # independent oracle: adaptive quadrature of (u.grad)v.w with analytic derivatives
    def integrand(y, x):
        (u1, u2), (dv1dx, dv1dy, dv2dx, dv2dy), (w1, w2) = u(x, y), v(x, y), w(x, y)
        return (u1 * dv1dx + u2 * dv1dy) * w1 + (u1 * dv2dx + u2 * dv2dy) * w2
    return integrate.dblquad(integrand, 0, L, 0, L, epsabs=1e-11)[0]


def test_trilinear_closed_form_oracles():
    g = Grid(16, TWO_PI)
    x, y = g.xy
    u = SpectralField.from_physical(g, np.stack([np.sin(y), 0 * x]))
    v = SpectralField.from_physical(g, np.stack([0 * x, np.sin(x)]))
    w = SpectralField.from_physical(g, np.stack([np.sin(y), 0 * x]))
    ref = _b_quadrature(lambda x, y: (np.sin(y), 0.0),
                        lambda x, y: (0.0, 0.0, np.cos(x), 0.0),
                        lambda x, y: (np.sin(y), 0.0), TWO_PI)
    assert trilinear_b(u, v, w) == pytest.approx(ref, abs=1e-10)
    # a nonzero case: integral of cos^2 x cos^2 y = pi^2
    u = SpectralField.from_physical(g, np.stack([np.cos(y), 0 * x]))
    w = SpectralField.from_physical(g, np.stack([np.sin(x) * np.sin(y), np.cos(x) * np.cos(y)]))
    ref = _b_quadrature(lambda x, y: (np.cos(y), 0.0),
                        lambda x, y: (0.0, 0.0, np.cos(x), 0.0),
                        lambda x, y: (np.sin(x) * np.sin(y), np.cos(x) * np.cos(y)), TWO_PI)
    assert ref == pytest.approx(np.pi**2, rel=1e-9)
    assert trilinear_b(u, v, w) == pytest.approx(ref, rel=1e-10)


def test_trilinear_grid_mismatch():
    a = random_divfree_field(1, Grid(16))
    b = random_divfree_field(1, Grid(32))
    with pytest.raises(ParameterError):
        trilinear_b(a, b, a)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_trilinear_identities(s1, s2, s3):
    g = Grid(32)
    u, v, w = (random_divfree_field(s, g, 2.0) for s in (s1, s2, s3))
    scale = u.norm() * grad_norm(v) * w.norm() * g.k0 * g.cutoff
    assert abs(trilinear_b(u, v, v)) <= 1e-10 * scale
    assert abs(trilinear_b(u, v, w) + trilinear_b(u, w, v)) <= 1e-10 * scale


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_monotonicity_identity(s1, s2):
    # (B(u) - B(v), u - v) = -b(u - v, u - v, v)
    g = Grid(32)
    u, v = random_divfree_field(s1, g), random_divfree_field(s2, g)
    lhs = inner(nonlinear_term(u) - nonlinear_term(v), u - v)
    rhs = -trilinear_b(u - v, u - v, v)
    scale = (u - v).norm() ** 2 * grad_norm(v) * g.k0 * g.cutoff
    assert abs(lhs - rhs) <= 1e-10 * max(scale, 1e-300)


def test_stokes_coercivity(unit_field):
    assert inner(stokes_apply(unit_field), unit_field) == pytest.approx(
        grad_norm(unit_field) ** 2, rel=1e-10)


def test_nonlinear_term_examples():
    g = Grid(32)
    assert np.abs(nonlinear_term(SpectralField.zeros(g)).coeffs).max() == 0
    tg = taylor_green(g)
    assert np.abs(nonlinear_term(tg).coeffs).max() < 1e-10 * tg.norm()
    u = random_divfree_field(2, g)
    bu = nonlinear_term(u)
    assert divergence_residual(bu) < 1e-12
    assert abs(inner(bu, u)) < 1e-10 * u.norm() ** 2 * grad_norm(u)


def test_divergence_form_matches_advective_form():
    g = Grid(32)
    u = random_divfree_field(4, g)
    adv = project_h(g, convect_h(g, u.half[None], u.half[None])) * g.mask
    div = advection_h(g, u.half[None])
    assert np.abs(adv - div).max() < 1e-12 * np.abs(div).max()


def test_b1_ratio_bounded_under_refinement():
    def ratio_max(n):
        g = Grid(n)
        worst = 0.0
        for s in range(100):
            u, v, w = (random_divfree_field(3 * s + i, g) for i in range(3))
            den = (u.norm() ** 0.5 * grad_norm(u) ** 0.5
                   * (v.norm() ** 0.5 + grad_norm(v) ** 0.5)
                   * (v + stokes_apply(v)).norm() ** 0.5 * w.norm())
            worst = max(worst, abs(trilinear_b(u, v, w)) / den)
        return worst
    r16, r32 = ratio_max(16), ratio_max(32)
    assert np.isfinite(r16) and np.isfinite(r32)
    assert r32 < 2 * r16


def test_forcing_spec():
    g = Grid(16)
    f1 = single_mode_field(g, (1, 1), 0.5)
    f = ForcingSpec("time-polynomial", f1, 2.0, 0.1)
    assert f.norm_sq(3.0) == pytest.approx(81 * f1.norm() ** 2)
    assert f.factor(-2.0) == 4.0
    assert ForcingSpec("time-polynomial", f1, 0.5).factor(-4.0) == 2.0
    assert ForcingSpec().is_zero and ForcingSpec().half_at(1.0) is None
    with pytest.raises(HypothesisError):
        ForcingSpec("fixed-field", f1, 0.0, 0.5).check(1.0)
    ForcingSpec("fixed-field", f1, 0.0, 0.49).check(1.0)
    with pytest.raises(ParameterError):
        ForcingSpec("fixed-field")
    with pytest.raises(ParameterError):
        ForcingSpec("bogus")


def test_from_physical_round_trip(unit_field):
    u = unit_field.physical()
    back = SpectralField.from_physical(unit_field.grid, u)
    assert np.allclose(back.coeffs, unit_field.coeffs, atol=1e-15)
    assert np.allclose(to_spec(unit_field.grid, u), unit_field.half, atol=1e-15)
    assert grad_sq_h(unit_field.grid, unit_field.half) == pytest.approx(grad_norm(unit_field) ** 2)
