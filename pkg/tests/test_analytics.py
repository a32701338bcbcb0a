import cmath
import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st
from scipy import integrate

from bandwig.analytics import (
    G_decay_check,
    check_window,
    exp_vertex_a,
    exp_vertex_b,
    f1,
    f1_prime,
    f1_second,
    f2,
    f2_prime,
    f2_second,
    saddle_data,
    saddle_point,
    semicircle,
    semicircle_broadened,
    semicircle_stieltjes,
    vertex_D,
    vertex_D_integral,
    vertex_D_observable,
    vertex_V,
    vertex_V_closed,
    well_profiles,
)
from bandwig.lattice import build_torus

bulk = st.floats(0.11, 1.8).flatmap(lambda x: st.sampled_from([x, -x]))


# ------------------------------------------------------------------ semicircle


def test_semicircle_values():
    assert semicircle(0.0) == pytest.approx(1 / math.pi, abs=1e-15)
    assert semicircle(2.0) == 0.0
    assert semicircle(-2.0) == 0.0
    assert semicircle(3.0) == 0.0
    assert semicircle(1.0) == pytest.approx(math.sqrt(3) / (2 * math.pi), abs=1e-15)


def test_semicircle_normalised():
    total, _ = integrate.quad(semicircle, -2, 2, epsabs=1e-13)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_stieltjes_transform_and_broadening():
    z = 0.3 + 0.2j
    direct = integrate.quad(lambda x: (semicircle(x) / (z - x)).real, -2, 2)[0] + 1j * integrate.quad(
        lambda x: (semicircle(x) / (z - x)).imag, -2, 2
    )[0]
    assert semicircle_stieltjes(z) == pytest.approx(direct, abs=1e-10)
    eps = 0.05
    conv = integrate.quad(lambda x: semicircle(x) * eps / math.pi / ((1.0 - x) ** 2 + eps**2), -2, 2, points=[1.0])[0]
    assert semicircle_broadened(1.0, eps) == pytest.approx(conv, abs=1e-10)
    assert semicircle_broadened(1.0, 1e-9) == pytest.approx(semicircle(1.0), abs=1e-8)


# ------------------------------------------------------------------ saddle point


def test_saddle_at_unit_energy():
    sd = saddle_data(1.0)
    assert sd.calE == pytest.approx(complex(0.5, -0.8660254037844386), abs=1e-15)
    assert sd.m_r2 == pytest.approx(1.5, abs=1e-15)
    assert sd.m_i2 == pytest.approx(0.8660254037844386, abs=1e-15)
    assert abs(sd.calE * sd.calE.conjugate() - 1) <= 1e-14
    assert sd.hessian_mass == pytest.approx(1 - sd.calE**2, abs=1e-15)
    assert sd.to_json()["calE"] == {"re": 0.5, "im": pytest.approx(-0.8660254037844386)}


@pytest.mark.parametrize("E", [0.05, -0.1, 1.81, 2.5])
def test_window_rejection(E):
    with pytest.raises(ValueError, match="bound|bulk"):
        saddle_data(E, 0.1)


def test_window_checks():
    check_window(1.8)
    check_window(-0.2)
    with pytest.raises(ValueError):
        check_window(1.0, eta=0.0)
    sd = saddle_data(1.9, strict=False)
    assert not sd.in_window


@given(E=bulk)
def test_saddle_invariants(E):
    sd = saddle_data(E)
    cal = sd.calE
    assert abs(cal * cal.conjugate() - 1) <= 1e-14
    assert abs((E - cal) - cal.conjugate()) <= 1e-14
    assert abs(f1_prime(cal, E)) <= 1e-14
    assert abs(f2_prime(-1j * cal, E)) <= 1e-14
    assert abs(f1_second(cal, E) - (1 - cal**2)) <= 1e-14
    assert abs(f2_second(-1j * cal, E) - (1 - cal**2)) <= 1e-14
    assert sd.rho_sc == pytest.approx(semicircle(E), abs=1e-15)
    assert sd.m_r2 + 1j * sd.m_i2 == pytest.approx(1 - cal**2, abs=1e-14)
    for a in sd.saddle_a:
        assert abs(f1_prime(a, E)) <= 1e-13
    for b in sd.saddle_b:
        assert abs(f2_prime(b, E)) <= 1e-13


def test_saddle_point_with_broadening():
    cal, ct = saddle_point(1.0, 0.05)
    assert cal + ct == pytest.approx(1.0 + 0.05j)
    assert cal * ct == pytest.approx(1.0, abs=1e-14)


# ------------------------------------------------------------------ wells


def test_well_profiles_at_unit_energy():
    root3 = math.sqrt(3)
    grid = np.linspace(-3, 3, 601)
    wp = well_profiles(1.0, grid)
    assert wp.F1[300] == pytest.approx(1.0, abs=1e-12)
    assert wp.f1_max_at_zero
    assert wp.f2_second_max == pytest.approx(1.0, abs=1e-12)
    F1_half = well_profiles(1.0, [-0.5, 0.5]).F1
    assert np.all(F1_half < 1)
    b = np.linspace(0.01, root3 - 0.01, 200)
    assert np.all(well_profiles(1.0, [0.0], b).F2 < 1)
    F2_peaks = well_profiles(1.0, [0.0], [0.0, root3]).F2
    np.testing.assert_allclose(F2_peaks, [1.0, 1.0], atol=1e-12)
    assert len(wp.rows()) == grid.size


def test_well_outside_window_is_flagged():
    wp = well_profiles(1.9, np.linspace(-2, 2, 401))
    assert not wp.in_window
    assert not wp.f1_max_at_zero


def test_wells_match_action_differences():
    E = 0.7
    cal = saddle_data(E).calE
    a = np.linspace(-1, 1, 9)
    wp = well_profiles(E, a)
    direct_a = np.abs(np.exp(-(f1(a + cal, E) - f1(cal, E))))
    direct_b = np.abs(np.exp(-(f2(a - 1j * cal, E) - f2(-1j * cal, E))))
    np.testing.assert_allclose(wp.F1, direct_a, rtol=1e-12)
    np.testing.assert_allclose(wp.F2, direct_b, rtol=1e-12)


# ------------------------------------------------------------------ vertices


def test_vertex_V_small_field_limit():
    E = 1.0
    ct = saddle_data(E).calE.conjugate()
    assert vertex_V(0.0, E) == 0
    limit = 1 / (3 * ct**3)
    errors = [abs(vertex_V(a, E) / a**3 - limit) for a in (1e-3, 1e-4)]
    # the next term of the expansion is linear in a
    assert errors[1] <= 1e-4 * abs(limit)
    assert errors[0] / errors[1] == pytest.approx(10, rel=0.05)


@given(E=bulk, z=st.floats(-3, 3))
@example(E=0.125, z=3.0)  # denominator passes within 0.06 of zero
@example(E=1.0, z=1e-233)
def test_vertex_quadrature_matches_closed_form(E, z):
    for branch in ("a", "b"):
        assert vertex_V(z, E, branch) == pytest.approx(vertex_V_closed(z, E, branch), abs=1e-10)


def test_vertex_cubic_bound_near_origin():
    z = np.linspace(-0.1, 0.1, 41)
    z = z[z != 0]
    ratio = np.abs(vertex_V_closed(z, 1.0)) / np.abs(z) ** 3
    assert ratio.max() <= 2 * abs(1 / 3)


@given(E=bulk)
def test_translated_action_identity(E):
    cal = saddle_data(E).calE
    z = np.linspace(-2.5, 2.5, 21)
    quad_a = 0.5 * (1 - cal**2) * z**2
    lhs_a = f1(z + cal, E) - f1(cal, E)
    lhs_b = f2(z - 1j * cal, E) - f2(-1j * cal, E)
    # branch cuts of the logarithm make the identity hold modulo 2 pi i
    for lhs, branch in ((lhs_a, "a"), (lhs_b, "b")):
        diff = lhs - (quad_a - vertex_V_closed(z, E, branch))
        wrapped = np.angle(np.exp(1j * diff.imag))
        assert np.max(np.abs(diff.real)) <= 1e-10
        assert np.max(np.abs(wrapped)) <= 1e-10


@given(E=bulk, z=st.floats(-4, 4))
def test_exp_vertices(E, z):
    cal = saddle_data(E).calE
    assert exp_vertex_a(z, cal) == pytest.approx(cmath.exp(vertex_V_closed(z, E, "a")), rel=1e-10)
    assert exp_vertex_b(z, cal) == pytest.approx(cmath.exp(vertex_V_closed(z, E, "b")), rel=1e-10)


def test_vertex_D_examples():
    E = 1.0
    cal = saddle_data(E).calE
    assert abs(vertex_D(0.0, 0.0, E)) <= 1e-14
    assert vertex_D(0.3, 0.3, E) == pytest.approx(vertex_D_integral(0.3, 0.3, E), abs=1e-10)
    assert vertex_D_observable(0.0, 0.0, E) == pytest.approx(-(cal**2), abs=1e-14)
    ct = cal.conjugate()
    # observable exponent at the origin is -log(calE~)
    assert -cmath.log(ct) == pytest.approx(cmath.log(cal), abs=1e-14)


@given(E=bulk, a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_vertex_D_representations_agree(E, a, b):
    assert vertex_D(a, b, E) == pytest.approx(vertex_D_integral(a, b, E), abs=1e-9)


def test_vertex_branch_validation():
    with pytest.raises(ValueError):
        vertex_V(0.1, 1.0, branch="c")
    with pytest.raises(ValueError):
        vertex_V_closed(0.1, 1.0, branch="c")


# ------------------------------------------------------------------ G decay


def test_G_decay_check():
    rep = G_decay_check(1.0, 4, build_torus(3, [16, 16, 16]))
    assert rep.passed
    assert rep.rate >= 0.5 * math.sqrt(1.5) / 4
    assert rep.far < rep.near
    assert rep.diag_deviation <= rep.diag_bound


def test_G_decay_needs_large_torus():
    with pytest.raises(ValueError):
        G_decay_check(1.0, 4, build_torus(3, [8, 8, 8]))
