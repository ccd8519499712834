import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from vpstab.numerics import (
    InvalidArgumentError,
    OutOfRangeError,
    eig_tridiag,
    exterior_power_tail,
    hermite_eval,
    invert_monotone,
    make_1d_grid,
    make_grids,
    solve_profile_ode,
    turning_point_integral,
)


def test_uniform_grid_basics():
    g = make_1d_grid(1.0, 100)
    assert g.weights.sum() == pytest.approx(1.0, rel=1e-14)
    assert g.nodes[0] == pytest.approx(0.005, abs=0.002)
    assert g.nodes[1] == pytest.approx(0.015, abs=0.002)
    assert np.all(np.diff(g.nodes) > 0)
    assert np.all(g.nodes > 0)


def test_grid_second_moment_exact():
    for spacing in ("uniform", "graded"):
        g = make_1d_grid(2.5, 64, spacing=spacing)
        assert g.integrate_sq(np.ones(g.n)) == pytest.approx(2.5**3 / 3, rel=1e-10)


def test_log_grid_constant_ratio():
    g = make_1d_grid(10.0, 64, spacing="log", x_min=1e-3)
    ratios = g.nodes[1:] / g.nodes[:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)


def test_graded_grid_clusters_near_origin_and_edge():
    g = make_1d_grid(3.0, 64, spacing="graded", edge=1.0)
    w = g.weights
    inner = w[g.nodes < 0.1]
    near_edge = w[(g.nodes > 0.9) & (g.nodes < 1.0)]
    bulk = w[(g.nodes > 0.4) & (g.nodes < 0.6)]
    assert inner.mean() < 0.5 * bulk.mean()
    assert near_edge.mean() < 0.5 * bulk.mean()


def test_phase_grid_box_measure():
    ps = make_grids(1.0, 32, 1.0, 32)
    vol = (4 * np.pi / 3) ** 2
    assert ps.total_measure() == pytest.approx(vol, rel=1e-6)
    # boundary-aligned sub-box
    sub = ps.box_measure(0.5, 1.0)
    assert sub == pytest.approx((4 * np.pi / 3) * 0.5**3 * (4 * np.pi / 3), rel=1e-6)


def test_make_grids_validation():
    with pytest.raises(InvalidArgumentError):
        make_grids(1.0, 8, 1.0, 32)
    with pytest.raises(InvalidArgumentError):
        make_grids(-1.0, 32, 1.0, 32)


def test_quadrature_convergence_order():
    f = lambda r: np.cos(3 * r) * np.exp(-r)
    exact = quad(f, 0, 2, epsabs=1e-14)[0]
    errs = []
    for n in (64, 128, 256):
        g = make_1d_grid(2.0, n)
        errs.append(abs(g.integrate(f(g.nodes)) - exact))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(slopes >= 1.9)


def test_invert_monotone_identity_and_cube():
    assert invert_monotone(lambda x: x, 0.3, 0.0, 1.0) == pytest.approx(0.3, abs=1e-12)
    assert invert_monotone(lambda x: x**3, 8.0, 0.0, 2.0) == pytest.approx(2.0, abs=1e-12)


def test_invert_monotone_out_of_range():
    with pytest.raises(OutOfRangeError):
        invert_monotone(lambda x: x, 2.0, 0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(min_value=0.01, max_value=2.0), min_size=3, max_size=6),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_invert_monotone_roundtrip_random(coeffs, frac):
    # random strictly increasing polynomial-ish function on [0, 1]
    c = np.asarray(coeffs)

    def fn(x):
        return sum(ck * x ** (k + 1) for k, ck in enumerate(c))

    target = fn(frac)
    x = invert_monotone(fn, target, 0.0, 1.0)
    assert abs(fn(x) - target) <= 1e-12 * max(1.0, abs(target))


def test_invert_monotone_phase_volume_roundtrip(king_jac):
    # quadrature-backed monotone map: invert a(e) through the generic solver
    e_ref = 0.6 * king_jac.min_phi
    target = float(king_jac.a_direct(np.array([e_ref]))[0])
    e_back = invert_monotone(
        lambda e: float(king_jac.a_direct(np.array([e]))[0]),
        target,
        king_jac.min_phi,
        -1e-6,
        rtol=1e-9,
    )
    assert e_back == pytest.approx(e_ref, rel=1e-7)


def test_eig_tridiag_laplacian_spectrum():
    n = 4
    vals, vecs = eig_tridiag(np.full(n, 2.0), np.full(n - 1, -1.0), n)
    expected = 2 - 2 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1))
    assert np.allclose(vals, np.sort(expected), atol=1e-12)
    # orthonormal eigenvectors, small residuals
    assert np.allclose(vecs.T @ vecs, np.eye(n), atol=1e-8)
    A = np.diag(np.full(n, 2.0)) + np.diag(np.full(n - 1, -1.0), 1) + np.diag(np.full(n - 1, -1.0), -1)
    for k in range(n):
        assert np.linalg.norm(A @ vecs[:, k] - vals[k] * vecs[:, k]) <= 1e-8


def test_eig_tridiag_diagonal():
    vals, _ = eig_tridiag([1.0, 2.0, 3.0], [0.0, 0.0], 2)
    assert np.allclose(vals, [1.0, 2.0])


def test_eig_tridiag_harmonic_oscillator():
    # -d^2/dx^2 + x^2 on [-8, 8]: ground state energy 1
    n = 400
    x = np.linspace(-8, 8, n)
    h = x[1] - x[0]
    vals, _ = eig_tridiag(2 / h**2 + x**2, np.full(n - 1, -1 / h**2), 3)
    assert vals[0] == pytest.approx(1.0, abs=1e-3)
    assert np.all(np.diff(vals) > 0)


def test_eig_tridiag_validation():
    with pytest.raises(InvalidArgumentError):
        eig_tridiag([1.0, 2.0], [0.1, 0.2], 1)


def test_hermite_eval_reproduces_polynomials():
    xs = np.linspace(0, 2, 9)
    f = xs**3 - 2 * xs**2 + 0.5
    fp = 3 * xs**2 - 4 * xs
    x = np.linspace(0.01, 1.99, 57)
    val, der = hermite_eval(xs, f, fp, x)
    assert np.allclose(val, x**3 - 2 * x**2 + 0.5, atol=1e-12)
    assert np.allclose(der, 3 * x**2 - 4 * x, atol=1e-10)
    # quintic variant is exact for quintics
    f5, fp5, fpp5 = xs**5, 5 * xs**4, 20 * xs**3
    val5, der5 = hermite_eval(xs, f5, fp5, x, ypp=fpp5)
    assert np.allclose(val5, x**5, rtol=1e-12)
    assert np.allclose(der5, 5 * x**4, rtol=1e-10)


def test_turning_point_integral_vs_quad():
    phi = lambda r: -1.0 / (1.0 + np.asarray(r))
    e = -0.5
    exact = quad(lambda r: (e - phi(r)) ** 1.5 * r**2, 0.0, 1.0, epsabs=1e-14)[0]
    val = turning_point_integral(phi, e, 1.0, 1.5)
    assert val == pytest.approx(exact, rel=1e-10)


def test_exterior_power_tail_vs_quad():
    mass, e, r0 = 7.0, -0.05, 2.0
    beta = mass / (4 * np.pi)
    r_e = beta / (-e)
    exact = quad(lambda r: (e + beta / r) ** 1.5 * r**2, r0, r_e, epsabs=1e-13)[0]
    assert exterior_power_tail(mass, e, r0, 1.5) == pytest.approx(exact, rel=1e-10)


def test_profile_ode_lane_emden_analytic():
    # constant source: y = y0 - r^2/6, zero at sqrt(6)
    ode0 = solve_profile_ode(lambda y: np.ones_like(y), 1.0, 1e-3)
    assert ode0.r_zero == pytest.approx(np.sqrt(6.0), rel=1e-10)
    # linear source: y = sin(r)/r, zero at pi
    ode1 = solve_profile_ode(lambda y: np.clip(y, 0, None), 1.0, 1e-3)
    assert ode1.r_zero == pytest.approx(np.pi, rel=1e-10)
    r = np.array([0.5, 1.5, 2.5])
    assert np.allclose(ode1(r), np.sin(r) / r, atol=1e-9)
