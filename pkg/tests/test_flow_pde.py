import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, ndimage

from stochricci import flow_pde as F
from stochricci.spline import evaluate, spline_coefficients

TWO_PI = 2 * math.pi


def sine(n=64, amp=1.0):
    return F.GridField.from_function(lambda a, b: amp * np.sin(TWO_PI * a), n)


def test_grid_field_validation():
    with pytest.raises(F.FlowError):
        F.GridField(np.zeros((12, 12)), 1.0)
    with pytest.raises(F.FlowError):
        F.GridField(np.full((8, 8), np.nan), 1.0)


def test_laplacian_constant_and_modes():
    assert np.all(F.laplacian(F.GridField(np.full((16, 16), 3.0), 1.0)).values == 0.0)
    f = sine()
    h = f.h
    factor = -(2 / h**2) * (1 - math.cos(TWO_PI * h))
    h_mp = mpmath.mpf(1) / 64
    oracle = -(2 / h_mp**2) * (1 - mpmath.cos(2 * mpmath.pi * h_mp))
    assert factor == pytest.approx(float(oracle), rel=1e-13)
    np.testing.assert_allclose(F.laplacian(f).values, factor * f.values, atol=1e-12)
    i, j = np.indices((64, 64))
    board = F.GridField((-1.0) ** (i + j), 1.0)
    np.testing.assert_allclose(F.laplacian(board).values, -8 / h**2 * board.values, rtol=1e-12)


def test_rhs_examples():
    zero = F.GridField(np.zeros((16, 16)), 1.0)
    assert np.all(F.rhs(zero).values == 0.0)
    assert np.all(F.rhs(F.GridField(np.full((16, 16), 0.7), 1.0)).values == 0.0)
    f = sine(amp=1e-6)
    lap = F.laplacian(f).values
    rel = np.abs(F.rhs(f).values - lap).max() / np.abs(lap).max()
    assert rel <= 3e-6
    with pytest.raises(F.FlowError, match="flat reference"):
        F.rhs(f, r=1)


def test_normalize_area():
    zero = F.GridField(np.zeros((16, 16)), 1.0)
    np.testing.assert_array_equal(F.normalize_area(zero).values, zero.values)
    np.testing.assert_allclose(F.normalize_area(F.GridField(np.ones((16, 16)), 1.0)).values, 0.0,
                               atol=1e-15)
    f = sine(amp=0.2)
    I, _ = integrate.quad(lambda x: math.exp(0.4 * math.sin(TWO_PI * x)), 0.0, 1.0, epsabs=1e-14)
    shift = F.normalize_area(f).values - f.values
    np.testing.assert_allclose(shift, -0.5 * math.log(I), atol=1e-12)


def test_solve_zero_is_fixed():
    p0 = F.preset_field("zero", 32)
    sol = F.solve(p0, 0.01, F.cfl_limit(p0), 0.005)
    assert np.all(sol.values == 0.0)


def test_solve_linear_decay_example():
    p0 = F.GridField.from_function(lambda a, b: 0.01 * np.sin(TWO_PI * a), 64)
    p0 = F.normalize_area(p0)
    sol = F.solve(p0, 0.05, F.cfl_limit(p0), 0.01)
    predicted = 0.01 * math.exp(-4 * math.pi**2 * 0.05)
    assert predicted == pytest.approx(1.39e-3, rel=1e-2)
    assert np.abs(sol.values[-1]).max() == pytest.approx(predicted, rel=0.05)


def test_area_conserved_and_extrema_bounded():
    p0 = F.preset_field("sin2d", 64)
    sol = F.solve(p0, 0.1, F.cfl_limit(p0), 0.01)
    areas = [F.area(f) for f in sol.fields]
    assert max(abs(a / areas[0] - 1) for a in areas) <= 1e-6
    assert sol.values.max(axis=(1, 2)).max() <= p0.values.max() + 1e-10
    assert sol.values.min(axis=(1, 2)).min() >= p0.values.min() - 1e-10


def test_solve_preconditions():
    f = sine(amp=0.2)
    with pytest.raises(F.FlowError, match="area normalization"):
        F.solve(f, 0.01, 1e-6, 0.01)
    p0 = F.normalize_area(f)
    with pytest.raises(F.FlowError, match="CFL"):
        F.solve(p0, 0.01, 10 * F.cfl_limit(p0), 0.01)
    with pytest.raises(F.FlowError, match="whole multiple"):
        F.solve(p0, 0.01, F.cfl_limit(p0), 0.003)


def test_grid_refinement_order():
    sups = []
    for n in (64, 128, 256):
        p0 = F.preset_field("sin1", n)
        sol = F.solve(p0, 0.02, F.cfl_limit(p0), 0.02)
        sups.append(np.abs(sol.values[-1]).max())
    order = math.log2(abs(sups[0] - sups[1]) / abs(sups[1] - sups[2]))
    assert order >= 1.8


# interpolation


def test_spline_matches_scipy_oracle():
    gen = np.random.default_rng(3)
    vals = gen.normal(size=(32, 32))
    pts = gen.random((500, 2))
    ours = evaluate(spline_coefficients(vals), pts, 1.0)
    ref = ndimage.map_coordinates(vals, (pts * 32).T, order=3, mode="grid-wrap")
    np.testing.assert_allclose(ours, ref, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 31), st.integers(0, 31))
def test_spline_reproduces_nodes(i, j):
    vals = np.random.default_rng(i * 32 + j).normal(size=(32, 32))
    got = evaluate(spline_coefficients(vals), np.array([[i / 32, j / 32]]), 1.0)[0]
    assert got == pytest.approx(vals[i, j], abs=1e-12)


def test_spline_derivatives_match_finite_differences():
    vals = np.random.default_rng(4).normal(size=(16, 16))
    c = spline_coefficients(vals)
    x = np.array([[0.3141, 0.2718]])
    e = 1e-6
    g = evaluate(c, x, 1.0, "grad")[0]
    fd = [(evaluate(c, x + e * d, 1.0)[0] - evaluate(c, x - e * d, 1.0)[0]) / (2 * e)
          for d in np.eye(2)]
    np.testing.assert_allclose(g, fd, rtol=1e-6)
    H = evaluate(c, x, 1.0, "hess")[0]
    fdH = np.array([(evaluate(c, x + e * d, 1.0, "grad")[0] - evaluate(c, x - e * d, 1.0, "grad")[0])
                    / (2 * e) for d in np.eye(2)])
    np.testing.assert_allclose(H, fdH, rtol=1e-5)


def test_interp_examples():
    const = F.FlowSolution([0.0, 1.0], np.full((2, 16, 16), 0.3), 1e-3, 1.0)
    assert F.interp(const, 0.5, (0.123, 0.456)) == pytest.approx(0.3, abs=1e-14)
    np.testing.assert_allclose(F.interp(const, 0.5, (0.123, 0.456), "grad"), 0.0, atol=1e-12)
    np.testing.assert_allclose(F.interp(const, 0.5, (0.123, 0.456), "hess"), 0.0, atol=1e-10)
    f = sine()
    sol = F.FlowSolution([0.0, 1.0], np.stack([f.values, f.values]), 1e-3, 1.0)
    g = F.interp(sol, 0.3, (0.0, 0.5), "grad")
    assert g[0] == pytest.approx(TWO_PI, rel=1e-3)
    assert abs(g[1]) <= 1e-12
    assert F.interp(sol, 0.0, (5 / 64, 0.5)) == pytest.approx(f.values[5, 32], abs=1e-12)


def test_interp_time_is_linear():
    a, b = np.zeros((16, 16)), np.ones((16, 16))
    sol = F.FlowSolution([0.0, 1.0], np.stack([a, b]), 1e-3, 1.0)
    assert F.interp(sol, 0.25, (0.3, 0.3)) == pytest.approx(0.25)


def test_sup_norms_examples():
    zero = F.FlowSolution([0.0, 1.0], np.zeros((2, 64, 64)), 1e-3, 1.0)
    assert F.sup_norms(zero, 0.0) == F.SupNorms(0.0, 0.0, 0.0)
    const = F.FlowSolution([0.0, 1.0], np.full((2, 64, 64), -0.4), 1e-3, 1.0)
    s = F.sup_norms(const, 1.0)
    assert (s.p_inf, s.grad_inf, s.hess_inf) == pytest.approx((0.4, 0.0, 0.0), abs=1e-12)
    A = 0.3
    f = sine(amp=A)
    sol = F.FlowSolution([0.0, 1.0], np.stack([f.values, f.values]), 1e-3, 1.0)
    s = F.sup_norms(sol, 0.0)
    assert s.p_inf == pytest.approx(A)
    assert s.grad_inf == pytest.approx(TWO_PI * A, rel=5e-3)
    assert s.hess_inf == pytest.approx(TWO_PI**2 * A, rel=5e-3)


def test_second_difference_quotient():
    zero = F.FlowSolution([0.0, 1.0], np.zeros((2, 64, 64)), 1e-3, 1.0)
    assert F.second_difference_quotient(zero, 0.5, (0.1, 0.2), (1.0, 0.0), 0.01) == 0.0
    f = sine()
    sol = F.FlowSolution([0.0, 1.0], np.stack([f.values, f.values]), 1e-3, 1.0)
    q = F.second_difference_quotient(sol, 0.0, (0.25, 0.0), (1.0, 0.0), 1e-3)
    assert q == pytest.approx(-4 * math.pi**2, rel=1e-3)
    with pytest.raises(F.FlowError):
        F.second_difference_quotient(sol, 0.0, (0.25, 0.0), (1.0, 0.0), 0.3)


def test_second_difference_tracks_hessian():
    p0 = F.preset_field("sin2d", 64)
    sol = F.solve(p0, 0.02, F.cfl_limit(p0), 0.01)
    gen = np.random.default_rng(5)
    for _ in range(10):
        z = gen.random(2)
        ang = gen.random() * TWO_PI
        xi = np.array([math.cos(ang), math.sin(ang)])
        H = F.interp(sol, 0.02, z, "hess")
        exact = xi @ H @ xi
        if abs(exact) < 0.5:
            continue
        q = F.second_difference_quotient(sol, 0.02, z, xi, 1e-3)
        assert q == pytest.approx(exact, rel=0.05)


def test_persistence_round_trip(tmp_path):
    p0 = F.preset_field("sin1", 16)
    sol = F.solve(p0, 0.01, F.cfl_limit(p0), 0.005)
    F.save_solution(sol, str(tmp_path / "run"))
    back = F.load_solution(str(tmp_path / "run"))
    np.testing.assert_array_equal(back.values, sol.values)
    np.testing.assert_array_equal(back.times, sol.times)
    F.save_field(p0, str(tmp_path / "p0.csv"), t=0.0)
    f, t = F.load_field(str(tmp_path / "p0.csv"))
    np.testing.assert_array_equal(f.values, p0.values)
    assert t == 0.0


def test_unknown_preset():
    with pytest.raises(F.FlowError, match="unknown preset"):
        F.preset_field("square")
