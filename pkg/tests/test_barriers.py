import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochricci import barriers as B


def test_barrier_examples():
    for tau in (0.0, 0.3, 4.0):
        assert B.barrier_value(B.BarrierParams(1, 0.0), tau) == 0.0
    assert B.barrier_value(B.BarrierParams(0, 0.7), 5.0) == 0.7
    c = 1 - math.e
    assert c == pytest.approx(-1.718282, abs=1e-6)
    oracle = 0.5 * mpmath.log(1 - (1 - mpmath.e) * mpmath.e**2)
    assert B.barrier_value(B.BarrierParams(-1, c), 1.0) == pytest.approx(float(oracle), rel=1e-14)


def test_barrier_params_validation():
    with pytest.raises(B.BarrierError):
        B.BarrierParams(2, 0.0)
    with pytest.raises(B.BarrierError):
        B.BarrierParams(-1, 1.0)


@pytest.mark.parametrize("r, c", [(-1, 0.5), (-1, -2.0), (0, 0.3), (1, 0.5), (1, -1.0)])
def test_barrier_solves_ode(r, c):
    params = B.BarrierParams(r, c)
    end = min(2.0, 0.9 * B.escape_time(params))
    e = 1e-5
    for tau in np.linspace(e, end, 100):
        d = (B.barrier_value(params, tau + e) - B.barrier_value(params, tau - e)) / (2 * e)
        assert abs(d - B.barrier_drift(r, B.barrier_value(params, tau))) <= 1e-6


def test_barrier_escape():
    params = B.BarrierParams(-1, 0.5)
    T = B.escape_time(params)
    assert T == pytest.approx(0.5 * math.log(2))
    with pytest.raises(B.BarrierError, match="-inf"):
        B.barrier_value(params, T + 0.1)
    assert B.escape_time(B.BarrierParams(1, 0.5)) == math.inf


def test_reachable_examples():
    for r in (-1, 0, 1):
        for t in (0.0, 0.5, 3.0):
            assert B.reachable_bounds(r, 0.0, 0.0, t) == pytest.approx((0.0, 0.0), abs=1e-15)
    assert B.reachable_bounds(0, 0.3, -0.2, 7.0) == (0.3, -0.2)
    oracle = 0.5 * mpmath.log(1 - mpmath.e**-2 * (1 - mpmath.e))
    upper, _ = B.reachable_bounds(-1, 0.5, 0.0, 1.0)
    assert upper == pytest.approx(float(oracle), rel=1e-14)
    assert upper == pytest.approx(0.104540227115956, abs=1e-14)


def test_reachable_rejects_unnormalized():
    with pytest.raises(B.BarrierError, match="area normalization"):
        B.reachable_bounds(0, -0.1, -0.2, 1.0)


def test_positive_curvature_lower_bound_disappears():
    beta = -0.2
    t_star = -0.5 * math.log(1 - math.exp(2 * beta))
    _, lower = B.reachable_bounds(1, 0.1, beta, 0.5 * t_star)
    assert isinstance(lower, float)
    _, lower = B.reachable_bounds(1, 0.1, beta, t_star)
    assert lower is B.Bound.NONE
    assert str(lower) == "none"


@given(st.floats(0.0, 1.0), st.floats(-1.0, 0.0), st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_calibrated_barrier_reproduces_bounds(alpha, beta, t, dt):
    for r in (-1, 0, 1):
        hi, lo = B.reachable_bounds(r, alpha, beta, t)
        c = B.calibrated_constant(r, alpha, t)
        assert B.barrier_value(B.BarrierParams(r, c), t) == pytest.approx(alpha, abs=1e-12)
        assert B.barrier_value(B.BarrierParams(r, c), 0.0) == pytest.approx(hi, abs=1e-12)
        if r == -1:
            hi2, lo2 = B.reachable_bounds(r, alpha, beta, t + dt)
            assert abs(hi2) <= abs(hi) + 1e-15
            assert abs(lo2) <= abs(lo) + 1e-15


def test_unnormalized_examples():
    upper, _ = B.unnormalized_bounds(-1, 0.0, -0.3, 3.0)
    assert upper == pytest.approx(0.5 * math.log(4.0))
    assert upper == pytest.approx(0.693147, abs=1e-6)
    t_star = math.exp(-0.4)
    assert t_star == pytest.approx(0.670320, abs=1e-6)
    _, lower = B.unnormalized_bounds(1, 0.1, -0.2, t_star)
    assert lower is B.Bound.BLOWN_UP
    _, lower = B.unnormalized_bounds(1, 0.1, -0.2, 0.99 * t_star)
    assert isinstance(lower, float)
    assert B.unnormalized_bounds(-1, 0.25, -0.25, 0.0) == pytest.approx((0.25, -0.25))
    with pytest.raises(B.BarrierError):
        B.unnormalized_bounds(0, 0.0, 0.0, 1.0)


def test_blowup_time():
    assert B.blowup_time_positive_curvature(0.0, 1.0) == 0.5
    assert B.blowup_time_positive_curvature(0.5, 1.0) == pytest.approx(math.e / 2)
    assert B.blowup_time_positive_curvature(0.5, 1.0) == pytest.approx(1.359141, abs=1e-6)
    assert B.blowup_time_positive_curvature(0.3, 2.0) == pytest.approx(
        0.5 * B.blowup_time_positive_curvature(0.3, 1.0))


def test_negative_curvature_growth():
    assert B.negative_curvature_lower_bound(1.0, 0.5) == pytest.approx(0.0)
    with pytest.raises(B.BarrierError):
        B.negative_curvature_lower_bound(1.0, 0.0)
