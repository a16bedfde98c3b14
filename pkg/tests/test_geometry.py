import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochricci.geometry import (GeometryError, TorusPoint, geodesic_batch, geodesic_point,
                                 min_image, mirror_map, reflect_batch, torus_geodesic, wrap)

coord = st.floats(min_value=0.0, max_value=1.0, exclude_max=True, allow_nan=False)
point = st.tuples(coord, coord)


@pytest.mark.parametrize("raw, expected", [
    ((1.3, -0.2), (0.3, 0.8)),
    ((0.0, 0.0), (0.0, 0.0)),
    ((2.0, 3.0), (0.0, 0.0)),
])
def test_wrap_examples(raw, expected):
    p = wrap(raw)
    assert (p.x1, p.x2) == pytest.approx(expected, abs=1e-12)


def test_wrap_never_returns_L():
    p = wrap((-1e-18, 0.0))
    assert 0.0 <= p.x1 < 1.0


def test_wrap_rejects_nonfinite():
    with pytest.raises(GeometryError, match="non-finite"):
        wrap((math.nan, 0.0))


def test_geodesic_examples():
    g = torus_geodesic((0, 0), (0.3, 0))
    assert g.distance == pytest.approx(0.3)
    assert g.direction == pytest.approx((1.0, 0.0))
    assert g.multiplicity == 1
    g = torus_geodesic((0, 0), (0.7, 0))
    assert g.distance == pytest.approx(0.3)
    assert g.direction == pytest.approx((-1.0, 0.0))
    g = torus_geodesic((0, 0), (0.5, 0.5))
    assert g.distance == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert g.multiplicity == 4


def _brute_distance(x, y, reach):
    return min(math.hypot(y[0] + i - x[0], y[1] + j - x[1])
               for i, j in itertools.product(range(-reach, reach + 1), repeat=2))


def test_nine_translates_suffice():
    gen = np.random.default_rng(0)
    pts = gen.random((10000, 4))
    for a, b, c, d in pts[:2000]:
        assert _brute_distance((a, b), (c, d), 1) == _brute_distance((a, b), (c, d), 2)
    rho, _, _ = geodesic_batch(pts[:, :2], pts[:, 2:])
    brute = [_brute_distance(p[:2], p[2:], 2) for p in pts]
    assert np.max(np.abs(rho - brute)) <= 1e-12


@settings(max_examples=200)
@given(point, point)
def test_distance_symmetric(x, y):
    assert torus_geodesic(x, y).distance == pytest.approx(torus_geodesic(y, x).distance, abs=1e-12)


def test_triangle_inequality():
    gen = np.random.default_rng(1)
    P = gen.random((1000, 3, 2))
    d = lambda a, b: geodesic_batch(a, b)[0]
    assert np.all(d(P[:, 0], P[:, 2]) <= d(P[:, 0], P[:, 1]) + d(P[:, 1], P[:, 2]) + 1e-12)


def test_mirror_map_examples():
    x, y = (0.1, 0.1), (0.3, 0.3)
    s = 1 / math.sqrt(2)
    assert mirror_map(x, y, (s, s)) == pytest.approx((-s, -s))
    assert mirror_map(x, y, (s, -s)) == pytest.approx((s, -s))
    assert mirror_map(x, y, (1.0, 0.0)) == pytest.approx((0.0, -1.0), abs=1e-15)


@settings(max_examples=200)
@given(point, point, st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
def test_mirror_map_involution(x, y, v):
    if torus_geodesic(x, y).distance < 1e-9:
        return
    once = mirror_map(x, y, v)
    twice = mirror_map(x, y, once)
    assert twice == pytest.approx(v, abs=1e-12)


def test_mirror_map_diagonal():
    with pytest.raises(GeometryError, match="diagonal"):
        mirror_map((0.2, 0.2), (0.2, 0.2), (1.0, 0.0))


def test_geodesic_point_examples():
    assert geodesic_point((0.1, 0.2), (0.3, 0.4), 0.0) == wrap((0.1, 0.2))
    p = geodesic_point((0, 0), (0.4, 0), 0.2)
    assert (p.x1, p.x2) == pytest.approx((0.2, 0.0))
    p = geodesic_point((0.9, 0), (0.1, 0), 0.1)
    assert torus_geodesic((p.x1, p.x2), (0.0, 0.0)).distance <= 1e-12


@settings(max_examples=200)
@given(point, point)
def test_geodesic_point_endpoints(x, y):
    g = torus_geodesic(x, y)
    end = geodesic_point(x, y, g.distance)
    d = torus_geodesic((end.x1, end.x2), y).distance
    assert d <= 1e-12
    start = geodesic_point(x, y, 0.0)
    assert torus_geodesic((start.x1, start.x2), x).distance <= 1e-12


def test_geodesic_point_range():
    with pytest.raises(GeometryError, match="arclength"):
        geodesic_point((0, 0), (0.2, 0), -0.1)


def test_batch_matches_scalar():
    gen = np.random.default_rng(2)
    X, Y = gen.random((200, 2)), gen.random((200, 2))
    rho, d, cut = geodesic_batch(X, Y)
    for k in range(200):
        g = torus_geodesic(tuple(X[k]), tuple(Y[k]))
        assert rho[k] == pytest.approx(g.distance, abs=1e-12)
        assert tuple(d[k]) == pytest.approx(g.direction, abs=1e-12)
    assert not cut.any()


def test_min_image_and_reflection():
    assert min_image(np.array([0.7, -0.7, 0.2])) == pytest.approx([-0.3, 0.3, 0.2])
    v = np.array([[1.0, 2.0]])
    d = np.array([[1.0, 0.0]])
    np.testing.assert_allclose(reflect_batch(v, d), [[-1.0, 2.0]])


def test_point_type():
    p = TorusPoint(0.25, 0.5)
    assert p.as_array() == pytest.approx([0.25, 0.5])
