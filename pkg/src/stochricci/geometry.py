"""Flat square torus R^2 / (L Z)^2: points, minimal geodesics, mirror map.

Scalar helpers work on :class:`TorusPoint` and enumerate the nine nearest
lattice translates explicitly.  The ``*_batch`` helpers do the same job on
``(N, 2)`` arrays with the minimum-image rule, which picks the same translate
because the nearest-translate problem separates by coordinate on a square
lattice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

TIE_TOL = 1e-12


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class TorusPoint:
    x1: float
    x2: float
    L: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


@dataclass(frozen=True)
class GeodesicData:
    distance: float
    direction: Tuple[float, float]
    multiplicity: int


def _reduce(v: float, L: float) -> float:
    out = v % L
    # a tiny negative input rounds up to exactly L
    return 0.0 if out >= L else out


def wrap(raw, L: float = 1.0) -> TorusPoint:
    """Reduce a coordinate pair into the fundamental square [0, L)^2."""
    if L <= 0:
        raise GeometryError("torus side must be positive")
    a, b = float(raw[0]), float(raw[1])
    if not (math.isfinite(a) and math.isfinite(b)):
        raise GeometryError("non-finite coordinate")
    return TorusPoint(_reduce(a, L), _reduce(b, L), L)


def _as_point(p, L: float) -> TorusPoint:
    if isinstance(p, TorusPoint):
        return p
    return wrap(p, L)


def translates(x: TorusPoint, y: TorusPoint, reach: int = 1):
    """Yield ``((i, j), displacement)`` from x to y + (i, j)L in lexicographic order."""
    L = x.L
    for i in range(-reach, reach + 1):
        for j in range(-reach, reach + 1):
            yield (i, j), (y.x1 + i * L - x.x1, y.x2 + j * L - x.x2)


def torus_geodesic(x, y, L: float = 1.0, reach: int = 1) -> GeodesicData:
    """Minimal geodesic from x to y by brute-force translate enumeration.

    Ties within ``TIE_TOL`` are counted in ``multiplicity``; the direction of
    the lexicographically first minimizing translate is returned.  For x = y
    the direction is the zero vector.
    """
    x, y = _as_point(x, L), _as_point(y, L)
    cands = [(math.hypot(d1, d2), ij, (d1, d2)) for ij, (d1, d2) in translates(x, y, reach)]
    dmin = min(c[0] for c in cands)
    ties = [c for c in cands if c[0] <= dmin + TIE_TOL]
    dist, _, (d1, d2) = ties[0]
    if dist == 0.0:
        direction = (0.0, 0.0)
    else:
        direction = (d1 / dist, d2 / dist)
    return GeodesicData(dist, direction, len(ties))


def mirror_map(x, y, v, L: float = 1.0) -> Tuple[float, float]:
    """Reflect v across the hyperplane orthogonal to the geodesic from x to y."""
    g = torus_geodesic(x, y, L)
    if g.distance == 0.0:
        raise GeometryError("mirror map undefined on diagonal")
    e1, e2 = g.direction
    proj = v[0] * e1 + v[1] * e2
    return (v[0] - 2.0 * proj * e1, v[1] - 2.0 * proj * e2)


def geodesic_point(x, y, s: float, L: float = 1.0) -> TorusPoint:
    """Point at arclength s along the minimal geodesic from x to y."""
    x, y = _as_point(x, L), _as_point(y, L)
    g = torus_geodesic(x, y)
    if s < -TIE_TOL or s > g.distance + TIE_TOL:
        raise GeometryError("arclength out of range")
    if s >= g.distance:
        return y
    e1, e2 = g.direction
    return wrap((x.x1 + s * e1, x.x2 + s * e2), x.L)


# ---------------------------------------------------------------------------
# array versions used by the simulators


def wrap_batch(pts: np.ndarray, L: float = 1.0) -> np.ndarray:
    out = np.mod(pts, L)
    out[out >= L] = 0.0
    return out


def min_image(diff: np.ndarray, L: float = 1.0) -> np.ndarray:
    """Nearest translate of each displacement, components in [-L/2, L/2).

    Exact half-way ties go to the negative side, matching the lexicographic
    tie-break of :func:`torus_geodesic`.
    """
    return diff - L * np.floor(diff / L + 0.5)


def geodesic_batch(x: np.ndarray, y: np.ndarray, L: float = 1.0):
    """Distances, unit directions and cut-locus flags for arrays of pairs.

    Returns ``(rho, direction, on_cut)``; ``direction`` rows are zero where
    ``rho == 0``.
    """
    d = min_image(y - x, L)
    rho = np.hypot(d[..., 0], d[..., 1])
    safe = np.where(rho > 0.0, rho, 1.0)
    direction = d / safe[..., None]
    direction[rho == 0.0] = 0.0
    on_cut = np.any(np.abs(np.abs(d) - 0.5 * L) <= TIE_TOL, axis=-1)
    return rho, direction, on_cut


def reflect_batch(v: np.ndarray, direction: np.ndarray) -> np.ndarray:
    proj = np.einsum("...i,...i->...", v, direction)
    return v - 2.0 * proj[..., None] * direction
