"""Finite-difference solver for the normalized Ricci flow on the flat torus.

With a flat reference metric the conformal exponent obeys

    dp/dt = exp(-2p) * Lap(p).

Time stepping is explicit Euler applied to the area density u = exp(2p), for
which the equation reads du/dt = 2 Lap(p).  The discrete Laplacian sums to
zero over the torus, so the step conserves the quadrature of u (the surface
area) to rounding, and it is monotone under the same CFL restriction as the
plain update of p.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .geometry import TorusPoint, wrap
from .spline import cell_table, evaluate_patches, locate, spline_coefficients

CFL_FACTOR = 0.2
AREA_TOL = 1e-9


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class GridField:
    values: np.ndarray
    L: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise FlowError("grid field must be square")
        n = v.shape[0]
        if n < 8 or n & (n - 1):
            raise FlowError(f"grid size {n} must be a power of two and at least 8")
        if not np.all(np.isfinite(v)):
            raise FlowError("grid field has non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return self.L / self.n

    def nodes(self):
        """Coordinate arrays (X1, X2) with X1[i, j] = i*h and X2[i, j] = j*h."""
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    @classmethod
    def from_function(cls, fn, n: int, L: float = 1.0) -> "GridField":
        x = np.arange(n) * (L / n)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return cls(np.broadcast_to(fn(X1, X2), (n, n)).copy(), L)


@dataclass(frozen=True)
class SupNorms:
    p_inf: float
    grad_inf: float
    hess_inf: float


def _lap(v: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1)
            + np.roll(v, -1, 1) - 4.0 * v) / (h * h)


def laplacian(f: GridField) -> GridField:
    """Five-point periodic Laplacian."""
    return GridField(_lap(f.values, f.h), f.L)


def rhs(f: GridField, r: int = 0) -> GridField:
    """Right-hand side exp(-2p) Lap(p) of the flat normalized flow."""
    if r != 0:
        raise FlowError("field evolution implemented for flat reference only")
    return GridField(np.exp(-2.0 * f.values) * _lap(f.values, f.h), f.L)


def area(f: GridField) -> float:
    """Quadrature of exp(2p) over the torus."""
    return float(np.sum(np.exp(2.0 * f.values)) * f.h * f.h)


def normalize_area(p0: GridField) -> GridField:
    """Shift p0 by a constant so the conformal metric has area L^2."""
    shift = 0.5 * math.log(area(p0) / p0.L**2)
    return GridField(p0.values - shift, p0.L)


def cfl_limit(f: GridField) -> float:
    return CFL_FACTOR * f.h**2 * math.exp(2.0 * float(f.values.min()))


class FlowSolution:
    """Saved snapshots of a flow, with space-time interpolation.

    Snapshots are held as one (K, n, n) array.  Per-snapshot spline tables
    are built on first use; building is deterministic, so concurrent readers
    at worst repeat the work.
    """

    def __init__(self, times: Sequence[float], values: np.ndarray, dt_solver: float,
                 L: float = 1.0):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[0] != times.size:
            raise FlowError("need one snapshot per saved time")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise FlowError("snapshot times must start at 0 and increase")
        self.times = times
        self.values = values
        self.dt_solver = float(dt_solver)
        self.L = float(L)
        self._tables = {}

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def fields(self) -> List[GridField]:
        return [GridField(v, self.L) for v in self.values]

    def snapshot_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, self.final_time):
            raise FlowError(f"time {t} is not a saved snapshot")
        return k

    def field_at(self, t: float) -> GridField:
        return GridField(self.values[self.snapshot_index(t)], self.L)

    def table(self, k: int) -> np.ndarray:
        tab = self._tables.get(k)
        if tab is None:
            tab = cell_table(spline_coefficients(self.values[k]))
            self._tables[k] = tab
        return tab

    def bracket(self, t: float):
        """Snapshot indices and weight with p(t) = (1-w) p[k] + w p[k+1]."""
        T = self.final_time
        eps = 1e-12 * max(1.0, T)
        if not -eps <= t <= T + eps:
            raise FlowError(f"time {t} outside solved range [0, {T}]")
        t = min(max(t, 0.0), T)
        if self.times.size == 1:
            return 0, 0, 0.0
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), self.times.size - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, k + 1, w

    def interp(self, t: float, pts, what: str = "p"):
        """Vectorized interpolation at points of shape (N, 2)."""
        k0, k1, w = self.bracket(t)
        cell, f = locate(pts, self.n, self.L)
        Q = self.table(k0)[cell]
        if w > 0.0:
            Q = (1.0 - w) * Q + w * self.table(k1)[cell]
        return evaluate_patches(Q, f, self.h, what)


def zero_solution(T: float, n: int = 64, L: float = 1.0) -> FlowSolution:
    """The stationary flow p = 0 on [0, T]."""
    return FlowSolution([0.0, T], np.zeros((2, n, n)), T, L)


def solve(p0: GridField, T: float, dt: float, save_every: float) -> FlowSolution:
    """Integrate the flat normalized flow from area-normalized p0 up to T."""
    if T <= 0 or dt <= 0 or save_every <= 0:
        raise FlowError("T, dt and save_every must be positive")
    if abs(area(p0) / p0.L**2 - 1.0) > AREA_TOL:
        raise FlowError("area normalization violated")
    if dt > cfl_limit(p0) * (1.0 + 1e-12):
        raise FlowError("dt exceeds CFL bound")
    n_saves = int(round(T / save_every))
    if n_saves < 1 or abs(n_saves * save_every - T) > 1e-9 * T:
        raise FlowError("T must be a whole multiple of save_every")
    per_save = max(1, math.ceil(save_every / dt - 1e-9))
    step = save_every / per_save

    h = p0.h
    p = p0.values.copy()
    u = np.exp(2.0 * p)
    out = np.empty((n_saves + 1, p0.n, p0.n))
    out[0] = p
    for k in range(1, n_saves + 1):
        for _ in range(per_save):
            u += 2.0 * step * _lap(p, h)
            if not u.min() > 0.0:
                raise FlowError("solver diverged")
            p = 0.5 * np.log(u)
        if not np.all(np.isfinite(p)):
            raise FlowError("solver diverged")
        out[k] = p
    times = np.arange(n_saves + 1) * save_every
    return FlowSolution(times, out, step, p0.L)


def _as_points(x) -> np.ndarray:
    if isinstance(x, TorusPoint):
        return np.array([[x.x1, x.x2]])
    return np.atleast_2d(np.asarray(x, dtype=float))


def interp(sol: FlowSolution, t: float, x, what: str = "p"):
    """Interpolate p, its gradient or its Hessian at a single point."""
    out = sol.interp(t, _as_points(x), what)
    return float(out[0]) if what == "p" else out[0]


def sup_norms(sol: FlowSolution, t: float) -> SupNorms:
    """Grid sup norms of p, |grad p| and the Frobenius norm of Hess p."""
    v = sol.values[sol.snapshot_index(t)]
    h = sol.h
    E, W = np.roll(v, -1, 0), np.roll(v, 1, 0)
    N, S = np.roll(v, -1, 1), np.roll(v, 1, 1)
    g1, g2 = (E - W) / (2 * h), (N - S) / (2 * h)
    h11 = (E - 2 * v + W) / h**2
    h22 = (N - 2 * v + S) / h**2
    h12 = (np.roll(E, -1, 1) - np.roll(E, 1, 1) - np.roll(W, -1, 1)
           + np.roll(W, 1, 1)) / (4 * h**2)
    return SupNorms(
        float(np.abs(v).max()),
        float(np.sqrt(g1**2 + g2**2).max()),
        float(np.sqrt(h11**2 + h22**2 + 2 * h12**2).max()),
    )


def second_difference_quotient(sol: FlowSolution, t: float, z, xi, rho0: float) -> float:
    """Symmetric second difference of p along the geodesic through z with direction xi."""
    if not 0.0 < rho0 < sol.L / 4:
        raise FlowError("offset must lie in (0, L/4)")
    zp = z if isinstance(z, TorusPoint) else wrap(z, sol.L)
    pts = np.array([
        [zp.x1 - rho0 * xi[0], zp.x2 - rho0 * xi[1]],
        [zp.x1, zp.x2],
        [zp.x1 + rho0 * xi[0], zp.x2 + rho0 * xi[1]],
    ]) % sol.L
    vals = sol.interp(t, pts, "p")
    return float((vals[0] - 2.0 * vals[1] + vals[2]) / rho0**2)


# ---------------------------------------------------------------------------
# plain-text persistence


def save_field(f: GridField, path: str, t: float = 0.0) -> None:
    np.savetxt(path, f.values, delimiter=",", fmt="%.17g",
               header=f"n={f.n} L={f.L:g} t={t:.17g}", comments="# ")


def load_field(path: str):
    """Read a grid CSV; returns (GridField, t)."""
    with open(path) as fh:
        header = fh.readline()
    if not header.startswith("#"):
        raise FlowError(f"{path}: missing '# n=... L=... t=...' header")
    meta = dict(tok.split("=", 1) for tok in header[1:].split())
    values = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    n = int(meta["n"])
    if values.shape != (n, n):
        raise FlowError(f"{path}: header says n={n} but found {values.shape}")
    return GridField(values, float(meta["L"])), float(meta["t"])


def save_solution(sol: FlowSolution, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    files = []
    for k, t in enumerate(sol.times):
        name = f"p_{k:05d}.csv"
        save_field(GridField(sol.values[k], sol.L), os.path.join(directory, name), t)
        files.append(name)
    manifest = {"times": sol.times.tolist(), "files": files, "dt_solver": sol.dt_solver,
                "n": sol.n, "L": sol.L}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_solution(directory: str) -> FlowSolution:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    values = [load_field(os.path.join(directory, name))[0].values for name in manifest["files"]]
    return FlowSolution(manifest["times"], np.stack(values), manifest["dt_solver"], manifest["L"])


# ---------------------------------------------------------------------------
# initial data

PRESETS = ("zero", "sin1", "sin2d")


def preset_field(name: str, n: int = 64, L: float = 1.0, amplitude: float = 0.2) -> GridField:
    """Area-normalized initial data used by the experiments."""
    k = 2.0 * np.pi / L
    if name == "zero":
        return GridField(np.zeros((n, n)), L)
    if name == "sin1":
        f = GridField.from_function(lambda a, b: amplitude * np.sin(k * a), n, L)
    elif name == "sin2d":
        f = GridField.from_function(lambda a, b: amplitude * np.sin(k * a) * np.sin(k * b), n, L)
    else:
        raise FlowError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return normalize_area(f)
