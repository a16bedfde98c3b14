"""Mirror coupling of two time-changed Brownian particles on the flat torus.

Particle x moves by a * dW and particle y by b * R(dW), where R reflects
across the hyperplane orthogonal to the minimal geodesic from x to y and
a = sqrt(2) exp(-p(x)), b = sqrt(2) exp(-p(y)) are the local speeds under the
flow at the reversed time.  The distance then moves by (a + b) dB plus the
drift (a - b)^2 / (2 rho).  The particles are declared coupled once their
distance falls below ``2 sqrt(dt)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from .analysis import MCEstimate, mc_reduce
from .flow_pde import FlowSolution
from .geometry import (TorusPoint, geodesic_batch, reflect_batch, torus_geodesic, wrap,
                       wrap_batch)
from .rng import RngStream, concat, run_blocks

SQRT2 = math.sqrt(2.0)


class CouplingError(ValueError):
    pass


def coupling_threshold(dt: float) -> float:
    return 2.0 * math.sqrt(dt)


def speed(sol: Optional[FlowSolution], t_eval: float, pts: np.ndarray) -> np.ndarray:
    """Time-change factor sqrt(2) exp(-p) at points (N, 2); sol=None means p = 0."""
    if sol is None:
        return np.full(len(pts), SQRT2)
    return SQRT2 * np.exp(-sol.interp(t_eval, pts, "p"))


def distance_drift(a, b, rho):
    """Drift of the coupled distance on a flat surface."""
    return 0.5 * (a - b) ** 2 / rho


def drift_hyperbolic(a, b, rho):
    """Drift of the coupled distance on a surface of curvature -1."""
    return 0.5 * ((a - b) ** 2 / np.tanh(rho) + 2.0 * a * b * np.tanh(rho / 2.0))


# ---------------------------------------------------------------------------
# single-path stepping


@dataclass(frozen=True)
class CouplingState:
    tau: float
    x: TorusPoint
    y: TorusPoint
    rho: float
    coupled: bool = False

    @classmethod
    def start(cls, x, y, L: float = 1.0) -> "CouplingState":
        x = x if isinstance(x, TorusPoint) else wrap(x, L)
        y = y if isinstance(y, TorusPoint) else wrap(y, L)
        return cls(0.0, x, y, torus_geodesic(x, y).distance, False)


def mirror_step(state: CouplingState, sol: Optional[FlowSolution], t: float, dt: float,
                rng) -> CouplingState:
    """Advance one Euler step of the mirror coupling."""
    if state.coupled:
        return replace(state, tau=state.tau + dt)
    if dt > 1e-4:
        raise CouplingError("dt must not exceed 1e-4")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    L = state.x.L
    X = np.array([[state.x.x1, state.x.x2]])
    Y = np.array([[state.y.x1, state.y.x2]])
    dW = gen.normal(size=(1, 2)) * math.sqrt(dt)
    t_eval = max(t - state.tau, 0.0)
    _, direction, _ = geodesic_batch(X, Y, L)
    a, b = speed(sol, t_eval, X), speed(sol, t_eval, Y)
    X = wrap_batch(X + a[:, None] * dW, L)
    Y = wrap_batch(Y + b[:, None] * reflect_batch(dW, direction), L)
    x, y = TorusPoint(*X[0], L), TorusPoint(*Y[0], L)
    rho = torus_geodesic(x, y).distance
    if rho < coupling_threshold(dt):
        return CouplingState(state.tau + dt, x, x, 0.0, True)
    return CouplingState(state.tau + dt, x, y, rho, False)


# ---------------------------------------------------------------------------
# batched runs


@dataclass
class _CoupledRun:
    coupling_time: np.ndarray  # inf where never coupled
    x_shadow: np.ndarray
    y_shadow: np.ndarray


def run_mirror_batch(sol: Optional[FlowSolution], t: float, X0: np.ndarray, Y0: np.ndarray,
                     horizon: float, dt: float, gen: np.random.Generator,
                     L: float = 1.0, keep_moving: bool = False) -> _CoupledRun:
    """Simulate mirror-coupled pairs up to ``horizon``; returns coupling times.

    Unwrapped shadow copies of both particles are carried along.  Coupled
    pairs are frozen unless ``keep_moving`` is set, in which case they move
    on together as a single particle.
    """
    if horizon > t + 1e-12:
        raise CouplingError("horizon exceeds the flow time")
    X = np.array(X0, dtype=float)
    Y = np.array(Y0, dtype=float)
    Xs, Ys = X.copy(), Y.copy()
    N = len(X)
    sigma = np.full(N, np.inf)
    thresh = coupling_threshold(dt)
    rho, _, _ = geodesic_batch(X, Y, L)
    sigma[rho < thresh] = 0.0
    active = np.flatnonzero(rho >= thresh)
    n_steps = max(1, math.ceil(horizon / dt - 1e-9))
    for k in range(n_steps):
        tau = k * dt
        dW = gen.normal(size=(N, 2)) * math.sqrt(dt)
        t_eval = max(t - tau, 0.0)
        if keep_moving:
            done = np.flatnonzero(np.isfinite(sigma))
            if done.size:
                dx = speed(sol, t_eval, X[done])[:, None] * dW[done]
                X[done] = wrap_batch(X[done] + dx, L)
                Y[done] = X[done]
                Xs[done] += dx
                Ys[done] += dx
        if active.size == 0:
            continue
        xa, ya, w = X[active], Y[active], dW[active]
        _, direction, _ = geodesic_batch(xa, ya, L)
        a, b = speed(sol, t_eval, xa), speed(sol, t_eval, ya)
        dx = a[:, None] * w
        dy = b[:, None] * reflect_batch(w, direction)
        X[active] = wrap_batch(xa + dx, L)
        Y[active] = wrap_batch(ya + dy, L)
        Xs[active] += dx
        Ys[active] += dy
        rho, _, _ = geodesic_batch(X[active], Y[active], L)
        hit = rho < thresh
        if hit.any():
            idx = active[hit]
            sigma[idx] = (k + 1) * dt
            Y[idx] = X[idx]
            active = active[~hit]
    return _CoupledRun(sigma, Xs, Ys)


@dataclass(frozen=True)
class SurvivalCurve:
    s_grid: np.ndarray
    survival: np.ndarray
    std_error: np.ndarray
    n_paths: int


def survival_from_times(times: np.ndarray, s_grid: Sequence[float]) -> SurvivalCurve:
    s = np.asarray(s_grid, dtype=float)
    surv = np.array([np.mean(times > v) for v in s])
    se = np.sqrt(surv * (1.0 - surv) / max(times.size - 1, 1))
    return SurvivalCurve(s, surv, se, int(times.size))


def _point(p) -> np.ndarray:
    if isinstance(p, TorusPoint):
        return np.array([p.x1, p.x2])
    return np.asarray(p, dtype=float).reshape(2)


def coupling_times(sol, t, x0, y0, M, dt, seed, horizon, threads: int = 1) -> np.ndarray:
    x, y = _point(x0), _point(y0)
    if torus_geodesic(tuple(x), tuple(y)).distance == 0.0:
        raise CouplingError("starting points must differ")
    L = 1.0 if sol is None else sol.L

    def block(b, size, gen):
        return run_mirror_batch(sol, t, np.tile(x, (size, 1)), np.tile(y, (size, 1)),
                                horizon, dt, gen, L).coupling_time

    return concat(run_blocks(block, M, seed, threads))


def coupling_survival(sol: Optional[FlowSolution], t: float, x0, y0, M: int, dt: float, seed: int,
                      s_grid: Sequence[float], threads: int = 1) -> SurvivalCurve:
    """Empirical P(s < coupling time) on ``s_grid`` from M coupled pairs."""
    times = coupling_times(sol, t, x0, y0, M, dt, seed, max(s_grid), threads)
    return survival_from_times(times, s_grid)


# ---------------------------------------------------------------------------
# distance drift diagnostic


@dataclass(frozen=True)
class DriftCheck:
    bin_centers: np.ndarray
    empirical: np.ndarray
    std_error: np.ndarray
    predicted: np.ndarray
    counts: np.ndarray
    max_gap_over_ci: float


def distance_drift_check(sol: Optional[FlowSolution], t: float, rho0: float, M: int, dt: float,
                         seed: int, n_bins: int = 8, min_count: int = 50) -> DriftCheck:
    """Binned one-step drift of the coupled distance against the flat formula.

    M independent pairs are drawn with x uniform, a uniform direction and
    distance uniform on [rho0/2, 3 rho0/2]; each takes one mirror step.
    Pairs on the cut locus are dropped.  The martingale part
    -(a + b) <dW, direction> has mean zero exactly and is subtracted from each
    increment, so the bin means resolve the O(1) drift instead of O(dt^-1/2)
    noise.  Standard errors are floored at the rounding resolution of the
    increments.
    """
    if not 0.05 < rho0 < 0.3:
        raise CouplingError("rho0 must lie in (0.05, 0.3)")
    L = 1.0 if sol is None else sol.L
    gen = RngStream(seed, 0).generator()
    X = gen.random((M, 2)) * L
    ang = gen.random(M) * 2.0 * np.pi
    r = rho0 * (0.5 + gen.random(M))
    Y = wrap_batch(X + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], -1), L)
    rho, direction, cut = geodesic_batch(X, Y, L)
    dW = gen.normal(size=(M, 2)) * math.sqrt(dt)
    a, b = speed(sol, t, X), speed(sol, t, Y)
    X1 = wrap_batch(X + a[:, None] * dW, L)
    Y1 = wrap_batch(Y + b[:, None] * reflect_batch(dW, direction), L)
    rho1, _, _ = geodesic_batch(X1, Y1, L)
    keep = ~cut
    martingale = -(a + b) * np.einsum("ij,ij->i", dW, direction)
    rate = (rho1 - rho - martingale)[keep] / dt
    floor = 64.0 * np.finfo(float).eps * 1.5 * rho0 / dt
    pred = distance_drift(a, b, rho)[keep]
    rho = rho[keep]

    edges = np.linspace(0.5 * rho0, 1.5 * rho0, n_bins + 1)
    which = np.clip(np.digitize(rho, edges) - 1, 0, n_bins - 1)
    centers, emp, se, prd, cnt = [], [], [], [], []
    for k in range(n_bins):
        sel = which == k
        if sel.sum() < min_count:
            continue
        est = mc_reduce(rate[sel])
        centers.append(0.5 * (edges[k] + edges[k + 1]))
        emp.append(est.mean)
        se.append(math.hypot(est.std_error, floor))
        prd.append(pred[sel].mean())
        cnt.append(int(sel.sum()))
    emp, se, prd = np.array(emp), np.array(se), np.array(prd)
    gap = float(np.max(np.abs(emp - prd) / se)) if emp.size else math.nan
    return DriftCheck(np.array(centers), emp, se, prd, np.array(cnt), gap)


# ---------------------------------------------------------------------------
# hitting-time comparison formulas


def bessel_survival_bound(delta: float, D: float, s: float) -> float:
    """P(s < T0) for a Bessel process of dimension delta whose T0 ~ D / Gamma(1 - delta/2).

    Evaluates the regularized lower incomplete gamma ratio by adaptive
    quadrature after the substitution y = w^(1/k), which removes the
    endpoint singularity.
    """
    if not 0.0 < delta < 2.0:
        raise CouplingError("Bessel dimension must lie in (0, 2)")
    if D <= 0 or s <= 0:
        raise CouplingError("D and s must be positive")
    if math.isinf(s):
        return 0.0
    k = 1.0 - 0.5 * delta
    X = D / s
    # exp(-y) is below 1e-300 past y = 700
    upper = min(X, 700.0) ** k
    val, _ = integrate.quad(lambda w: math.exp(-(w ** (1.0 / k))), 0.0, upper,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return min(1.0, val / (k * math.gamma(k)))


def gaussian_hit_tail(rho0: float, c: float) -> float:
    """P(c < first hitting time of -rho0) for standard Brownian motion."""
    if rho0 <= 0 or c <= 0:
        raise CouplingError("rho0 and c must be positive")
    if math.isinf(c):
        return 0.0
    return math.erf(rho0 / math.sqrt(2.0 * c))


def speed_bounds(sol: Optional[FlowSolution], t: float) -> Tuple[float, float]:
    """Bounds A <= a <= B on the time-change factor over the flow up to t."""
    if sol is None:
        return SQRT2, SQRT2
    upto = sol.values[sol.times <= t + 1e-12]
    return SQRT2 * math.exp(-float(upto.max())), SQRT2 * math.exp(-float(upto.min()))


def comparison_parameters(sol: Optional[FlowSolution], t: float, rho0: float) -> Tuple[float, float]:
    """Bessel dimension and constant used to report the survival bound.

    delta = 1 + ((B - A)/(B + A))^2 bounds the drift ratio, and the slowest
    clock (2A)^2 turns the Bessel constant rho0^2/2 into D = rho0^2 / (8 A^2).
    """
    A, B = speed_bounds(sol, t)
    return 1.0 + ((B - A) / (B + A)) ** 2, rho0**2 / (8.0 * A * A)


# ---------------------------------------------------------------------------
# oscillation contraction


@dataclass(frozen=True)
class OscillationCheck:
    osc_t: float
    osc_prev: float
    survival: float
    survival_se: float
    bound: float
    bound_se: float
    margin: float
    passed: bool


def grid_oscillation(sol: FlowSolution, t: float) -> float:
    v = sol.values[sol.snapshot_index(t)]
    return float(v.max() - v.min())


def oscillation_contraction_check(sol: FlowSolution, t: float, s: float, M: int, dt: float,
                                  seed: int, threads: int = 1) -> OscillationCheck:
    """Check osc(t) <= P(s < coupling time) * osc(t - s) by Monte Carlo.

    The coupled pair starts at the grid argmax and argmin of the flow at t.
    ``margin`` is bound + 3 SE - osc(t); the check passes when it is >= 0.
    """
    if not 0.0 < s < t:
        raise CouplingError("need 0 < s < t")
    osc_t, osc_prev = grid_oscillation(sol, t), grid_oscillation(sol, t - s)
    v = sol.values[sol.snapshot_index(t)]
    if osc_t == 0.0:
        return OscillationCheck(0.0, osc_prev, 0.0, 0.0, 0.0, 0.0, 0.0, True)
    h = sol.h
    imax = np.unravel_index(np.argmax(v), v.shape)
    imin = np.unravel_index(np.argmin(v), v.shape)
    x0 = np.array(imax, dtype=float) * h
    y0 = np.array(imin, dtype=float) * h
    times = coupling_times(sol, t, x0, y0, M, dt, seed, s, threads)
    surv = survival_from_times(times, [s])
    P, se = float(surv.survival[0]), float(surv.std_error[0])
    bound, bound_se = P * osc_prev, se * osc_prev
    margin = bound + 3.0 * bound_se - osc_t
    return OscillationCheck(osc_t, osc_prev, P, se, bound, bound_se, margin, margin >= 0.0)


def shadow_variance(sol, t, x0, y0, M, dt, seed, horizon) -> Tuple[MCEstimate, MCEstimate]:
    """Mean squared unwrapped displacement of each particle after ``horizon``."""
    x, y = _point(x0), _point(y0)
    gen = RngStream(seed, 0).generator()
    run = run_mirror_batch(sol, t, np.tile(x, (M, 1)), np.tile(y, (M, 1)), horizon, dt, gen,
                           keep_moving=True)
    dx = np.sum((run.x_shadow - x) ** 2, axis=1)
    dy = np.sum((run.y_shadow - y) ** 2, axis=1)
    return mc_reduce(dx), mc_reduce(dy)
