"""Three-particle coupling: two mirror-coupled endpoints and a middle particle.

The endpoints x, y move with a common time change a (the flow speed at their
geodesic midpoint).  The middle particle z sits at arclength rho1 from x on
the minimal geodesic, and rho2 = rho - rho1 is its distance to y.  Both
distances are driven by

    d rho1 = -a <dW, g> + alpha dW3 + beta(rho1) dt
    d rho2 = -a <dW, g> - alpha dW3 + beta(rho2) dt

where g is the unit geodesic direction, alpha = a w(rho1) and the weight w
solves w'' + r w = 0 with w(0) = w(l) = 1 on a geodesic of length l.  These
choices keep rho1 + rho2 equal to the endpoint distance, make the laws of
rho1 and rho2 agree, and turn phi(z) into a martingale once compensated by
alpha^2/2 Lap(phi) + theta <grad phi, g>.

``mode="torus"`` runs the endpoints on the flat torus (r = 0 only).
``mode="scalar"`` tracks only (rho, rho1, rho2) with the curvature-r
distance drift, which is how the r = -1 case is exercised.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import AnalysisError, ks_two_sample, mc_reduce
from .coupling import drift_hyperbolic, speed
from .flow_pde import FlowSolution
from .geometry import (TorusPoint, geodesic_batch, geodesic_point, reflect_batch,
                       torus_geodesic, wrap, wrap_batch)
from .rng import RngStream, run_blocks

SQRT2 = math.sqrt(2.0)
RANGE_TOL = 1e-12

RUNNING, HIT_ZERO, HIT_R0, HORIZON = 0, 1, 2, 3
REASONS = {RUNNING: "running", HIT_ZERO: "hit_zero", HIT_R0: "hit_r0", HORIZON: "horizon"}


class TripleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Jacobi weights


@dataclass(frozen=True)
class JacobiSpec:
    r: int
    l: float

    def __post_init__(self):
        if self.r not in (-1, 0, 1):
            raise TripleError(f"curvature sign must be -1, 0 or 1, got {self.r}")
        if not self.l > 0:
            raise TripleError("geodesic length must be positive")
        if self.r == 1 and self.l >= math.pi:
            raise TripleError("r = 1 needs l < pi")


def _w(r: int, l, s):
    if r == 0:
        return np.ones_like(np.asarray(s * l, dtype=float))
    u = 0.5 * (l - 2.0 * s)
    if r == -1:
        return np.cosh(u) / np.cosh(0.5 * l)
    return np.cos(u) / np.cos(0.5 * l)


def _wdot(r: int, l, s):
    if r == 0:
        return np.zeros_like(np.asarray(s * l, dtype=float))
    u = 0.5 * (l - 2.0 * s)
    if r == -1:
        return -np.sinh(u) / np.cosh(0.5 * l)
    return np.sin(u) / np.cos(0.5 * l)


def _w2_integral(r: int, l, x):
    """Integral of w^2 over [0, x]."""
    if r == 0:
        return np.asarray(x, dtype=float) * 1.0
    if r == -1:
        return (0.5 * x + 0.25 * (np.sinh(l) - np.sinh(l - 2.0 * x))) / np.cosh(0.5 * l) ** 2
    return (0.5 * x + 0.25 * (np.sin(l) - np.sin(l - 2.0 * x))) / np.cos(0.5 * l) ** 2


def _beta(r: int, l, a, s):
    return 0.5 * a * a * (_w(r, l, s) * _wdot(r, l, s) - _wdot(r, l, 0.0))


def _theta(r: int, l, a, s):
    rest = s / l * _wdot(r, l, 0.0)
    if r != 0:
        rest = rest + r * (_w2_integral(r, l, s) - s / l * _w2_integral(r, l, l))
    return _beta(r, l, a, s) + a * a * rest


def _check_range(spec: JacobiSpec, s: float) -> None:
    if s < -RANGE_TOL or s > spec.l + RANGE_TOL:
        raise TripleError(f"arclength {s} out of range [0, {spec.l}]")


def jacobi_w(spec: JacobiSpec, s: float) -> float:
    _check_range(spec, s)
    return float(_w(spec.r, spec.l, s))


def jacobi_w_prime(spec: JacobiSpec, s: float) -> float:
    _check_range(spec, s)
    return float(_wdot(spec.r, spec.l, s))


def w_squared_integral(spec: JacobiSpec, s: float) -> float:
    _check_range(spec, s)
    return float(_w2_integral(spec.r, spec.l, s))


def beta_drift(spec: JacobiSpec, a: float, rho1: float) -> float:
    _check_range(spec, rho1)
    return float(_beta(spec.r, spec.l, a, rho1))


def beta_tilde_drift(spec: JacobiSpec, a: float, rho2: float) -> float:
    _check_range(spec, rho2)
    return float(_beta(spec.r, spec.l, a, rho2))


def theta_drift(spec: JacobiSpec, a: float, rho1: float) -> float:
    _check_range(spec, rho1)
    return float(_theta(spec.r, spec.l, a, rho1))


# ---------------------------------------------------------------------------
# one step on arrays


@dataclass
class Increments:
    d_rho1: np.ndarray
    d_rho2: np.ndarray
    alpha: np.ndarray
    noise3_rho1: np.ndarray
    noise3_rho2: np.ndarray


def distance_increments(r: int, a, rho, rho1, rho2, along, dW3, dt: float,
                        negate_beta_tilde: bool = False) -> Increments:
    """Euler increments of (rho1, rho2) from the along-geodesic noise
    ``along`` = <dW, g> and the third channel ``dW3``.
    """
    alpha = a * _w(r, rho, rho1)
    beta = _beta(r, rho, a, rho1)
    beta_t = _beta(r, rho, a, rho2)
    if negate_beta_tilde:
        beta_t = -beta_t
    n1 = alpha * dW3
    n2 = -alpha * dW3
    return Increments(-a * along + n1 + beta * dt, -a * along + n2 + beta_t * dt, alpha, n1, n2)


def scalar_distance_drift(r: int, a, rho):
    if r == 0:
        return np.zeros_like(rho)
    if r == -1:
        return drift_hyperbolic(a, a, rho)
    raise TripleError("scalar mode supports r = 0 and r = -1")


# ---------------------------------------------------------------------------
# batched simulation


@dataclass(frozen=True)
class TestFunction2D:
    """Periodic phi(x) with gradient and Laplacian, all on (N, 2) arrays."""

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    lap: Callable[[np.ndarray], np.ndarray]


def sine_x1(k: float = 2.0 * math.pi) -> TestFunction2D:
    """phi(x) = sin(k x1)."""
    return TestFunction2D(
        lambda X: np.sin(k * X[:, 0]),
        lambda X: np.stack([k * np.cos(k * X[:, 0]), np.zeros(len(X))], axis=-1),
        lambda X: -k * k * np.sin(k * X[:, 0]),
    )


@dataclass
class TripleRun:
    rho: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    reason: np.ndarray
    stop_time: np.ndarray
    max_sum_dev: np.ndarray
    checkpoint_rho1: np.ndarray
    checkpoint_rho2: np.ndarray
    checkpoint_alive: np.ndarray
    checkpoint_phi: Optional[np.ndarray] = None
    checkpoint_comp: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TripleConfig:
    r: int = 0
    mode: str = "torus"
    r0: float = 0.2
    a_const: float = SQRT2
    negate_beta_tilde: bool = False

    def __post_init__(self):
        if self.mode not in ("torus", "scalar"):
            raise TripleError(f"mode must be 'torus' or 'scalar', got {self.mode!r}")
        if self.mode == "torus" and self.r != 0:
            raise TripleError("torus mode is flat; use scalar mode for r = -1")
        if self.mode == "scalar" and self.r not in (0, -1):
            raise TripleError("scalar mode supports r = 0 and r = -1")
        if self.mode == "torus" and not 0 < self.r0 < 0.5:
            raise TripleError("stop radius must lie in (0, L/2)")


def run_triple_batch(sol: Optional[FlowSolution], t: float, X0: np.ndarray, Y0: np.ndarray,
                     rho1_0: np.ndarray, horizon: float, dt: float, gen: np.random.Generator,
                     cfg: TripleConfig, checkpoint_steps: Sequence[int] = (),
                     phi: Optional[TestFunction2D] = None, L: float = 1.0,
                     rho0_scalar: Optional[float] = None, tau0: float = 0.0) -> TripleRun:
    """Simulate N triple-coupled paths until stopping or ``horizon``.

    In scalar mode ``X0``/``Y0`` are ignored and ``rho0_scalar`` sets the
    endpoint distance.  When ``phi`` is given, phi(z) and its compensated
    version are stored at the checkpoints, frozen after stopping.  The flow
    is read at time t - tau with tau starting from ``tau0``.
    """
    torus = cfg.mode == "torus"
    N = len(rho1_0)
    if torus:
        X = np.array(X0, dtype=float)
        Y = np.array(Y0, dtype=float)
        rho, g, _ = geodesic_batch(X, Y, L)
    else:
        rho = np.full(N, float(rho0_scalar))
    R1 = np.array(rho1_0, dtype=float)
    R2 = rho - R1
    reason = np.zeros(N, dtype=np.int8)
    stop_time = np.full(N, np.inf)
    max_dev = np.zeros(N)
    comp = np.zeros(N)
    want = {s: i for i, s in enumerate(checkpoint_steps)}
    K = len(checkpoint_steps)
    cp1, cp2 = np.empty((K, N)), np.empty((K, N))
    cpa = np.zeros((K, N), dtype=bool)
    cpphi = np.empty((K, N)) if phi is not None else None
    cpcomp = np.empty((K, N)) if phi is not None else None

    def z_of(idx):
        s = np.clip(R1[idx], 0.0, rho[idx])
        return wrap_batch(X[idx] + s[:, None] * g[idx], L)

    def store(k):
        j = want[k]
        alive = reason == RUNNING
        cp1[j], cp2[j], cpa[j] = R1, R2, alive
        if phi is not None:
            live = np.flatnonzero(alive)
            if live.size:
                v = phi.value(z_of(live))
                cpphi[j, live] = v
                cpcomp[j, live] = v - comp[live]
            dead = np.flatnonzero(~alive)
            if dead.size:
                cpphi[j, dead] = frozen_phi[dead]
                cpcomp[j, dead] = frozen_phi[dead] - comp[dead]

    frozen_phi = np.zeros(N)
    if phi is not None and not torus:
        raise TripleError("the middle particle needs torus mode")
    if 0 in want:
        store(0)
    n_steps = max(1, math.ceil(horizon / dt - 1e-9))
    for k in range(n_steps):
        tau = tau0 + k * dt
        dW = gen.normal(size=(N, 3)) * math.sqrt(dt)
        live = np.flatnonzero(reason == RUNNING)
        if live.size:
            l, r1, r2 = rho[live], R1[live], R2[live]
            if torus:
                gl = g[live]
                mid = wrap_batch(X[live] + 0.5 * l[:, None] * gl, L)
                a = speed(sol, max(t - tau, 0.0), mid)
                along = np.einsum("ij,ij->i", dW[live, :2], gl)
            else:
                a = np.full(live.size, cfg.a_const)
                along = dW[live, 0]
            inc = distance_increments(cfg.r, a, l, r1, r2, along, dW[live, 2], dt,
                                      cfg.negate_beta_tilde)
            if phi is not None:
                z = z_of(live)
                theta = _theta(cfg.r, l, a, r1)
                drift = 0.5 * inc.alpha**2 * phi.lap(z) + theta * np.einsum(
                    "ij,ij->i", phi.grad(z), gl)
                comp[live] += drift * dt
            if torus:
                X[live] = wrap_batch(X[live] + a[:, None] * dW[live, :2], L)
                Y[live] = wrap_batch(Y[live] + a[:, None] * reflect_batch(dW[live, :2], gl), L)
                rho_new, g_new, _ = geodesic_batch(X[live], Y[live], L)
                g[live] = g_new
            else:
                rho_new = l - 2.0 * a * along + scalar_distance_drift(cfg.r, a, l) * dt
            rho[live] = rho_new
            R1[live] = r1 + inc.d_rho1
            R2[live] = r2 + inc.d_rho2
            hz = (R1[live] <= 0.0) | (R2[live] <= 0.0)
            hr = ~hz & ((R1[live] >= cfg.r0) | (R2[live] >= cfg.r0))
            running_after = ~(hz | hr)
            dev = np.abs(R1[live] + R2[live] - rho_new)
            max_dev[live[running_after]] = np.maximum(max_dev[live[running_after]],
                                                      dev[running_after])
            stopped = live[~running_after]
            if stopped.size:
                reason[live[hz]] = HIT_ZERO
                reason[live[hr]] = HIT_R0
                stop_time[stopped] = tau + dt
                if phi is not None:
                    frozen_phi[stopped] = phi.value(z_of(stopped))
        if k + 1 in want:
            store(k + 1)
    reason[reason == RUNNING] = HORIZON
    return TripleRun(rho, R1, R2, reason, stop_time, max_dev, cp1, cp2, cpa, cpphi, cpcomp,
                     X if torus else None, Y if torus else None)


# ---------------------------------------------------------------------------
# single-path interface


@dataclass(frozen=True)
class TripleState:
    tau: float
    x: Optional[TorusPoint]
    y: Optional[TorusPoint]
    rho1: float
    rho2: float
    stopped: bool = False
    reason: str = "running"
    rho: Optional[float] = None

    @classmethod
    def start(cls, x, y, rho1: Optional[float] = None, L: float = 1.0) -> "TripleState":
        x = x if isinstance(x, TorusPoint) else wrap(x, L)
        y = y if isinstance(y, TorusPoint) else wrap(y, L)
        rho = torus_geodesic(x, y).distance
        rho1 = 0.5 * rho if rho1 is None else rho1
        return cls(0.0, x, y, rho1, rho - rho1, rho=rho)


def triple_step(state: TripleState, sol: Optional[FlowSolution], t: float, dt: float, rng,
                r0: float = 0.2, cfg: Optional[TripleConfig] = None) -> TripleState:
    """Advance one Euler step of the triple coupling (torus mode)."""
    if state.stopped:
        raise TripleError("state is already stopped")
    cfg = cfg or TripleConfig(r0=r0)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    L = state.x.L
    if not torus_geodesic(state.x, state.y).distance < cfg.r0:
        raise TripleError("endpoint distance must be below the stop radius")
    run = run_triple_batch(sol, t, np.array([[state.x.x1, state.x.x2]]),
                           np.array([[state.y.x1, state.y.x2]]), np.array([state.rho1]),
                           dt, dt, gen, cfg, L=L, tau0=state.tau)
    code = int(run.reason[0])
    stopped = code in (HIT_ZERO, HIT_R0)
    return TripleState(state.tau + dt, TorusPoint(*map(float, run.x[0]), L),
                       TorusPoint(*map(float, run.y[0]), L), float(run.rho1[0]),
                       float(run.rho2[0]), stopped, REASONS[code] if stopped else "running",
                       float(run.rho[0]))


def middle_particle(state: TripleState) -> TorusPoint:
    if state.stopped:
        raise TripleError("state is stopped")
    rho = torus_geodesic(state.x, state.y).distance
    return geodesic_point(state.x, state.y, min(max(state.rho1, 0.0), rho))


# ---------------------------------------------------------------------------
# statistical checks


def _start_arrays(x0, direction, rho0: float, L: float):
    x = np.asarray(x0, dtype=float).reshape(2)
    d = np.asarray(direction, dtype=float).reshape(2)
    d = d / np.hypot(*d)
    return x, wrap_batch((x + rho0 * d)[None, :], L)[0]


def _run(sol, t, cfg, x0, direction, rho0, M, dt, seed, horizon, checkpoint_steps=(),
         phi=None, threads=1, stream_offset=0) -> List[TripleRun]:
    L = 1.0 if sol is None else sol.L
    if cfg.mode == "torus" and not rho0 < cfg.r0:
        raise TripleError("starting distance must be below the stop radius")
    x, y = _start_arrays(x0, direction, rho0, L)

    def block(b, size, gen):
        return run_triple_batch(sol, t, np.tile(x, (size, 1)), np.tile(y, (size, 1)),
                                np.full(size, 0.5 * rho0), horizon, dt, gen, cfg,
                                checkpoint_steps, phi, L, rho0_scalar=rho0)

    return run_blocks(block, M, seed, threads, stream_offset=stream_offset)


@dataclass(frozen=True)
class SumIdentityResult:
    dt: float
    max_deviation: float
    mean_deviation: float
    n_paths: int


def sum_identity_check(sol: Optional[FlowSolution], t: float, rho0: float, M: int, dt: float,
                       seed: int, horizon: float, cfg: TripleConfig = TripleConfig(),
                       x0=(0.25, 0.5), direction=(1.0, 0.0), threads: int = 1) -> SumIdentityResult:
    """Largest |rho1 + rho2 - rho| seen on any running path."""
    runs = _run(sol, t, cfg, x0, direction, rho0, M, dt, seed, horizon, threads=threads)
    dev = np.concatenate([r.max_sum_dev for r in runs])
    return SumIdentityResult(dt, float(dev.max()), float(dev.mean()), int(dev.size))


def tol_sum(dt: float) -> float:
    """Allowed sum-identity deviation for step dt."""
    return 10.0 * dt**0.8


@dataclass(frozen=True)
class SymmetryResult:
    statistic: float
    p_value: float
    n_rho1: int
    n_rho2: int


def symmetry_test(sol: Optional[FlowSolution], t: float, rho0: float, M: int, dt: float, seed: int,
                  T_obs: float, cfg: TripleConfig = TripleConfig(), x0=(0.25, 0.5),
                  direction=(1.0, 0.0), threads: int = 1) -> SymmetryResult:
    """KS test of rho1(T_obs) from one batch against rho2(T_obs) from another.

    Both start at rho1 = rho2 = rho0/2; only paths still running at T_obs
    enter the comparison.
    """
    step = max(1, math.ceil(T_obs / dt - 1e-9))

    def survivors(offset, which):
        runs = _run(sol, t, cfg, x0, direction, rho0, M, dt, seed, step * dt, [step],
                    threads=threads, stream_offset=offset)
        vals = [(r.checkpoint_rho1 if which == 1 else r.checkpoint_rho2)[0][r.checkpoint_alive[0]]
                for r in runs]
        return np.concatenate(vals)

    a = survivors(0, 1)
    b = survivors(1 << 20, 2)
    if a.size < 100 or b.size < 100:
        raise AnalysisError(f"insufficient samples: {a.size} and {b.size} paths survive to T_obs")
    d, p = ks_two_sample(a, b)
    return SymmetryResult(d, p, int(a.size), int(b.size))


@dataclass(frozen=True)
class ZMartingaleResult:
    checkpoints: np.ndarray
    deviation: np.ndarray
    std_error: np.ndarray
    gap_se: np.ndarray
    max_gap_se: float
    n_paths: int


def z_martingale_test(sol: Optional[FlowSolution], t: float, phi: TestFunction2D, M: int, dt: float,
                      seed: int, T_obs: float, rho0: float = 0.1, compensate: bool = True,
                      cfg: TripleConfig = TripleConfig(), x0=(0.2, 0.5), direction=(1.0, 0.0),
                      n_checkpoints: int = 4, threads: int = 1) -> ZMartingaleResult:
    """Mean drift of the compensated middle-particle process at checkpoints.

    Paths are frozen once stopped.  With ``compensate=False`` the raw
    phi(z) is tested instead, which should show a clear drift.
    """
    step = max(1, math.ceil(T_obs / dt - 1e-9))
    steps = sorted({max(1, round(step * (k + 1) / n_checkpoints)) for k in range(n_checkpoints)})
    runs = _run(sol, t, cfg, x0, direction, rho0, M, dt, seed, step * dt, steps, phi, threads)
    vals = np.concatenate([r.checkpoint_comp if compensate else r.checkpoint_phi for r in runs],
                          axis=1)
    L = 1.0 if sol is None else sol.L
    x, y = _start_arrays(x0, direction, rho0, L)
    _, g, _ = geodesic_batch(x[None, :], y[None, :], L)
    z0 = wrap_batch(x[None, :] + 0.5 * rho0 * g, L)
    start = float(phi.value(z0)[0])
    dev, se = [], []
    for row in vals:
        est = mc_reduce(row - start)
        dev.append(abs(est.mean))
        se.append(est.std_error)
    dev, se = np.array(dev), np.array(se)
    gap = dev / np.where(se > 0, se, np.inf)
    return ZMartingaleResult(np.array(steps) * dt, dev, se, gap, float(gap.max()), vals.shape[1])
