"""Controlled diffusion of the stochastic target problem on the flat torus.

On a flat reference surface the controlled process (x, p) moves by

    dx = sqrt(2) exp(-p) dW,        dp = sqrt(2) exp(-p) <a, dW>,

with one two-dimensional Brownian motion W driving both.  Steering with the
gradient of the flow solution at the reversed time keeps (x, p) on the graph
of that solution; these routines simulate the system with Euler-Maruyama and
measure how well that works.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import MCEstimate, mc_reduce
from .flow_pde import FlowSolution
from .geometry import TorusPoint, wrap_batch
from .rng import RngStream, concat, run_blocks

SQRT2 = math.sqrt(2.0)
CONTROL_CLAMP = 100.0
BLOWUP_LEVEL = 50.0

Control = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class BlowUpError(RuntimeError):
    pass


@dataclass
class ControlledPath:
    dt: float
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    terminal_p: float
    on_section_max_dev: float
    clamp_count: int = 0

    @property
    def samples(self) -> List[Tuple[float, TorusPoint, float]]:
        return [(float(t), TorusPoint(float(a), float(b)), float(q))
                for t, (a, b), q in zip(self.times, self.x, self.p)]


class SuccessfulControl:
    """Control a(tau, x) = grad of the flow at time t - tau, evaluated at x."""

    def __init__(self, sol: FlowSolution, t: float):
        if t > sol.final_time + 1e-12:
            raise ValueError(f"solution covers [0, {sol.final_time}], horizon {t} is longer")
        self.sol = sol
        self.t = t

    def __call__(self, tau: float, x, p=None) -> np.ndarray:
        if tau > self.t + 1e-12:
            raise ValueError(f"control queried at tau={tau} beyond horizon {self.t}")
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        return self.sol.interp(max(self.t - tau, 0.0), pts, "grad")


def successful_control(sol: FlowSolution, t: float) -> SuccessfulControl:
    return SuccessfulControl(sol, t)


def zero_control(tau: float, x, p=None) -> np.ndarray:
    return np.zeros_like(np.atleast_2d(np.asarray(x, dtype=float)))


def _step_count(t: float, dt: float) -> int:
    return max(1, math.ceil(t / dt - 1e-9))


def _step_times(t: float, dt: float) -> np.ndarray:
    n = _step_count(t, dt)
    taus = np.arange(n + 1) * dt
    taus[-1] = t
    return taus


@dataclass
class _BatchResult:
    x: np.ndarray
    p: np.ndarray
    at_checkpoints: np.ndarray
    max_dev: np.ndarray
    clamp_count: int
    trace: Optional[Tuple[np.ndarray, np.ndarray]] = None


def simulate_batch(sol: Optional[FlowSolution], t: float, x0: np.ndarray, p_start: np.ndarray,
                   control: Control, dt: float, gen: np.random.Generator,
                   checkpoint_steps: Sequence[int] = (), track_section: bool = False,
                   record: bool = False, L: float = 1.0) -> _BatchResult:
    """Euler-Maruyama for N paths at once.

    ``checkpoint_steps`` lists step indices at which p is stored.  With
    ``track_section`` the running max of |p - p_flow(t - tau, x)| is kept.
    """
    if dt > 1e-3:
        raise ValueError("dt must not exceed 1e-3")
    taus = _step_times(t, dt)
    X = np.array(x0, dtype=float, copy=True)
    P = np.array(p_start, dtype=float, copy=True)
    N = X.shape[0]
    wanted = {s: i for i, s in enumerate(checkpoint_steps)}
    stored = np.empty((len(checkpoint_steps), N))
    if 0 in wanted:
        stored[wanted[0]] = P
    max_dev = np.zeros(N)
    clamps = 0
    xs, ps = ([X.copy()], [P.copy()]) if record else (None, None)
    for k in range(taus.size - 1):
        h = taus[k + 1] - taus[k]
        dW = gen.normal(size=(N, 2)) * math.sqrt(h)
        A = np.asarray(control(taus[k], X, P), dtype=float).reshape(N, 2)
        norm = np.hypot(A[:, 0], A[:, 1])
        over = norm > CONTROL_CLAMP
        if over.any():
            clamps += int(over.sum())
            A[over] *= (CONTROL_CLAMP / norm[over])[:, None]
        s = SQRT2 * np.exp(-P)
        X = wrap_batch(X + s[:, None] * dW, L)
        P = P + s * np.einsum("ij,ij->i", A, dW)
        if np.any(np.abs(P) > BLOWUP_LEVEL):
            raise BlowUpError("conformal exponent blow-up")
        if k + 1 in wanted:
            stored[wanted[k + 1]] = P
        if track_section and sol is not None:
            ref = sol.interp(max(t - taus[k + 1], 0.0), X, "p")
            np.maximum(max_dev, np.abs(P - ref), out=max_dev)
        if record:
            xs.append(X.copy())
            ps.append(P.copy())
    trace = (np.stack(xs), np.stack(ps)) if record else None
    return _BatchResult(X, P, stored, max_dev, clamps, trace)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


def _point(x0) -> np.ndarray:
    if isinstance(x0, TorusPoint):
        return np.array([x0.x1, x0.x2])
    return np.asarray(x0, dtype=float).reshape(2)


def simulate_controlled(sol: Optional[FlowSolution], t: float, x0, control: Control, dt: float,
                        rng, p0: Optional[float] = None) -> ControlledPath:
    """Simulate one path of the controlled process started on the flow graph.

    ``p0`` overrides the starting exponent, which otherwise is the flow value
    at (t, x0).  With ``sol=None`` the flow is taken to be zero.
    """
    x = _point(x0)[None, :]
    if p0 is None:
        p0 = 0.0 if sol is None else float(sol.interp(t, x, "p")[0])
    L = 1.0 if sol is None else sol.L
    res = simulate_batch(sol, t, x, np.array([p0]), control, dt, _generator(rng),
                         track_section=sol is not None, record=True, L=L)
    xs, ps = res.trace
    return ControlledPath(dt, _step_times(t, dt), xs[:, 0, :], ps[:, 0],
                          float(res.p[0]), float(res.max_dev[0]), res.clamp_count)


def representation_estimate(sol: FlowSolution, t: float, x0, M: int, dt: float, seed: int,
                            threads: int = 1) -> MCEstimate:
    """Monte Carlo estimate of p_flow(t, x0) as E[p_flow(0, x_t)]."""
    x = _point(x0)
    p_start = float(sol.interp(t, x[None, :], "p")[0])
    control = successful_control(sol, t)

    def block(b, size, gen):
        res = simulate_batch(sol, t, np.tile(x, (size, 1)), np.full(size, p_start), control,
                             dt, gen, L=sol.L)
        return sol.interp(0.0, res.x, "p")

    return mc_reduce(concat(run_blocks(block, M, seed, threads)))


@dataclass(frozen=True)
class MartingalePoint:
    tau: float
    deviation: float
    std_error: float


def martingale_test(sol: Optional[FlowSolution], t: float, x0, checkpoints: Sequence[float], M: int,
                    dt: float, seed: int, control: Optional[Control] = None,
                    threads: int = 1) -> List[MartingalePoint]:
    """Deviation of the mean controlled exponent from its start at each checkpoint."""
    if any(c < 0 or c > t + 1e-12 for c in checkpoints):
        raise ValueError("checkpoints must lie in [0, t]")
    x = _point(x0)
    p_start = 0.0 if sol is None else float(sol.interp(t, x[None, :], "p")[0])
    if control is None:
        control = zero_control if sol is None else successful_control(sol, t)
    steps = [int(round(c / dt)) if c < t else _step_count(t, dt) for c in checkpoints]

    def block(b, size, gen):
        res = simulate_batch(sol, t, np.tile(x, (size, 1)), np.full(size, p_start), control, dt,
                             gen, checkpoint_steps=steps, L=1.0 if sol is None else sol.L)
        return res.at_checkpoints

    stored = np.concatenate(run_blocks(block, M, seed, threads), axis=1)
    out = []
    for c, row in zip(checkpoints, stored):
        est = mc_reduce(row - p_start)
        out.append(MartingalePoint(float(c), abs(est.mean), est.std_error))
    return out


def on_section_deviation(sol: FlowSolution, t: float, x0, M: int, dt: float, seed: int,
                         threads: int = 1) -> MCEstimate:
    """Mean over paths of the running max distance from the flow graph."""
    x = _point(x0)
    p_start = float(sol.interp(t, x[None, :], "p")[0])
    control = successful_control(sol, t)

    def block(b, size, gen):
        res = simulate_batch(sol, t, np.tile(x, (size, 1)), np.full(size, p_start), control, dt,
                             gen, track_section=True, L=sol.L)
        return res.max_dev

    return mc_reduce(concat(run_blocks(block, M, seed, threads)))


# ---------------------------------------------------------------------------
# generator check


@dataclass(frozen=True)
class TestFunction:
    """Smooth phi(tau, x, p) with the derivatives the generator needs.

    All callables take ``(tau, X, P)`` with X of shape (N, 2) and return
    arrays; ``grad_x`` and ``grad_x_dp`` return shape (N, 2).
    """

    value: Callable
    d_tau: Callable
    grad_x: Callable
    lap_x: Callable
    d_p: Callable
    d_pp: Callable
    grad_x_dp: Callable


def generator_drift(phi: TestFunction, tau: float, X: np.ndarray, P: np.ndarray,
                    A: np.ndarray) -> np.ndarray:
    """Drift of phi(tau, x, p) along the controlled process (flat, r = 0)."""
    e = np.exp(-2.0 * P)
    return (phi.d_tau(tau, X, P) + e * phi.lap_x(tau, X, P)
            + e * np.einsum("ij,ij->i", A, A) * phi.d_pp(tau, X, P)
            + 2.0 * e * np.einsum("ij,ij->i", A, phi.grad_x_dp(tau, X, P)))


@dataclass(frozen=True)
class GeneratorResidual:
    max_residual: float
    std_error: float
    empirical: np.ndarray
    predicted: np.ndarray
    std_errors: np.ndarray


def generator_residual(sol: Optional[FlowSolution], t: float, phi: TestFunction,
                       sample_points: Sequence[Tuple[float, Sequence[float], float]],
                       dt: float, M: int, seed: int,
                       control: Optional[Control] = None) -> GeneratorResidual:
    """Compare one-step Monte Carlo drift of phi with the generator formula.

    The first-order stochastic term grad(phi).dx + phi_p dp has mean zero
    exactly and is subtracted as a control variate, which leaves the
    estimator with O(1) rather than O(1/sqrt(dt)) spread.
    """
    if control is None:
        control = zero_control if sol is None else successful_control(sol, t)
    emp, pred, ses = [], [], []
    for k, (tau, x, p) in enumerate(sample_points):
        gen = RngStream(seed, k).generator()
        X = np.tile(np.asarray(x, dtype=float), (M, 1))
        P = np.full(M, float(p))
        A = np.asarray(control(tau, X[:1], P[:1]), dtype=float).reshape(1, 2)
        A = np.repeat(A, M, axis=0)
        dW = gen.normal(size=(M, 2)) * math.sqrt(dt)
        s = SQRT2 * np.exp(-P)
        dX = s[:, None] * dW
        dP = s * np.einsum("ij,ij->i", A, dW)
        linear = (np.einsum("ij,ij->i", phi.grad_x(tau, X, P), dX) + phi.d_p(tau, X, P) * dP)
        incr = phi.value(tau + dt, X + dX, P + dP) - phi.value(tau, X, P) - linear
        est = mc_reduce(incr / dt)
        emp.append(est.mean)
        ses.append(est.std_error)
        pred.append(float(generator_drift(phi, tau, X[:1], P[:1], A[:1])[0]))
    emp, pred, ses = np.array(emp), np.array(pred), np.array(ses)
    gap = np.abs(emp - pred)
    k = int(np.argmax(gap))
    return GeneratorResidual(float(gap[k]), float(ses[k]), emp, pred, ses)
