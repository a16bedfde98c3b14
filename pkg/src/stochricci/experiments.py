"""Registry of reproducible numerical experiments.

Each experiment takes an :class:`ExperimentConfig` plus a :class:`Context`
(root seed, thread count) and returns an :class:`Outcome` with a pass/fail
verdict, scalar metrics and CSV-ready tables.  Configuration fields that an
experiment does not use are echoed but otherwise ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import barriers as B
from . import coupling as C
from . import flow_pde as F
from . import target_process as TP
from . import triple_coupling as TC
from .analysis import fit_exponential, observed_order


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str, line: Optional[int] = None):
        self.field = field_name
        self.message = message
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field_name}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int = 64
    L: float = 1.0
    preset: Optional[str] = "sin1"
    custom_file: Optional[str] = None
    amplitude: float = 0.2
    t: float = 0.25
    dt_pde: Optional[float] = None
    dt_sde: float = 1e-4
    M: int = 20000
    seed: int = 20240601
    out: str = "results"
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in REGISTRY:
            raise ConfigError("experiment", f"unknown experiment {self.experiment!r}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ConfigError("n", "must be a power of two >= 8")
        for name in ("L", "t", "dt_sde", "M", "threads"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if self.dt_pde is not None and not self.dt_pde > 0:
            raise ConfigError("dt_pde", "must be positive")
        if not self.amplitude >= 0:
            raise ConfigError("amplitude", "must be nonnegative")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if (self.preset is None) == (self.custom_file is None):
            raise ConfigError("preset", "give exactly one of preset and custom_file")
        if self.preset is not None and self.preset not in F.PRESETS:
            raise ConfigError("preset", f"expected one of {', '.join(F.PRESETS)}")

    def as_dict(self) -> Dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


FIELD_TYPES: Dict[str, type] = {
    "experiment": str, "n": int, "L": float, "preset": str, "custom_file": str,
    "amplitude": float, "t": float, "dt_pde": float, "dt_sde": float, "M": int,
    "seed": int, "out": str, "threads": int,
}


@dataclass
class Table:
    columns: Sequence[str]
    rows: List[Sequence[float]]


@dataclass
class Outcome:
    passed: bool
    metrics: Dict[str, object]
    tables: Dict[str, Table] = field(default_factory=dict)


class Context:
    """Per-experiment seeding: the k-th request gets stream k of the root seed."""

    def __init__(self, seed: int):
        self.root = seed
        self._counter = 0

    def next_seed(self) -> int:
        ss = np.random.SeedSequence(self.root, spawn_key=(self._counter,))
        self._counter += 1
        return int(ss.generate_state(1, np.uint64)[0])

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.next_seed()))


@dataclass(frozen=True)
class Experiment:
    name: str
    group: str
    description: str
    anchor: str
    defaults: Dict[str, object]
    run: Callable[[ExperimentConfig, Context], Outcome]

    def config(self, **overrides) -> ExperimentConfig:
        values = {"experiment": self.name, **self.defaults, **overrides}
        if values.get("custom_file") is not None and "preset" not in overrides:
            values["preset"] = None
        return ExperimentConfig(**values)


REGISTRY: Dict[str, Experiment] = {}
GROUPS = ("solve", "barrier", "target", "couple", "triple", "decay")


def register(name: str, group: str, description: str, anchor: str, **defaults):
    def wrap(fn):
        REGISTRY[name] = Experiment(name, group, description, anchor, defaults, fn)
        return fn
    return wrap


def experiments(group: Optional[str] = None) -> List[Experiment]:
    """Registered experiments sorted by name, optionally filtered by group."""
    return [REGISTRY[k] for k in sorted(REGISTRY) if group is None or REGISTRY[k].group == group]


# ---------------------------------------------------------------------------
# shared helpers


def initial_field(cfg: ExperimentConfig) -> F.GridField:
    return _initial(cfg.preset, cfg.custom_file, cfg.n, cfg.L, cfg.amplitude)


def _initial(preset, custom_file, n, L, amplitude) -> F.GridField:
    if custom_file is not None:
        f, _ = F.load_field(custom_file)
        return F.normalize_area(f)
    return F.preset_field(preset, n, L, amplitude)


@lru_cache(maxsize=8)
def _cached_flow(preset, custom_file, n, L, amplitude, t, dt_pde, save_every):
    p0 = _initial(preset, custom_file, n, L, amplitude)
    dt = F.cfl_limit(p0) if dt_pde is None else dt_pde
    return F.solve(p0, t, dt, save_every)


def flow(cfg: ExperimentConfig, save_every: float = 0.0025, t: Optional[float] = None):
    t = cfg.t if t is None else t
    save_every = t / max(1, round(t / save_every))
    return _cached_flow(cfg.preset, cfg.custom_file, cfg.n, cfg.L, cfg.amplitude, t,
                        cfg.dt_pde, save_every)


def _f(x) -> float:
    return float(x)


# ---------------------------------------------------------------------------
# PDE experiments

_ZERO_STEP = 0.2 / 64**2


@register("stationarity", "solve", "constant initial data stays fixed under the flow",
          "stationarity of the constant-curvature metric",
          preset="zero", t=1e4 * _ZERO_STEP, dt_pde=_ZERO_STEP)
def _stationarity(cfg, ctx):
    sol = flow(cfg, save_every=cfg.t / 10)
    sup = np.abs(sol.values).max(axis=(1, 2))
    steps = int(round(cfg.t / sol.dt_solver))
    return Outcome(bool(sup.max() <= 1e-12), {"sup_abs_p": _f(sup.max()), "steps": steps},
                   {"sup_norm": Table(("t", "sup_abs_p"), list(zip(sol.times, sup)))})


@register("laplacian_eigen", "solve", "five-point Laplacian acts on a Fourier mode by its symbol",
          "flat Laplacian in the normalized flow")
def _laplacian_eigen(cfg, ctx):
    f = F.GridField.from_function(lambda a, b: np.sin(2 * np.pi * a / cfg.L), cfg.n, cfg.L)
    h = f.h
    factor = -(2.0 / h**2) * (1.0 - math.cos(2 * np.pi * h / cfg.L))
    lap = F.laplacian(f).values
    err = float(np.abs(lap - factor * f.values).max() / (abs(factor) * np.abs(f.values).max()))
    return Outcome(err <= 1e-9, {"expected_factor": factor, "relative_error": err},
                   {"eigen": Table(("n", "expected_factor", "relative_error"), [(cfg.n, factor, err)])})


@register("max_principle", "solve", "grid extrema of every snapshot stay within the initial range",
          "a-priori reachable-set bounds, flat row", preset="sin2d")
def _max_principle(cfg, ctx):
    sol = flow(cfg)
    v0 = sol.values[0]
    hi, lo = B.reachable_bounds(0, float(v0.max()), float(v0.min()), cfg.t)
    mx, mn = sol.values.max(axis=(1, 2)), sol.values.min(axis=(1, 2))
    excess = float(max((mx - hi).max(), (lo - mn).max()))
    return Outcome(excess <= 1e-10, {"upper": hi, "lower": lo, "max_excess": excess},
                   {"extrema": Table(("t", "max_p", "min_p"), list(zip(sol.times, mx, mn)))})


@register("linear_decay", "decay", "sup-norm decay of a small mode matches the linear rate",
          "exponential convergence in C0, linearized", amplitude=0.01, t=0.1)
def _linear_decay(cfg, ctx):
    sol = flow(cfg)
    sup = np.abs(sol.values).max(axis=(1, 2))
    keep = sol.times >= 0.01 - 1e-12
    fit = fit_exponential(sol.times[keep], sup[keep])
    lam = 4 * np.pi**2 / cfg.L**2
    ratio = fit.rate / lam
    ok = 0.9 <= ratio <= 1.1 and fit.r_squared >= 0.999
    return Outcome(ok, {"rate": fit.rate, "rate_over_4pi2": ratio, "r_squared": fit.r_squared},
                   {"sup_norm": Table(("t", "sup_abs_p"), list(zip(sol.times, sup)))})


def _hessian_probe(sol, t: float, rho0: float) -> Tuple[float, float]:
    """Frobenius Hessian from three second-difference probes at the grid maximiser."""
    v = sol.values[sol.snapshot_index(t)]
    h = sol.h
    E, W = np.roll(v, -1, 0), np.roll(v, 1, 0)
    N, S = np.roll(v, -1, 1), np.roll(v, 1, 1)
    h12 = (np.roll(E, -1, 1) - np.roll(E, 1, 1) - np.roll(W, -1, 1) + np.roll(W, 1, 1)) / (4 * h * h)
    frob = np.sqrt(((E - 2 * v + W) / h**2) ** 2 + ((N - 2 * v + S) / h**2) ** 2 + 2 * h12**2)
    idx = np.unravel_index(np.argmax(frob), frob.shape)
    z = (idx[0] * h, idx[1] * h)
    s = 1.0 / math.sqrt(2.0)
    q11 = F.second_difference_quotient(sol, t, z, (1.0, 0.0), rho0)
    q22 = F.second_difference_quotient(sol, t, z, (0.0, 1.0), rho0)
    qd = F.second_difference_quotient(sol, t, z, (s, s), rho0)
    q12 = qd - 0.5 * (q11 + q22)
    return float(frob.max()), math.sqrt(q11**2 + q22**2 + 2 * q12**2)


@register("derivative_decay", "decay", "p, its gradient and its Hessian all decay exponentially",
          "C0, C1 and C2 convergence with second-difference Hessian probes",
          preset="sin2d", t=0.2)
def _derivative_decay(cfg, ctx):
    sol = flow(cfg)
    rows, norms = [], []
    for t in sol.times:
        s = F.sup_norms(sol, t)
        norms.append((s.p_inf, s.grad_inf, s.hess_inf))
        rows.append((t, s.p_inf, s.grad_inf, s.hess_inf))
    norms = np.array(norms)
    keep = sol.times >= 0.02 - 1e-12
    fits = [fit_exponential(sol.times[keep], norms[keep, k]) for k in range(3)]
    probe_rows, worst = [], 0.0
    for t in (0.02, 0.1, cfg.t):
        grid, probe = _hessian_probe(sol, t, sol.h)
        rel = abs(probe - grid) / grid
        worst = max(worst, rel)
        probe_rows.append((t, grid, probe, rel))
    ok = all(f.rate > 0 and f.r_squared >= 0.99 for f in fits) and worst <= 0.05
    metrics = {}
    for label, f in zip(("p", "grad", "hess"), fits):
        metrics[f"rate_{label}"] = f.rate
        metrics[f"r_squared_{label}"] = f.r_squared
    metrics["max_probe_relative_gap"] = worst
    return Outcome(ok, metrics, {
        "sup_norms": Table(("t", "sup_p", "sup_grad", "sup_hess"), rows),
        "hessian_probes": Table(("t", "grid_hess", "probe_hess", "relative_gap"), probe_rows),
    })


# ---------------------------------------------------------------------------
# barriers


@register("barrier_residuals", "barrier", "barrier curves solve their ODEs and hit calibrated targets",
          "barrier solutions and a-priori bounds")
def _barrier_residuals(cfg, ctx):
    rows, worst = [], 0.0
    eps = 1e-5
    for r, c in ((-1, 0.5), (0, 0.3), (1, 0.5)):
        params = B.BarrierParams(r, c)
        end = min(2.0, 0.9 * B.escape_time(params))
        for tau in np.linspace(eps, end, 100):
            d = (B.barrier_value(params, tau + eps) - B.barrier_value(params, tau - eps)) / (2 * eps)
            res = abs(d - B.barrier_drift(r, B.barrier_value(params, tau)))
            worst = max(worst, res)
            rows.append((r, tau, B.barrier_value(params, tau), res))
    cal = 0.0
    for r in (-1, 0, 1):
        for target in (0.3, 0.05, -0.05, -0.2):
            for t in (0.1, 0.5):
                c = B.calibrated_constant(r, target, t)
                if r != 0 and c >= 1.0:
                    continue
                cal = max(cal, abs(B.barrier_value(B.BarrierParams(r, c), t) - target))
        # the bound at time t is the calibrated barrier read off at tau = 0
        for t in (0.1, 0.5, 2.0):
            hi, lo = B.reachable_bounds(r, 0.3, -0.05, t)
            for bound, target in ((hi, 0.3), (lo, -0.05)):
                c = B.calibrated_constant(r, target, t)
                if isinstance(bound, B.Bound) or (r != 0 and c >= 1.0):
                    continue
                cal = max(cal, abs(B.barrier_value(B.BarrierParams(r, c), 0.0) - bound))
    ok = worst <= 1e-6 and cal <= 1e-12
    return Outcome(ok, {"max_ode_residual": worst, "max_calibration_error": cal},
                   {"residuals": Table(("r", "tau", "barrier", "residual"), rows)})


# ---------------------------------------------------------------------------
# controlled process


@register("representation", "target", "Monte Carlo of the controlled process reproduces the PDE value",
          "stochastic representation of the flow")
def _representation(cfg, ctx):
    sol = flow(cfg)
    pts = ctx.generator().random((5, 2)) * cfg.L
    rows, ok = [], True
    for x in pts:
        est = TP.representation_estimate(sol, cfg.t, x, cfg.M, cfg.dt_sde, ctx.next_seed(),
                                         cfg.threads)
        exact = float(sol.interp(cfg.t, x[None, :])[0])
        gap = abs(est.mean - exact)
        tol = max(3 * est.std_error, 5e-3)
        ok &= gap <= tol
        rows.append((x[0], x[1], exact, est.mean, est.std_error, gap, tol))
    worst = max(r[5] / r[6] for r in rows)
    return Outcome(bool(ok), {"max_gap_over_tolerance": worst}, {
        "points": Table(("x1", "x2", "pde", "mc_mean", "mc_se", "gap", "tolerance"), rows)})


@register("martingale", "target", "the controlled exponent keeps its mean under the successful control",
          "martingale property of the successful control")
def _martingale(cfg, ctx):
    sol = flow(cfg)
    taus = [c for c in (0.05, 0.1, 0.2) if c <= cfg.t]
    pts = TP.martingale_test(sol, cfg.t, (0.1, 0.3), taus, cfg.M, cfg.dt_sde, ctx.next_seed(),
                             threads=cfg.threads)
    rows = [(p.tau, p.deviation, p.std_error, 3 * p.std_error + 2e-3) for p in pts]
    ok = all(r[1] <= r[3] for r in rows)
    return Outcome(ok, {"max_deviation": max(r[1] for r in rows)},
                   {"checkpoints": Table(("tau", "deviation", "std_error", "tolerance"), rows)})


@register("on_section", "target", "controlled paths stay near the flow graph, converging in dt",
          "on-section invariant of the verification relation", M=256)
def _on_section(cfg, ctx):
    sol = flow(cfg)
    steps = [4 * cfg.dt_sde, cfg.dt_sde, cfg.dt_sde / 4]
    seed = ctx.next_seed()
    ests = [TP.on_section_deviation(sol, cfg.t, (0.25, 0.5), cfg.M, dt, seed, cfg.threads)
            for dt in steps]
    devs = [e.mean for e in ests]
    order = observed_order(steps, devs)
    ok = devs[0] > devs[1] > devs[2] and order >= 0.4 and devs[1] <= 0.02
    return Outcome(bool(ok), {"observed_order": order, "deviation_at_dt": devs[1]}, {
        "refinement": Table(("dt", "mean_max_deviation", "std_error"),
                            [(dt, e.mean, e.std_error) for dt, e in zip(steps, ests)])})


# ---------------------------------------------------------------------------
# mirror coupling


@register("mirror_drift", "couple", "one-step drift of the coupled distance matches the formula",
          "distance equation under mirror coupling", M=50000, t=0.02, dt_sde=1e-5)
def _mirror_drift(cfg, ctx):
    sol = flow(cfg)
    rows, gaps = [], {}
    for label, s in (("flow", sol), ("zero", None)):
        chk = C.distance_drift_check(s, cfg.t, 0.1, cfg.M, cfg.dt_sde, ctx.next_seed())
        gaps[label] = chk.max_gap_over_ci
        rows += [(label, c, e, se, p, n) for c, e, se, p, n in
                 zip(chk.bin_centers, chk.empirical, chk.std_error, chk.predicted, chk.counts)]
    ok = all(g <= 3.0 for g in gaps.values())
    return Outcome(ok, {"max_gap_se_flow": gaps["flow"], "max_gap_se_zero": gaps["zero"]}, {
        "bins": Table(("flow", "rho", "empirical", "std_error", "predicted", "count"), rows)})


@register("coupling_scaling", "couple", "probability of not yet coupling grows linearly in distance",
          "coupling-probability scaling in the gradient estimate", M=10000, dt_sde=1e-5)
def _coupling_scaling(cfg, ctx):
    sol = flow(cfg)
    s = 0.01
    x0 = np.array([0.25, 0.5]) * cfg.L
    rows = []
    for rho0 in (0.02, 0.04, 0.08):
        curve = C.coupling_survival(sol, cfg.t, x0, x0 + [rho0, 0.0], cfg.M, cfg.dt_sde,
                                    ctx.next_seed(), [s], cfg.threads)
        rows.append((rho0, float(curve.survival[0]), float(curve.std_error[0])))
    surv = np.array([r[1] for r in rows])
    if np.any(surv <= 0):
        return Outcome(False, {"slope": math.nan}, {"survival": Table(("rho0", "survival", "std_error"), rows)})
    slope = float(np.polyfit(np.log([r[0] for r in rows]), np.log(surv), 1)[0])
    return Outcome(abs(slope - 1.0) <= 0.3, {"slope": slope},
                   {"survival": Table(("rho0", "survival", "std_error"), rows)})


@register("hitting_formulas", "couple", "Bessel and Gaussian hitting laws against the error function",
          "Bessel comparison and Gaussian hitting tail")
def _hitting_formulas(cfg, ctx):
    bessel = C.bessel_survival_bound(1.0, 1.0, 1.0)
    gauss = C.gaussian_hit_tail(1.0, 1.0)
    e1 = abs(bessel - math.erf(1.0))
    e2 = abs(gauss - math.erf(1.0 / math.sqrt(2.0)))
    ok = e1 <= 1e-8 and e2 <= 1e-10 and abs(bessel - 0.8427008) <= 1e-7 and abs(gauss - 0.6826895) <= 1e-7
    return Outcome(ok, {"bessel": bessel, "bessel_error": e1, "gaussian": gauss, "gaussian_error": e2},
                   {"values": Table(("quantity", "value", "reference"),
                                    [("bessel", bessel, math.erf(1.0)),
                                     ("gaussian", gauss, math.erf(1.0 / math.sqrt(2.0)))])})


@register("oscillation_contraction", "couple", "oscillation shrinks by at most the non-coupling probability",
          "oscillation contraction via coupling", t=0.2, M=10000)
def _oscillation_contraction(cfg, ctx):
    sol = flow(cfg)
    chk = C.oscillation_contraction_check(sol, cfg.t, 0.5 * cfg.t, cfg.M, cfg.dt_sde,
                                          ctx.next_seed(), cfg.threads)
    metrics = {k: getattr(chk, k) for k in ("osc_t", "osc_prev", "survival", "bound", "margin")}
    return Outcome(chk.passed, metrics, {"oscillation": Table(
        ("osc_t", "osc_prev", "survival", "survival_se", "bound", "bound_se", "margin"),
        [(chk.osc_t, chk.osc_prev, chk.survival, chk.survival_se, chk.bound, chk.bound_se, chk.margin)])})


# ---------------------------------------------------------------------------
# triple coupling


@register("sum_identity", "triple", "middle-particle distances add up to the endpoint distance",
          "sum identity of the triple coupling", M=2000)
def _sum_identity(cfg, ctx):
    sol = flow(cfg)
    steps = [cfg.dt_sde, cfg.dt_sde / 4]
    rows, ok = [], True
    for label, s, tc in (("torus", sol, TC.TripleConfig()),
                         ("hyperbolic", None, TC.TripleConfig(r=-1, mode="scalar", r0=0.2))):
        seed = ctx.next_seed()
        devs = []
        for dt in steps:
            res = TC.sum_identity_check(s, cfg.t, 0.1, cfg.M, dt, seed, 0.05, tc, threads=cfg.threads)
            devs.append(res.max_deviation)
            ok &= res.max_deviation <= TC.tol_sum(dt)
            rows.append((label, dt, res.max_deviation, TC.tol_sum(dt)))
    gen = ctx.generator()
    rho = 0.05 + gen.random(1000)
    rho1 = rho * gen.random(1000)
    inc = TC.distance_increments(-1, math.sqrt(2), rho, rho1, rho - rho1, gen.normal(size=1000),
                                 gen.normal(size=1000), 1e-4)
    antisym = float(np.abs(inc.noise3_rho1 + inc.noise3_rho2).max())
    ok &= antisym == 0.0
    return Outcome(bool(ok), {"max_deviation": max(r[2] for r in rows),
                              "noise_antisymmetry_error": antisym},
                   {"deviation": Table(("mode", "dt", "max_deviation", "tolerance"), rows)})


@register("swap_symmetry", "triple", "rho1 and rho2 share one law; breaking the drift breaks it",
          "swap symmetry of the triple coupling", preset="zero", M=5000)
def _swap_symmetry(cfg, ctx):
    sol = None if cfg.preset == "zero" else flow(cfg)
    runs = [
        ("torus", sol, TC.TripleConfig(), 0.1, 2e-3, cfg.dt_sde / 10, False),
        ("hyperbolic", None, TC.TripleConfig(r=-1, mode="scalar", r0=3.0), 1.5, 0.05, cfg.dt_sde, False),
        ("hyperbolic_mutated", None,
         TC.TripleConfig(r=-1, mode="scalar", r0=3.0, negate_beta_tilde=True), 1.5, 0.05, cfg.dt_sde, True),
    ]
    rows, ok = [], True
    for label, s, tc, rho0, T_obs, dt, mutated in runs:
        res = TC.symmetry_test(s, cfg.t, rho0, cfg.M, dt, ctx.next_seed(), T_obs, tc,
                               threads=cfg.threads)
        ok &= (res.p_value < 0.01) if mutated else (res.p_value > 0.01)
        rows.append((label, res.statistic, res.p_value, res.n_rho1, res.n_rho2))
    return Outcome(bool(ok), {f"p_value_{r[0]}": r[2] for r in rows}, {
        "ks": Table(("case", "statistic", "p_value", "n_rho1", "n_rho2"), rows)})


def z_budget(dt: float) -> float:
    """Discretization allowance for the compensated middle-particle drift."""
    return 1.5 * math.sqrt(dt)


@register("middle_martingale", "triple", "compensated test function of the middle particle is a martingale",
          "martingale problem for the middle particle", dt_sde=1e-5)
def _middle_martingale(cfg, ctx):
    sol = flow(cfg)
    phi = TC.sine_x1(2 * np.pi / cfg.L)
    z0 = np.array([0.25, 0.5]) * cfg.L
    x0 = z0 - np.array([0.05, 0.0])
    T_obs = 2e-3
    rows, ok = [], True
    for dt in (cfg.dt_sde, cfg.dt_sde / 4):
        res = TC.z_martingale_test(sol, cfg.t, phi, cfg.M, dt, ctx.next_seed(), T_obs, x0=x0,
                                   threads=cfg.threads)
        tol = 3 * res.std_error + z_budget(dt)
        ok &= bool(np.all(res.deviation <= tol))
        rows += [(1, dt, c, d, se, tl) for c, d, se, tl in
                 zip(res.checkpoints, res.deviation, res.std_error, tol)]
    raw = TC.z_martingale_test(sol, cfg.t, phi, cfg.M, cfg.dt_sde, ctx.next_seed(), T_obs,
                               compensate=False, x0=x0, threads=cfg.threads)
    ok &= raw.max_gap_se > 5.0
    rows += [(0, cfg.dt_sde, c, d, se, 5 * se) for c, d, se in
             zip(raw.checkpoints, raw.deviation, raw.std_error)]
    comp_dev = max(r[3] for r in rows if r[0] == 1)
    return Outcome(bool(ok), {"max_compensated_deviation": comp_dev,
                              "uncompensated_gap_se": raw.max_gap_se}, {
        "checkpoints": Table(("compensated", "dt", "tau", "deviation", "std_error", "tolerance"), rows)})


@register("jacobi_layer", "triple", "Jacobi weights, their ODE and the theta drift bound",
          "Jacobi weights and the theta drift estimate")
def _jacobi_layer(cfg, ctx):
    rows = []
    ends, ode, theta0 = 0.0, 0.0, 0.0
    eps = 1e-4
    for r, lengths in ((-1, (0.05, 0.2, 1.0, 3.0)), (0, (0.1, 1.0)), (1, (0.2, 1.0, 2.5))):
        for l in lengths:
            spec = TC.JacobiSpec(r, l)
            ends = max(ends, abs(TC.jacobi_w(spec, 0.0) - 1.0), abs(TC.jacobi_w(spec, l) - 1.0))
            for s in np.linspace(eps, l - eps, 50):
                w2 = (TC.jacobi_w(spec, s + eps) - 2 * TC.jacobi_w(spec, s)
                      + TC.jacobi_w(spec, s - eps)) / eps**2
                ode = max(ode, abs(w2 + r * TC.jacobi_w(spec, s)))
                if r == 0:
                    theta0 = max(theta0, abs(TC.theta_drift(spec, math.sqrt(2), s)))
    bound = 1.0
    worst_ratio = 0.0
    for l in (0.2, 0.1, 0.05, 0.01):
        spec = TC.JacobiSpec(-1, l)
        ratio = max(abs(TC.theta_drift(spec, math.sqrt(2), s)) / s
                    for s in np.linspace(l / 200, l, 200))
        worst_ratio = max(worst_ratio, ratio)
        rows.append((l, ratio))
    ok = ends == 0.0 and ode <= 1e-6 and theta0 == 0.0 and worst_ratio <= bound
    return Outcome(ok, {"endpoint_error": ends, "max_ode_residual": ode, "max_theta_flat": theta0,
                        "max_theta_over_rho1": worst_ratio}, {
        "theta_ratio": Table(("l", "max_abs_theta_over_rho1"), rows)})
