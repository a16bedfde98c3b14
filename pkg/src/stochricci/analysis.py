"""Fitting and statistics helpers shared by the experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    rate: float
    log_prefactor: float
    r_squared: float
    n_points: int


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_paths: int


def fit_exponential(times: Sequence[float], values: Sequence[float], floor: float = 1e-12) -> DecayFit:
    """Least-squares fit of log(values) = log_prefactor - rate * t."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise AnalysisError("times and values differ in length")
    if np.any(np.diff(t) <= 0):
        raise AnalysisError("times must be strictly increasing")
    keep = v > floor
    if keep.sum() < 4:
        raise AnalysisError(f"need at least 4 points above {floor:g}, got {int(keep.sum())}")
    t, y = t[keep], np.log(v[keep])
    tm, ym = t.mean(), y.mean()
    sxx = np.sum((t - tm) ** 2)
    slope = np.sum((t - tm) * (y - ym)) / sxx
    intercept = ym - slope * tm
    ss_tot = np.sum((y - ym) ** 2)
    ss_res = np.sum((y - intercept - slope * t) ** 2)
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return DecayFit(float(-slope), float(intercept), float(r2), int(keep.sum()))


def kolmogorov_sf(lam: float, rtol: float = 1e-8) -> float:
    """Survival function of the Kolmogorov distribution.

    Uses the alternating series for large arguments and its Jacobi-theta
    transform for small ones, so both converge in a handful of terms.
    """
    if lam <= 0.0:
        return 1.0
    if lam < 1.0:
        # 1 - sqrt(2 pi)/lam * sum exp(-(2k-1)^2 pi^2 / (8 lam^2))
        c = math.pi**2 / (8.0 * lam * lam)
        total, k = 0.0, 1
        while True:
            term = math.exp(-(2 * k - 1) ** 2 * c)
            total += term
            if term <= rtol * total or term == 0.0:
                break
            k += 1
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / lam * total))
    total, k = 0.0, 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term <= rtol * abs(total) or term == 0.0:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.sort(a), np.sort(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b) -> Tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 20 or b.size < 20:
        raise AnalysisError(f"insufficient samples: need 20 per side, got {a.size} and {b.size}")
    d = ks_statistic(a, b)
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    return d, kolmogorov_sf(en * d)


def mc_reduce(samples) -> MCEstimate:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise AnalysisError("insufficient samples: need at least 2")
    return MCEstimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), int(x.size))


def observed_order(steps: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(step)."""
    s = np.log(np.asarray(steps, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(s, e, 1)[0])
