"""Closed-form barrier curves and a-priori bounds for the controlled exponent.

A barrier is a deterministic solution q(tau) of q' = U_r(q), with

    U_{+1}(q) = exp(-2q) - 1,   U_0(q) = 0,   U_{-1}(q) = 1 - exp(-2q),

the drift the controlled exponent picks up from the curvature terms.  The
families below solve these ODEs exactly and give the reachable-set bounds for
the normalized and unnormalized flows.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Tuple, Union


class BarrierError(ValueError):
    pass


class Bound(enum.Enum):
    """Sentinels for bounds that do not exist as finite numbers."""

    NONE = "none"
    BLOWN_UP = "blown-up"

    def __str__(self) -> str:
        return self.value


BoundValue = Union[float, Bound]


@dataclass(frozen=True)
class BarrierParams:
    r: int
    c: float

    def __post_init__(self):
        if self.r not in (-1, 0, 1):
            raise BarrierError(f"curvature sign must be -1, 0 or 1, got {self.r}")
        if self.r != 0 and not self.c < 1.0:
            raise BarrierError(f"barrier constant must be < 1 for r={self.r}")


def barrier_drift(r: int, q: float) -> float:
    if r == 1:
        return math.exp(-2.0 * q) - 1.0
    if r == 0:
        return 0.0
    if r == -1:
        return 1.0 - math.exp(-2.0 * q)
    raise BarrierError(f"curvature sign must be -1, 0 or 1, got {r}")


def barrier_value(params: BarrierParams, tau: float) -> float:
    r, c = params.r, params.c
    if r == 0:
        return float(c)
    arg = 1.0 - c * math.exp(-2.0 * r * tau)
    if arg <= 0.0:
        raise BarrierError("barrier escaped to -inf")
    return 0.5 * math.log(arg)


def escape_time(params: BarrierParams) -> float:
    """First tau at which the barrier reaches -inf (inf if never)."""
    if params.r == -1 and params.c > 0.0:
        return 0.5 * math.log(1.0 / params.c)
    return math.inf


def calibrated_constant(r: int, target: float, t: float) -> float:
    """Constant c whose barrier passes through ``target`` at time t."""
    if r == 0:
        return float(target)
    return -math.exp(2.0 * r * t) * math.expm1(2.0 * target)


def reachable_bounds(r: int, alpha: float, beta: float, t: float) -> Tuple[float, BoundValue]:
    """Upper and lower bounds on the normalized flow's exponent at time t.

    ``alpha`` >= 0 >= ``beta`` bound the initial exponent from above and
    below.  The lower bound for r = +1 only exists for small t and is
    ``Bound.NONE`` otherwise.
    """
    if r not in (-1, 0, 1):
        raise BarrierError(f"curvature sign must be -1, 0 or 1, got {r}")
    if alpha < 0 or beta > 0:
        raise BarrierError("area normalization violated: need alpha >= 0 >= beta")
    if t < 0:
        raise BarrierError("t must be nonnegative")
    if r == 0:
        return float(alpha), float(beta)
    e = math.exp(2.0 * r * t)
    upper = 0.5 * math.log(1.0 + e * math.expm1(2.0 * alpha))
    if r == 1 and beta < 0 and t >= -0.5 * math.log(-math.expm1(2.0 * beta)):
        return upper, Bound.NONE
    lower = 0.5 * math.log(1.0 + e * math.expm1(2.0 * beta))
    return upper, lower


def unnormalized_bounds(r: int, alpha: float, beta: float, t: float) -> Tuple[BoundValue, BoundValue]:
    """Bounds for the unnormalized flow dp/dt = exp(-2p)(Lap p - r).

    Each bound equals 0.5*log(exp(2*c) - r*t) and turns into
    ``Bound.BLOWN_UP`` once the argument is no longer positive.
    """
    if r not in (-1, 1):
        raise BarrierError("unnormalized bounds need r = -1 or 1")
    if t < 0:
        raise BarrierError("t must be nonnegative")

    def one(c: float) -> BoundValue:
        arg = math.exp(2.0 * c) - r * t
        return Bound.BLOWN_UP if arg <= 0.0 else 0.5 * math.log(arg)

    return one(alpha), one(beta)


def blowup_time_positive_curvature(p0_sup: float, K0: float) -> float:
    """Time by which a positively curved unnormalized flow must have blown up."""
    if K0 <= 0:
        raise BarrierError("curvature lower bound K0 must be positive")
    return math.exp(2.0 * p0_sup) / (2.0 * K0)


def negative_curvature_lower_bound(K0: float, t: float) -> float:
    """Growth bound 0.5*log(2*K0*t) for a negatively curved unnormalized flow."""
    if K0 <= 0 or t <= 0:
        raise BarrierError("need K0 > 0 and t > 0")
    return 0.5 * math.log(2.0 * K0 * t)
