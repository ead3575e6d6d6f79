"""
Toy models for the relative variance of the ball-ratio product as a
function of the volume ratio nu, with their minimizers.

ConstantTau:   g(nu)   = (nu - 1) / log(nu)^2
Diffusive:     g_d(nu) = (nu - 1) / (log(nu) (1 - nu^(-2/d)))
BrownianBalls: l_d(nu) = g_d(nu) h_d(nu), with h_d the correlation time of
               the inner-ball indicator for Brownian motion in a ball.

Overall constants are dropped; only shapes and argmins matter.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, List

import numpy as np
from scipy import optimize

from manifolds.exceptions import DomainError

logger = logging.getLogger(__name__)


class NuModelKind(str, Enum):
    CONSTANT_TAU = 'ConstantTau'
    DIFFUSIVE = 'Diffusive'
    BROWNIAN_BALLS = 'BrownianBalls'


@dataclass(frozen=True)
class NuModel:
    kind: NuModelKind
    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise DomainError(f"model dimension must be >= 1, got {self.d}")

    def __call__(self, nu: float) -> float:
        if self.kind is NuModelKind.CONSTANT_TAU:
            return g_const(nu)
        if self.kind is NuModelKind.DIFFUSIVE:
            return g_diffusive(nu, self.d)
        return l_brownian(nu, self.d)


def _check(nu: float, d: int = 1):
    if not nu > 1:
        raise DomainError(f"nu must be > 1, got {nu}")
    if d < 1:
        raise DomainError(f"d must be >= 1, got {d}")


def g_const(nu: float) -> float:
    _check(nu)
    return (nu - 1) / math.log(nu) ** 2


def g_diffusive(nu: float, d: int) -> float:
    _check(nu, d)
    log_nu = math.log(nu)
    return (nu - 1) / (log_nu * -math.expm1(-2 * log_nu / d))


def h_brownian(nu: float, d: int) -> float:
    _check(nu, d)
    if d == 1:
        return (4.0 / 3.0) * (nu - 1) / nu ** 2
    if d == 2:
        return (1.0 / nu - 1.0 + math.log(nu)) / (nu - 1)
    numerator = (d - 2) / nu - d * nu ** (2.0 / d - 1.0) + 2.0
    return 4.0 / (d * d - 4) * numerator / (nu ** (2.0 / d) * (1.0 - 1.0 / nu))


def l_brownian(nu: float, d: int) -> float:
    _check(nu, d)
    log_nu = math.log(nu)
    return (nu - 1) * h_brownian(nu, d) / (log_nu * -math.expm1(-2 * log_nu / d))


def minimize_scalar(fn: Callable[[float], float], lo: float, hi: float, xatol: float = 1e-6) -> float:
    """Argmin of a unimodal function on [lo, hi]."""
    if not lo < hi:
        raise DomainError(f"empty bracket [{lo}, {hi}]")
    result = optimize.minimize_scalar(fn, bounds=(lo, hi), method='bounded', options={'xatol': xatol})
    return float(result.x)


def g_const_minimizer() -> float:
    return minimize_scalar(g_const, 1.01, 50.0)


def g_diffusive_minimizer(d: int) -> float:
    return minimize_scalar(lambda nu: g_diffusive(nu, d), 1.01, 50.0)


def g_diffusive_asymptote(d: int) -> float:
    """Large-d value of g_d at its minimizer: d (nu* - 1) / (2 log^2 nu*)."""
    nu_star = g_const_minimizer()
    return d * (nu_star - 1) / (2 * math.log(nu_star) ** 2)


def nu_grid(lo: float = 1.1, hi: float = 100.0, points: int = 200) -> np.ndarray:
    return np.geomspace(lo, hi, points)


def nu_grid_table(d: int, nus: Iterable[float]) -> List[dict]:
    """Rows of (nu, g_const, g_d, h_d, l_d) for one dimension."""
    return [
        {
            'nu': float(nu),
            'g_const': g_const(nu),
            'g_d': g_diffusive(nu, d),
            'h_d': h_brownian(nu, d),
            'l_d': l_brownian(nu, d),
        }
        for nu in nus
    ]
