"""Closed-form solution of the household problem after the breadwinner dies.

The value function is

    V_d(t, x, h) = g(t)^gamma (x - h B(t))^(1-gamma) / (1-gamma)

with B in closed form and g obtained by quadrature on a uniform grid.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateHabit, InsufficientWealth
from .model import ModelParams, PolicyDecision, interval_integrals

DEFAULT_NODES = 4001
# below this effective wealth counts as "at the boundary" rather than "below" it
WEALTH_EPS = 1e-12


def habit_discount_rate(params: ModelParams) -> float:
    """r + beta - alpha."""
    return params.market.r + params.habit.beta - params.habit.alpha


def wealth_error(w: float | np.ndarray, what: str) -> InsufficientWealth:
    worst = float(np.min(w))
    where = "at the boundary" if worst > -WEALTH_EPS else "below the boundary"
    return InsufficientWealth(f"{what} effective wealth {worst:.6g} is {where} (must be > 0)")


@dataclass(frozen=True)
class DeadCoefficients:
    """Tabulated g(t) on a uniform grid plus the closed-form B(t) and N."""

    t: np.ndarray
    g_values: np.ndarray
    N: float
    rate: float
    horizon: float
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_spline", CubicSpline(self.t, self.g_values))

    @property
    def grid_dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def B(self, t):
        a = self.rate
        return (1.0 - np.exp(-a * (self.horizon - np.asarray(t, dtype=float)))) / a

    def B_prime(self, t):
        return -np.exp(-self.rate * (self.horizon - np.asarray(t, dtype=float)))

    def g(self, t):
        return self._spline(t)

    def g_prime(self, t):
        return self._spline(t, 1)

    def scaled(self, factor: float) -> "DeadCoefficients":
        """Copy with g multiplied by ``factor`` (used by corruption probes)."""
        return DeadCoefficients(self.t, self.g_values * factor, self.N, self.rate, self.horizon)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "B", "g"])
        for t, b, g in zip(self.t, self.B(self.t), self.g_values):
            writer.writerow([f"{t:.10g}", f"{b:.17g}", f"{g:.17g}"])
        return buf.getvalue()


def solve_dead(params: ModelParams, n_nodes: int = DEFAULT_NODES) -> DeadCoefficients:
    """Tabulate the post-death coefficients on ``n_nodes`` uniform nodes over [0, T]."""
    a = habit_discount_rate(params)
    scale = params.market.r + params.habit.beta + params.habit.alpha
    if abs(a) <= 1e-12 * max(scale, 1.0):
        raise DegenerateHabit("r + beta - alpha = 0: closed form for B(t) is singular")
    T = params.horizon_T
    gamma, rho = params.prefs.gamma, params.prefs.rho
    alpha = params.habit.alpha
    k_d, omega_d = params.prefs.k_d, params.prefs.omega_d
    N = (1.0 - gamma) / gamma * (params.market.r + params.kappa)

    t = np.linspace(0.0, T, n_nodes)

    def B(s):
        return (1.0 - np.exp(-a * (T - s))) / a

    # integrand scaled by e^{N(s-T)} so cells can be summed from the end
    def integrand(s):
        return (
            np.exp(N * (s - T))
            * (k_d * np.exp(-rho * s)) ** (1.0 / gamma)
            * (1.0 + alpha * B(s)) ** (1.0 - 1.0 / gamma)
        )

    cells = interval_integrals(integrand, t, epsabs=1e-14)
    tail = np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))
    g_T = (omega_d * math.exp(-rho * T)) ** (1.0 / gamma)
    g = np.exp(N * (T - t)) * (tail + g_T)
    g[-1] = g_T
    return DeadCoefficients(t=t, g_values=g, N=N, rate=a, horizon=T)


def dead_effective_wealth(t, x, h, coeffs: DeadCoefficients):
    return np.asarray(x, dtype=float) - np.asarray(h, dtype=float) * coeffs.B(t)


def dead_value(t, x, h, coeffs: DeadCoefficients, params: ModelParams):
    """V_d(t, x, h); raises InsufficientWealth unless x - h B(t) > 0."""
    w = dead_effective_wealth(t, x, h, coeffs)
    if np.any(w <= 0):
        raise wealth_error(w, "post-death")
    gamma = params.prefs.gamma
    out = coeffs.g(t) ** gamma * w ** (1.0 - gamma) / (1.0 - gamma)
    return out if np.ndim(out) else float(out)


def dead_consumption_factor(t, coeffs: DeadCoefficients, params: ModelParams):
    """(c* - h) per unit of effective wealth."""
    gamma = params.prefs.gamma
    t = np.asarray(t, dtype=float)
    return (
        (1.0 + params.habit.alpha * coeffs.B(t)) ** (-1.0 / gamma)
        * (params.prefs.k_d * np.exp(-params.prefs.rho * t)) ** (1.0 / gamma)
        / coeffs.g(t)
    )


def dead_controls(t, x, h, coeffs: DeadCoefficients, params: ModelParams):
    """Vectorised (pi*, c*) arrays; see :func:`dead_policy`."""
    w = dead_effective_wealth(t, x, h, coeffs)
    if np.any(w <= 0):
        raise wealth_error(w, "post-death")
    pi = params.merton_fraction * w
    c = np.asarray(h, dtype=float) + w * dead_consumption_factor(t, coeffs, params)
    return pi, c


def dead_policy(t: float, x: float, h: float, coeffs: DeadCoefficients, params: ModelParams) -> PolicyDecision:
    pi, c = dead_controls(t, x, h, coeffs, params)
    return PolicyDecision(pi=float(pi), c=float(c))
