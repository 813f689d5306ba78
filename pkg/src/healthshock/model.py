"""Model primitives shared by every solver.

Parameters, the health-state space, mortality hazards and survival
functions, labour income, habit dynamics and the utility functions.
Everything here is immutable; all functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import (
    HabitViolation,
    InvalidParameter,
    InvalidState,
    NonpositiveWealth,
    OutOfHorizon,
)

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-12


def _check_state(i: int, n_states: int) -> None:
    if not (0 <= int(i) < n_states) or int(i) != i:
        raise InvalidState(f"state {i!r} not in 0..{n_states - 1}")


# --------------------------------------------------------------------------
# parameter blocks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketParams:
    r: float
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise InvalidParameter("market.sigma must be positive")
        if not self.mu > self.r:
            raise InvalidParameter("market.mu must exceed market.r")


@dataclass(frozen=True)
class PreferenceParams:
    """CRRA preferences over consumption above habit.

    ``k_a`` and ``omega_a`` hold one weight per health state while the
    breadwinner is alive; ``k_d`` and ``omega_d`` apply after death.
    """

    gamma: float
    rho: float
    k_a: tuple[float, ...]
    omega_a: tuple[float, ...]
    k_d: float
    omega_d: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_a", tuple(float(v) for v in self.k_a))
        object.__setattr__(self, "omega_a", tuple(float(v) for v in self.omega_a))
        if not self.gamma > 0 or self.gamma == 1:
            raise InvalidParameter("prefs.gamma must be positive and != 1")
        if len(self.k_a) != len(self.omega_a):
            raise InvalidParameter("prefs.k_a and prefs.omega_a differ in length")
        weights = (*self.k_a, *self.omega_a, self.k_d, self.omega_d)
        if any(not w > 0 for w in weights):
            raise InvalidParameter("all utility weights must be positive")


@dataclass(frozen=True)
class HabitParams:
    alpha: float
    beta: float
    h0: float

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.h0 < 0:
            raise InvalidParameter("habit.alpha, habit.beta and habit.h0 must be >= 0")


@dataclass(frozen=True)
class IncomeModel:
    """Wage y(t, 0) = y0 * exp(delta t); sick states earn y(t, 0) / xi_k."""

    y0: float
    delta: float
    xi: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        if self.y0 < 0:
            raise InvalidParameter("income.y0 must be >= 0")
        if not self.xi or self.xi[0] != 1.0:
            raise InvalidParameter("income.xi[0] must be exactly 1 (healthy state)")
        if any(not (1.0 < v < math.inf) for v in self.xi[1:]):
            raise InvalidParameter("income.xi[k] must lie in (1, inf) for k != 0")

    @property
    def n_states(self) -> int:
        return len(self.xi)

    def rate(self, t, i: int):
        _check_state(i, self.n_states)
        return self.y0 * np.exp(self.delta * np.asarray(t, dtype=float)) / self.xi[i]


# --------------------------------------------------------------------------
# hazards
# --------------------------------------------------------------------------


class HazardModel:
    """Force of mortality lambda(t, i) per health state.

    Subclasses implement :meth:`lam` vectorised over ``t``.  The pricing
    rate theta = (1 + loading) * lambda is carried for completeness; the
    premium/benefit exchange always uses lambda (frictionless market).
    """

    n_states: int
    loading: float

    def lam(self, t, i: int):
        raise NotImplementedError

    def theta(self, t, i: int):
        return (1.0 + self.loading) * self.lam(t, i)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GompertzIllnessHazard(HazardModel):
    """Gompertz mortality in the healthy state plus an age-linear excess when sick.

    lambda(t, 0) = exp((m + t - l) / n) / n
    lambda(t, k) = lambda(t, 0) + k1[k-1] + k2[k-1] * (m + t)
    """

    m: float
    n: float
    l: float
    k1: tuple[float, ...] = ()
    k2: tuple[float, ...] = ()
    loading: float = 0.0

    def __post_init__(self) -> None:
        k1 = (self.k1,) if np.isscalar(self.k1) else self.k1
        k2 = (self.k2,) if np.isscalar(self.k2) else self.k2
        object.__setattr__(self, "k1", tuple(float(v) for v in k1))
        object.__setattr__(self, "k2", tuple(float(v) for v in k2))
        if len(self.k1) != len(self.k2):
            raise InvalidParameter("hazard.k1 and hazard.k2 differ in length")
        if not self.n > 0:
            raise InvalidParameter("hazard.n must be positive")
        if self.loading < 0:
            raise InvalidParameter("hazard.loading must be >= 0 (theta >= lambda)")

    @property
    def n_states(self) -> int:
        return 1 + len(self.k1)

    def lam(self, t, i: int):
        _check_state(i, self.n_states)
        t = np.asarray(t, dtype=float)
        base = np.exp((self.m + t - self.l) / self.n) / self.n
        if i == 0:
            return base
        return base + self.k1[i - 1] + self.k2[i - 1] * (self.m + t)

    def to_dict(self) -> dict:
        return {
            "kind": "gompertz_illness",
            "m": self.m,
            "n": self.n,
            "l": self.l,
            "k1": list(self.k1),
            "k2": list(self.k2),
            "loading": self.loading,
        }


@dataclass(frozen=True)
class ConstantHazard(HazardModel):
    """Time-constant force of mortality per state; zero rates are allowed."""

    rates: tuple[float, ...]
    loading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "rates", tuple(float(v) for v in self.rates))
        if any(v < 0 for v in self.rates):
            raise InvalidParameter("hazard rates must be >= 0")
        if self.loading < 0:
            raise InvalidParameter("hazard.loading must be >= 0 (theta >= lambda)")

    @property
    def n_states(self) -> int:
        return len(self.rates)

    def lam(self, t, i: int):
        _check_state(i, self.n_states)
        return np.full(np.shape(t), self.rates[i]) if np.ndim(t) else self.rates[i]

    def to_dict(self) -> dict:
        return {"kind": "constant", "rates": list(self.rates), "loading": self.loading}


@dataclass(frozen=True)
class ScaledHazard(HazardModel):
    """``base`` hazard multiplied by a constant factor."""

    base: HazardModel
    factor: float

    @property
    def n_states(self) -> int:
        return self.base.n_states

    @property
    def loading(self) -> float:
        return self.base.loading

    def lam(self, t, i: int):
        return self.factor * self.base.lam(t, i)

    def to_dict(self) -> dict:
        return {"kind": "scaled", "factor": self.factor, "base": self.base.to_dict()}


def _check_time(t: float, horizon: float | None) -> None:
    if t < 0 or (horizon is not None and t > horizon * (1 + 1e-12)):
        raise OutOfHorizon(f"t={t} outside [0, {horizon}]")


def cumulative_hazard(t: float, i: int, hazard: HazardModel, horizon: float | None = None) -> float:
    """Integral of lambda(u, i) over [0, t] by adaptive quadrature."""
    _check_state(i, hazard.n_states)
    _check_time(t, horizon)
    if t == 0:
        return 0.0
    val, _ = integrate.quad(
        lambda u: float(hazard.lam(u, i)), 0.0, t, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200
    )
    return val


def survival(t: float, i: int, hazard: HazardModel, horizon: float | None = None) -> float:
    """Probability of surviving past ``t`` while frozen in state ``i``."""
    return math.exp(-cumulative_hazard(t, i, hazard, horizon))


def density(t: float, i: int, hazard: HazardModel, horizon: float | None = None) -> float:
    return float(hazard.lam(t, i)) * survival(t, i, hazard, horizon)


def interval_integrals(func: Callable[[np.ndarray], np.ndarray], t_grid: np.ndarray,
                       epsabs: float = QUAD_EPSABS) -> np.ndarray:
    """Integrals of ``func`` over each cell [t_k, t_{k+1}] of ``t_grid``.

    All cells are integrated at once by adaptive Gauss-Kronrod on the unit
    interval; ``func`` must be vectorised.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    left = t_grid[:-1]
    width = np.diff(t_grid)
    val, _ = integrate.quad_vec(
        lambda u: width * func(left + u * width),
        0.0,
        1.0,
        epsabs=epsabs,
        epsrel=QUAD_EPSREL,
        norm="max",
    )
    return val


def cumulative_hazard_table(hazard: HazardModel, i: int, t_grid: np.ndarray) -> np.ndarray:
    """Cumulative hazard from t_grid[0] at every node of ``t_grid``."""
    cells = interval_integrals(lambda u: hazard.lam(u, i), t_grid)
    return np.concatenate(([0.0], np.cumsum(cells)))


# --------------------------------------------------------------------------
# health states
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialIntensity:
    """q_{src,dst}(t) = m1 * exp(n1 t)."""

    src: int
    dst: int
    m1: float
    n1: float

    def __call__(self, t):
        return self.m1 * np.exp(self.n1 * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class HealthStateSpace:
    """States 0..n_states-1 (0 = healthy) and their transition intensities.

    Pairs without an entry in ``intensities`` have zero intensity.
    """

    n_states: int
    intensities: tuple[ExponentialIntensity, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "intensities", tuple(self.intensities))
        if self.n_states < 1:
            raise InvalidParameter("at least the healthy state 0 is required")
        seen = set()
        for q in self.intensities:
            if not (0 <= q.src < self.n_states and 0 <= q.dst < self.n_states) or q.src == q.dst:
                raise InvalidParameter(f"bad transition {q.src}->{q.dst}")
            if q.m1 < 0:
                raise InvalidParameter("transition intensities must be >= 0")
            if (q.src, q.dst) in seen:
                raise InvalidParameter(f"duplicate transition {q.src}->{q.dst}")
            seen.add((q.src, q.dst))

    def rate(self, t, i: int, j: int):
        _check_state(i, self.n_states)
        _check_state(j, self.n_states)
        for q in self.intensities:
            if q.src == i and q.dst == j:
                return q(t)
        return np.zeros(np.shape(t)) if np.ndim(t) else 0.0

    def offdiag(self, t) -> np.ndarray:
        """Off-diagonal intensities, shape ``t.shape + (n, n)``; zero diagonal."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.n_states, self.n_states))
        for q in self.intensities:
            out[..., q.src, q.dst] = q(t)
        return out

    def matrix(self, t) -> np.ndarray:
        """Generator Q(t) with rows summing to zero."""
        q = self.offdiag(t)
        idx = np.arange(self.n_states)
        q[..., idx, idx] = -q.sum(axis=-1)
        return q


# --------------------------------------------------------------------------
# full parameter set
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    market: MarketParams
    prefs: PreferenceParams
    habit: HabitParams
    states: HealthStateSpace
    hazard: HazardModel
    income: IncomeModel
    horizon_T: float
    x0: float
    eta0: int = 0

    def __post_init__(self) -> None:
        n = self.states.n_states
        if not self.horizon_T > 0:
            raise InvalidParameter("horizon_T must be positive")
        sizes = {
            "prefs.k_a": len(self.prefs.k_a),
            "hazard": self.hazard.n_states,
            "income.xi": self.income.n_states,
        }
        for name, size in sizes.items():
            if size != n:
                raise InvalidParameter(f"{name} describes {size} states, state space has {n}")
        _check_state(self.eta0, n)
        t = np.linspace(0.0, self.horizon_T, 401)
        for i in range(n):
            lam = np.asarray(self.hazard.lam(t, i))
            if np.any(~np.isfinite(lam)) or np.any(lam < 0):
                raise InvalidParameter(f"hazard for state {i} must be finite and >= 0 on [0, T]")
            if np.any(self.hazard.theta(t, i) < lam):
                raise InvalidParameter("pricing rate theta must be >= lambda")

    @property
    def n_states(self) -> int:
        return self.states.n_states

    @property
    def merton_fraction(self) -> float:
        m = self.market
        return (m.mu - m.r) / (m.sigma**2 * self.prefs.gamma)

    @property
    def kappa(self) -> float:
        """(mu - r)^2 / (2 sigma^2 gamma)."""
        m = self.market
        return (m.mu - m.r) ** 2 / (2.0 * m.sigma**2 * self.prefs.gamma)

    def lam(self, t, i: int):
        return self.hazard.lam(t, i)

    def income_rate(self, t, i: int):
        return income_rate(t, i, self.income)

    def survival(self, t: float, i: int) -> float:
        return survival(t, i, self.hazard, self.horizon_T)

    def density(self, t: float, i: int) -> float:
        return density(t, i, self.hazard, self.horizon_T)


# --------------------------------------------------------------------------
# income, habit, utilities
# --------------------------------------------------------------------------


def income_rate(t, i: int, income: IncomeModel):
    """Labour income rate in state ``i`` at time ``t``."""
    return income.rate(t, i)


def habit_step(h, c, dt: float, habit: HabitParams):
    """Advance dh = (alpha c - beta h) dt over ``dt`` with ``c`` held fixed.

    Uses the exact solution of the linear ODE, so composing steps is exact.
    """
    a, b = habit.alpha, habit.beta
    if b == 0.0:
        return h + a * c * dt
    target = c * a / b
    return target + (h - target) * math.exp(-b * dt)


def _running_utility(weight: float, t, c, h, prefs: PreferenceParams):
    c = np.asarray(c, dtype=float)
    h = np.asarray(h, dtype=float)
    excess = c - h
    if np.any(excess <= 0):
        raise HabitViolation("consumption must exceed the habit level")
    g = prefs.gamma
    out = weight * np.exp(-prefs.rho * np.asarray(t, dtype=float)) * excess ** (1 - g) / (1 - g)
    return out if out.ndim else float(out)


def utility_alive(t, c, h, i: int, prefs: PreferenceParams):
    """k_{a,i} e^{-rho t} (c - h)^(1-gamma) / (1-gamma)."""
    _check_state(i, len(prefs.k_a))
    return _running_utility(prefs.k_a[i], t, c, h, prefs)


def utility_dead(t, c, h, prefs: PreferenceParams):
    return _running_utility(prefs.k_d, t, c, h, prefs)


def terminal_utility(t, x, i: int | None, prefs: PreferenceParams):
    """Bequest/terminal utility; ``i=None`` selects the post-death weight."""
    if i is None:
        weight = prefs.omega_d
    else:
        _check_state(i, len(prefs.omega_a))
        weight = prefs.omega_a[i]
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise NonpositiveWealth("terminal wealth must be positive")
    g = prefs.gamma
    out = weight * np.exp(-prefs.rho * np.asarray(t, dtype=float)) * x ** (1 - g) / (1 - g)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PolicyDecision:
    """Controls at one (t, x, h, state): risky amount, consumption, premium.

    ``p`` is None after the breadwinner's death.
    """

    pi: float
    c: float
    p: float | None = None
    annuity: bool = field(default=False)
