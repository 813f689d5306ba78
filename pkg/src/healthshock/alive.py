"""Solution of the household problem while the breadwinner is alive.

Per health state i the scaled value function is

    Vt(t, x, h, i) = G_i(t)^gamma (x + M_i(t) + h A_i(t))^(1-gamma) / (1-gamma)

and V = Vt / Fbar(t, i).  A_i and M_i solve linear backward ODEs; the G_i
form a nonlinear system coupled through the transition intensities.  All
of them are integrated together, backward from T, with classical RK4.

M_i depends linearly on the habit level at death h_d, so it is stored as
two h_d-free tables: M_i = M_y,i - h_d * M_B,i.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .dead import DeadCoefficients, habit_discount_rate, wealth_error
from .errors import GLossOfPositivity, GridMismatch, StepDoublingFailure
from .model import HazardModel, ModelParams, PolicyDecision, cumulative_hazard_table, _check_state

log = logging.getLogger(__name__)

DEFAULT_STEPS = 4000
STEP_DOUBLING_TOL = 1e-8


@dataclass(frozen=True)
class AliveCoefficients:
    """Per-state coefficient tables on a uniform grid, shape (nodes, states)."""

    t: np.ndarray
    A: np.ndarray
    M_y: np.ndarray
    M_B: np.ndarray
    G: np.ndarray
    t_fine: np.ndarray
    cumhaz: np.ndarray
    dead: DeadCoefficients
    hazard: HazardModel
    step_doubling_rel_change: float = math.nan
    h_d_ref: float | None = None
    _splines: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        splines = {name: CubicSpline(self.t, getattr(self, name), axis=0) for name in ("A", "M_y", "M_B", "G")}
        splines["cumhaz"] = CubicSpline(self.t_fine, self.cumhaz, axis=0)
        object.__setattr__(self, "_splines", splines)

    @property
    def n_states(self) -> int:
        return self.G.shape[1]

    @property
    def grid_dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def coef(self, name: str, t, i: int, nu: int = 0):
        """Interpolated coefficient ``name`` (or its ``nu``-th derivative) for state ``i``."""
        _check_state(i, self.n_states)
        return self._splines[name](t, nu)[..., i]

    def with_table(self, **tables: np.ndarray) -> "AliveCoefficients":
        """Copy with some coefficient tables replaced (used by corruption probes)."""
        fields = {
            name: getattr(self, name)
            for name in ("t", "A", "M_y", "M_B", "G", "t_fine", "cumhaz", "dead", "hazard",
                         "step_doubling_rel_change", "h_d_ref")
        }
        fields.update(tables)
        return AliveCoefficients(**fields)

    def A_at(self, t, i: int):
        return self.coef("A", t, i)

    def G_at(self, t, i: int):
        return self.coef("G", t, i)

    def M_at(self, t, i: int, h_d):
        return self.coef("M_y", t, i) - np.asarray(h_d, dtype=float) * self.coef("M_B", t, i)

    def survival(self, t, i: int):
        return np.exp(-self.coef("cumhaz", t, i))

    def lam(self, t, i: int):
        return self.hazard.lam(t, i)

    def density(self, t, i: int):
        return self.lam(t, i) * self.survival(t, i)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "state", "A", "M_y", "M_B", "G"])
        for k, t in enumerate(self.t):
            for i in range(self.n_states):
                writer.writerow([
                    f"{t:.10g}", i,
                    f"{self.A[k, i]:.17g}", f"{self.M_y[k, i]:.17g}",
                    f"{self.M_B[k, i]:.17g}", f"{self.G[k, i]:.17g}",
                ])
        return buf.getvalue()


@dataclass
class _Inputs:
    """Model inputs tabulated on the half-step grid used by RK4."""

    t: np.ndarray
    lam: np.ndarray
    income: np.ndarray
    cumhaz: np.ndarray
    q: np.ndarray
    B: np.ndarray
    g: np.ndarray


def _tabulate_inputs(params: ModelParams, dead: DeadCoefficients, n_steps: int) -> _Inputs:
    t = np.linspace(0.0, params.horizon_T, 2 * n_steps + 1)
    S = params.n_states
    lam = np.column_stack([np.broadcast_to(params.lam(t, i), t.shape) for i in range(S)])
    income = np.column_stack([np.broadcast_to(params.income_rate(t, i), t.shape) for i in range(S)])
    cumhaz = np.column_stack([cumulative_hazard_table(params.hazard, i, t) for i in range(S)])
    return _Inputs(t=t, lam=lam, income=income, cumhaz=cumhaz, q=params.states.offdiag(t),
                   B=dead.B(t), g=dead.g(t))


def _integrate(params: ModelParams, inp: _Inputs, n_steps: int):
    """Backward RK4 for (A, M_y, M_B, G), all states at once."""
    S = params.n_states
    r = params.market.r
    gamma = params.prefs.gamma
    alpha = params.habit.alpha
    a = habit_discount_rate(params)
    kappa = params.kappa
    k_a = np.asarray(params.prefs.k_a)
    omega_a = np.asarray(params.prefs.omega_a)
    T = params.horizon_T
    dt = T / n_steps

    surv = np.exp(-inp.cumhaz)
    dens = inp.lam * surv
    decay_A = a + inp.lam
    decay_M = r + inp.lam
    src_MB = inp.lam * inp.B[:, None]
    lin_G = -(1.0 - gamma) * (r + inp.lam + kappa) / gamma
    cons_G = (k_a * surv * np.exp(-params.prefs.rho * inp.t)[:, None]) ** (1.0 / gamma)
    death_G = dens ** (1.0 / gamma) * inp.lam ** (1.0 - 1.0 / gamma) * inp.g[:, None]
    qsum = inp.q.sum(axis=-1)
    expo = 1.0 - 1.0 / gamma

    def rhs(j: int, z: np.ndarray) -> np.ndarray:
        A, My, MB, G = z
        if np.any(G <= 0):
            bad = int(np.argmax(G <= 0))
            raise GLossOfPositivity(float(inp.t[j]), bad)
        Gg = G**gamma
        coupling = inp.q[j] @ Gg / Gg - qsum[j]
        return np.stack((
            decay_A[j] * A + 1.0,
            decay_M[j] * My - inp.income[j],
            decay_M[j] * MB - src_MB[j],
            (lin_G[j] - coupling / gamma) * G - cons_G[j] * (1.0 - alpha * A) ** expo - death_G[j],
        ))

    out = np.empty((n_steps + 1, 4, S))
    z = np.zeros((4, S))
    z[3] = (omega_a * surv[-1] * math.exp(-params.prefs.rho * T)) ** (1.0 / gamma)
    out[n_steps] = z
    h = -dt
    for k in range(n_steps, 0, -1):
        j = 2 * k
        k1 = rhs(j, z)
        k2 = rhs(j - 1, z + 0.5 * h * k1)
        k3 = rhs(j - 1, z + 0.5 * h * k2)
        k4 = rhs(j - 2, z + h * k3)
        z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.any(z[3] <= 0):
            raise GLossOfPositivity(float(inp.t[j - 2]), int(np.argmax(z[3] <= 0)))
        out[k - 1] = z
    return out


def solve_alive(
    params: ModelParams,
    dead: DeadCoefficients,
    h_d_ref: float | None = None,
    n_steps: int = DEFAULT_STEPS,
    self_check: bool = True,
) -> AliveCoefficients:
    """Solve the alive-state coefficient system backward from T.

    Parameters
    ----------
    dead : coefficients from :func:`solve_dead` for the same parameters.
    h_d_ref : habit level at death used by default when evaluating M and
        p*; ``None`` means "the current habit" at each evaluation.
    self_check : also solve with half the step and require G_i(0) to move
        by less than 1e-8 relative.
    """
    if not math.isclose(dead.horizon, params.horizon_T, rel_tol=1e-12):
        raise GridMismatch(f"dead horizon {dead.horizon} != T={params.horizon_T}")
    if not math.isclose(dead.rate, habit_discount_rate(params), rel_tol=1e-12):
        raise GridMismatch("dead coefficients were solved for different habit/market parameters")

    inp = _tabulate_inputs(params, dead, n_steps)
    sol = _integrate(params, inp, n_steps)
    rel_change = math.nan
    if self_check:
        fine = _integrate(params, _tabulate_inputs(params, dead, 2 * n_steps), 2 * n_steps)
        G0, G0_fine = sol[0, 3], fine[0, 3]
        rel_change = float(np.max(np.abs(G0_fine - G0) / np.abs(G0)))
        if rel_change >= STEP_DOUBLING_TOL:
            raise StepDoublingFailure(
                f"halving the RK4 step moved G(0) by {rel_change:.3g} relative (limit {STEP_DOUBLING_TOL})"
            )
        log.debug("step-doubling relative change in G(0): %.3g", rel_change)

    return AliveCoefficients(
        t=inp.t[::2].copy(),
        A=sol[:, 0, :].copy(),
        M_y=sol[:, 1, :].copy(),
        M_B=sol[:, 2, :].copy(),
        G=sol[:, 3, :].copy(),
        t_fine=inp.t,
        cumhaz=inp.cumhaz,
        dead=dead,
        hazard=params.hazard,
        step_doubling_rel_change=rel_change,
        h_d_ref=h_d_ref,
    )


# --------------------------------------------------------------------------
# value function and policy
# --------------------------------------------------------------------------


def _h_d(h, h_d, coeffs: AliveCoefficients):
    if h_d is not None:
        return h_d
    return coeffs.h_d_ref if coeffs.h_d_ref is not None else h


def alive_effective_wealth(t, x, h, i: int, coeffs: AliveCoefficients, h_d=None):
    """x + M_i(t) + h A_i(t)."""
    h_d = _h_d(h, h_d, coeffs)
    return np.asarray(x, dtype=float) + coeffs.M_at(t, i, h_d) + np.asarray(h, dtype=float) * coeffs.A_at(t, i)


def alive_value_tilde(t, x, h, i: int, coeffs: AliveCoefficients, params: ModelParams, h_d=None):
    w = alive_effective_wealth(t, x, h, i, coeffs, h_d)
    if np.any(w <= 0):
        raise wealth_error(w, "alive")
    gamma = params.prefs.gamma
    out = coeffs.G_at(t, i) ** gamma * w ** (1.0 - gamma) / (1.0 - gamma)
    return out if np.ndim(out) else float(out)


def alive_value(t, x, h, i: int, coeffs: AliveCoefficients, params: ModelParams, h_d=None):
    """V(t, x, h, i) = Vt / Fbar(t, i)."""
    out = alive_value_tilde(t, x, h, i, coeffs, params, h_d) / coeffs.survival(t, i)
    return out if np.ndim(out) else float(out)


def alive_consumption_factor(t, i: int, coeffs: AliveCoefficients, params: ModelParams):
    """(c* - h) per unit of effective wealth in state ``i``."""
    gamma = params.prefs.gamma
    t = np.asarray(t, dtype=float)
    weight = params.prefs.k_a[i] * coeffs.survival(t, i) * np.exp(-params.prefs.rho * t)
    return (
        (1.0 - params.habit.alpha * coeffs.A_at(t, i)) ** (-1.0 / gamma)
        * weight ** (1.0 / gamma)
        / coeffs.G_at(t, i)
    )


def alive_insurance_factor(t, i: int, coeffs: AliveCoefficients, params: ModelParams):
    """lambda^(1-1/gamma) f^(1/gamma) g / G_i: premium per unit of effective wealth.

    Written without lambda^(-1/gamma) so a zero hazard gives a zero premium.
    """
    gamma = params.prefs.gamma
    lam = coeffs.lam(t, i)
    return (
        lam ** (1.0 - 1.0 / gamma)
        * coeffs.density(t, i) ** (1.0 / gamma)
        * coeffs.dead.g(t)
        / coeffs.G_at(t, i)
    )


def alive_controls(t, x, h, i: int, coeffs: AliveCoefficients, params: ModelParams, h_d=None):
    """Vectorised (pi*, c*, p*) arrays; see :func:`alive_policy`."""
    h_d = _h_d(h, h_d, coeffs)
    w = alive_effective_wealth(t, x, h, i, coeffs, h_d)
    if np.any(w <= 0):
        raise wealth_error(w, "alive")
    x = np.asarray(x, dtype=float)
    pi = params.merton_fraction * w
    c = np.asarray(h, dtype=float) + w * alive_consumption_factor(t, i, coeffs, params)
    lam = coeffs.lam(t, i)
    p = lam * (np.asarray(h_d, dtype=float) * coeffs.dead.B(t) - x) + w * alive_insurance_factor(t, i, coeffs, params)
    return pi, c, p


def alive_policy(t: float, x: float, h: float, i: int, coeffs: AliveCoefficients,
                 params: ModelParams, h_d: float | None = None) -> PolicyDecision:
    """Optimal (pi*, c*, p*) while alive.

    A negative premium is returned as-is and flagged as an annuity: the
    household sells cover on its own life in the frictionless market.
    """
    pi, c, p = alive_controls(t, x, h, i, coeffs, params, h_d)
    p = float(p)
    return PolicyDecision(pi=float(pi), c=float(c), p=p, annuity=p < 0)
