"""Independent numerical checks of the solved value functions and policies.

* HJB residuals: the closed-form value function and controls substituted
  into the HJB bracket, with analytic partials in (x, h) and spline
  derivatives in t.
* FOC checks: controls rebuilt from finite-difference partials of V.
* ODE consistency: finite-difference derivatives of the coefficient
  tables against their right-hand sides.
* Monte Carlo: objective under the optimal policy against V(0, x0, h0,
  eta0), plus a dominance battery of perturbed policies.

Relative residuals divide by the sum of absolute values of the bracket
terms, so they are invariant to the (tiny) overall scale of utility.
Throughout, the habit level at death h_d is the grid habit h and is held
fixed when differentiating in h.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .alive import (
    AliveCoefficients,
    alive_consumption_factor,
    alive_insurance_factor,
    alive_value,
    solve_alive,
)
from .dead import DeadCoefficients, dead_consumption_factor, habit_discount_rate, solve_dead
from .errors import ConfigError, GridOutsideDomain
from .model import ModelParams
from .simulation import MCEstimate, OptimalPolicy, SimConfig, estimate_difference, estimate_objective, simulate

DEAD_HJB_TOL = 1e-6
ALIVE_HJB_TOL = 1e-5
FOC_TOL = 1e-5
ODE_TOL = 1e-6
FD_REL_STEP = 1e-4
WORST_K = 10

PERTURBATIONS: tuple[tuple[str, float], ...] = (
    ("merton", 0.5),
    ("merton", 1.5),
    ("consumption", 0.9),
    ("consumption", 1.1),
    ("premium", 0.0),
    ("premium", 2.0),
)


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid: n_t times x n_x wealth levels x n_h habit levels.

    With ``coords="effective"`` wealth is laid out log-uniformly in
    effective wealth (so every point is admissible) and mapped back to
    x; with ``coords="raw"`` x runs linearly over [x_min, x_max] and
    points outside the domain raise GridOutsideDomain.
    """

    n_t: int = 50
    n_x: int = 20
    n_h: int = 10
    t_min: float = 0.0
    t_max: float | None = None
    w_min: float = 0.1
    w_max: float = 1e6
    h_min: float = 1.0
    h_max: float = 1e4
    coords: str = "effective"
    x_min: float = 1e3
    x_max: float = 1e6

    def __post_init__(self) -> None:
        if min(self.n_t, self.n_x, self.n_h) < 1:
            raise ConfigError("grid counts must all be >= 1")
        if self.coords not in ("effective", "raw"):
            raise ConfigError("coords must be 'effective' or 'raw'")
        if not (0 < self.w_min <= self.w_max):
            raise ConfigError("need 0 < w_min <= w_max")
        if not (self.h_min <= self.h_max) or not (self.x_min <= self.x_max):
            raise ConfigError("grid ranges must be ordered")

    def times(self, horizon: float) -> np.ndarray:
        t_max = horizon if self.t_max is None else self.t_max
        if not (0 <= self.t_min <= t_max <= horizon):
            raise GridOutsideDomain(f"time range [{self.t_min}, {t_max}] outside [0, {horizon}]")
        return np.linspace(self.t_min, t_max, self.n_t)

    def wealth(self) -> np.ndarray:
        if self.coords == "effective":
            return np.geomspace(self.w_min, self.w_max, self.n_x)
        return np.linspace(self.x_min, self.x_max, self.n_x)

    def habits(self) -> np.ndarray:
        return np.linspace(self.h_min, self.h_max, self.n_h)

    @property
    def size(self) -> int:
        return self.n_t * self.n_x * self.n_h

    def describe(self) -> str:
        w = f"w=[{self.w_min:g},{self.w_max:g}]" if self.coords == "effective" else f"x=[{self.x_min:g},{self.x_max:g}]"
        t_max = "T" if self.t_max is None else f"{self.t_max:g}"
        return (f"{self.n_t}x{self.n_x}x{self.n_h} t=[{self.t_min:g},{t_max}] {w} "
                f"h=[{self.h_min:g},{self.h_max:g}]")


@dataclass(frozen=True)
class ResidualReport:
    """Worst-case residuals of one check over a grid.

    ``worst_point`` is (t, x, h, state) with state -1 for the dead problem;
    ``worst`` lists the top rows as (t, x, h, state, abs, rel).  Points
    where a required value is undefined count as infinite residuals.
    """

    name: str
    max_abs_residual: float
    max_rel_residual: float
    grid_spec: str
    worst_point: tuple[float, float, float, int]
    tolerance: float
    n_points: int
    n_undefined: int = 0
    per_state: dict = field(default_factory=dict)
    worst: tuple = ()
    boundary_residual: float | None = None

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_residual <= self.tolerance)

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        t, x, h, s = self.worst_point
        lines = [
            f"{self.name}: {status} max_rel={self.max_rel_residual:.3e} (tol {self.tolerance:.0e}) "
            f"max_abs={self.max_abs_residual:.3e} points={self.n_points} undefined={self.n_undefined}",
            f"  grid {self.grid_spec}",
            f"  worst at t={t:.6g} x={x:.6g} h={h:.6g} state={s}",
        ]
        for state, rel in sorted(self.per_state.items()):
            lines.append(f"  state {state}: max_rel={rel:.3e}")
        if self.boundary_residual is not None:
            lines.append(f"  boundary residual at T: {self.boundary_residual:.3e}")
        return "\n".join(lines)

    def to_csv_rows(self) -> list[list]:
        return [[self.name, f"{t:.10g}", f"{x:.10g}", f"{h:.10g}", s, f"{a:.6e}", f"{r:.6e}"]
                for t, x, h, s, a, r in self.worst]


CSV_HEADER = ["check", "t", "x", "h", "state", "abs_residual", "rel_residual"]


def reports_csv(reports: list[ResidualReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rep in reports:
        writer.writerows(rep.to_csv_rows())
    return buf.getvalue()


def _summarise(name: str, tol: float, grid: GridSpec, blocks: list[tuple[int, np.ndarray, np.ndarray,
               np.ndarray, np.ndarray, np.ndarray, np.ndarray]], boundary: float | None = None) -> ResidualReport:
    """Reduce per-state arrays (state, t, x, h, abs, rel) to a report."""
    rows = []
    per_state = {}
    n_points = 0
    n_undef = 0
    for state, t, x, h, ab, rel, _ in blocks:
        t, x, h, ab, rel = (np.broadcast_to(v, rel.shape).ravel() for v in (t, x, h, ab, rel))
        rel = np.where(np.isnan(rel), np.inf, rel)
        ab = np.where(np.isnan(ab), np.inf, ab)
        n_points += rel.size
        n_undef += int(np.count_nonzero(~np.isfinite(rel)))
        per_state[state] = float(rel.max())
        order = np.lexsort((np.arange(rel.size), -rel))[:WORST_K]
        rows.extend((float(t[k]), float(x[k]), float(h[k]), state, float(ab[k]), float(rel[k])) for k in order)
    rows.sort(key=lambda r: (-r[5], r[3], r[0], r[1], r[2]))
    worst = rows[0]
    return ResidualReport(
        name=name,
        max_abs_residual=float(max(r[4] for r in rows) if rows else 0.0),
        max_rel_residual=float(worst[5]),
        grid_spec=grid.describe(),
        worst_point=worst[:4],
        tolerance=tol,
        n_points=n_points,
        n_undefined=n_undef,
        per_state=per_state,
        worst=tuple(rows[:WORST_K]),
        boundary_residual=boundary,
    )


# --------------------------------------------------------------------------
# grid helpers
# --------------------------------------------------------------------------


def _dead_points(coeffs: DeadCoefficients, params: ModelParams, grid: GridSpec):
    t = grid.times(params.horizon_T)[:, None, None]
    h = grid.habits()[None, None, :]
    B = coeffs.B(t)
    if grid.coords == "effective":
        w = grid.wealth()[None, :, None]
        x = w + h * B
    else:
        x = grid.wealth()[None, :, None]
        w = x - h * B
        if np.any(w <= 0):
            raise GridOutsideDomain("grid contains points with x - h B(t) <= 0")
    return t, x, h


def _alive_parts(co: AliveCoefficients, t, i: int, h_d):
    return {
        "A": co.coef("A", t, i),
        "dA": co.coef("A", t, i, 1),
        "M": co.coef("M_y", t, i) - h_d * co.coef("M_B", t, i),
        "dM": co.coef("M_y", t, i, 1) - h_d * co.coef("M_B", t, i, 1),
        "G": co.coef("G", t, i),
        "dG": co.coef("G", t, i, 1),
    }


def _alive_points(co: AliveCoefficients, params: ModelParams, grid: GridSpec, i: int):
    t = grid.times(params.horizon_T)[:, None, None]
    h = grid.habits()[None, None, :]
    part = _alive_parts(co, t, i, h)
    if grid.coords == "effective":
        w = grid.wealth()[None, :, None]
        x = w - part["M"] - h * part["A"]
    else:
        x = grid.wealth()[None, :, None]
        if np.any(x + part["M"] + h * part["A"] <= 0):
            raise GridOutsideDomain(f"grid contains points with nonpositive effective wealth in state {i}")
    return t, x, h


# --------------------------------------------------------------------------
# HJB residuals
# --------------------------------------------------------------------------


def _rel(terms: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    total = sum(terms)
    scale = sum(np.abs(term) for term in terms)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.abs(total), np.abs(total) / scale


def check_dead_hjb(coeffs: DeadCoefficients, params: ModelParams, grid: GridSpec | None = None) -> ResidualReport:
    """Post-death HJB bracket at the closed-form (pi*, c*)."""
    grid = grid or GridSpec()
    m, prefs, hab = params.market, params.prefs, params.habit
    gamma = prefs.gamma
    t, x, h = _dead_points(coeffs, params, grid)
    B, dB = coeffs.B(t), coeffs.B_prime(t)
    g, dg = coeffs.g(t), coeffs.g_prime(t)
    w = x - h * B
    V_x = g**gamma * w**-gamma
    V_xx = -gamma * g**gamma * w ** (-gamma - 1)
    V_h = -B * V_x
    V_t = -h * dB * V_x + gamma / (1 - gamma) * g ** (gamma - 1) * dg * w ** (1 - gamma)
    pi = params.merton_fraction * w
    c = h + w * dead_consumption_factor(t, coeffs, params)
    terms = [
        V_t,
        V_x * (m.r * x + pi * (m.mu - m.r) - c),
        V_h * (hab.alpha * c - hab.beta * h),
        0.5 * m.sigma**2 * pi**2 * V_xx,
        prefs.k_d * np.exp(-prefs.rho * t) * (c - h) ** (1 - gamma) / (1 - gamma),
    ]
    ab, rel = _rel(terms)
    # V_d(T) against the bequest utility
    xT = grid.wealth()
    V_T = coeffs.g(params.horizon_T) ** gamma * xT ** (1 - gamma) / (1 - gamma)
    psi = prefs.omega_d * math.exp(-prefs.rho * params.horizon_T) * xT ** (1 - gamma) / (1 - gamma)
    boundary = float(np.max(np.abs(V_T - psi) / np.abs(psi)))
    return _summarise("dead_hjb", DEAD_HJB_TOL, grid, [(-1, t, x, h, ab, rel, None)], boundary)


def _alive_tilde(co: AliveCoefficients, params: ModelParams, t, x, h, j: int, h_d):
    """Vt in state j, NaN where its effective wealth is not positive."""
    gamma = params.prefs.gamma
    part = _alive_parts(co, t, j, h_d)
    w = x + part["M"] + h * part["A"]
    with np.errstate(invalid="ignore"):
        return np.where(w > 0, part["G"] ** gamma * np.abs(w) ** (1 - gamma) / (1 - gamma), np.nan)


def _alive_terms(co: AliveCoefficients, params: ModelParams, t, x, h, i: int):
    m, prefs, hab = params.market, params.prefs, params.habit
    gamma = prefs.gamma
    h_d = h
    part = _alive_parts(co, t, i, h_d)
    A, M, G = part["A"], part["M"], part["G"]
    w = x + M + h * A
    Gg = G**gamma
    V_x = Gg * w**-gamma
    V_xx = -gamma * Gg * w ** (-gamma - 1)
    V_h = A * V_x
    V_t = (part["dM"] + h * part["dA"]) * V_x + gamma / (1 - gamma) * G ** (gamma - 1) * part["dG"] * w ** (1 - gamma)
    V_i = Gg * w ** (1 - gamma) / (1 - gamma)
    lam = np.broadcast_to(co.lam(t, i), np.shape(t))
    surv = co.survival(t, i)
    dens = lam * surv
    B = co.dead.B(t)
    g = co.dead.g(t)
    pi = params.merton_fraction * w
    c = h + w * alive_consumption_factor(t, i, co, params)
    p = lam * (h_d * B - x) + w * alive_insurance_factor(t, i, co, params)
    y = params.income_rate(t, i)
    with np.errstate(divide="ignore", invalid="ignore"):
        estate = np.where(lam > 0, x + p / lam - h_d * B, 1.0)
    death = np.where(lam > 0, dens * g**gamma * estate ** (1 - gamma) / (1 - gamma), 0.0)
    coupling = np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(h)))
    for j in range(co.n_states):
        if j == i:
            continue
        q = params.states.rate(t, i, j)
        if np.all(q == 0):
            continue
        coupling = coupling + q * (_alive_tilde(co, params, t, x, h, j, h_d) - V_i)
    return [
        V_t,
        V_x * (m.r * x + pi * (m.mu - m.r) + y - p - c),
        V_h * (hab.alpha * c - hab.beta * h),
        0.5 * m.sigma**2 * pi**2 * V_xx,
        prefs.k_a[i] * surv * np.exp(-prefs.rho * t) * (c - h) ** (1 - gamma) / (1 - gamma),
        death,
        coupling,
    ]


def check_alive_hjb(coeffs: AliveCoefficients, dead: DeadCoefficients | None, params: ModelParams,
                    grid: GridSpec | None = None) -> ResidualReport:
    """Alive HJB bracket (scaled value Vt) at the closed-form controls, per state.

    The Markov coupling uses the other states' Vt at the same (t, x, h);
    where that is undefined (nonpositive effective wealth in state j) the
    residual is reported as infinite.
    """
    grid = grid or GridSpec()
    if dead is not None and dead is not coeffs.dead:
        coeffs = coeffs.with_table(dead=dead)
    blocks = []
    for i in range(coeffs.n_states):
        t, x, h = _alive_points(coeffs, params, grid, i)
        ab, rel = _rel(_alive_terms(coeffs, params, t, x, h, i))
        blocks.append((i, t, x, h, ab, rel, None))
    return _summarise("alive_hjb", ALIVE_HJB_TOL, grid, blocks)


# --------------------------------------------------------------------------
# first-order conditions by finite differences
# --------------------------------------------------------------------------


def _fd(f, z, dz):
    """First and second central differences of f at z with step dz."""
    fp, f0, fm = f(z + dz), f(z), f(z - dz)
    return (fp - fm) / (2 * dz), (fp - 2 * f0 + fm) / dz**2


def _foc_gap(closed, rebuilt, scale):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.abs(closed - rebuilt), np.abs(closed - rebuilt) / scale


def check_focs(coeffs: AliveCoefficients, params: ModelParams, grid: GridSpec | None = None) -> ResidualReport:
    """Closed-form controls against controls rebuilt from finite-difference partials.

    Steps are FD_REL_STEP times the effective wealth, in x directly and in
    h through the A (or B) coefficient.  Gaps are relative to |pi|, to
    c - h for consumption, and to the sum of the absolute terms of p.
    """
    grid = grid or GridSpec()
    m, prefs, hab = params.market, params.prefs, params.habit
    gamma = prefs.gamma
    dead = coeffs.dead
    blocks = []

    # dead problem
    t, x, h = _dead_points(dead, params, grid)
    B = dead.B(t)
    g = dead.g(t)
    w = x - h * B

    # bumps are added to the effective wealth so large x and h do not cancel
    def V_dead(dxx, dhh):
        return g**gamma * (w + dxx - dhh * B) ** (1 - gamma) / (1 - gamma)

    dx = FD_REL_STEP * w
    dh = np.where(B > 0, FD_REL_STEP * w / np.where(B > 0, B, 1.0), FD_REL_STEP * np.maximum(h, 1.0))
    V_x, V_xx = _fd(lambda z: V_dead(z, 0.0), 0.0, dx)
    V_h, _ = _fd(lambda z: V_dead(0.0, z), 0.0, dh)
    pi_fd = -(m.mu - m.r) * V_x / (m.sigma**2 * V_xx)
    c_fd = h + (prefs.k_d * np.exp(-prefs.rho * t)) ** (1 / gamma) * (V_x - hab.alpha * V_h) ** (-1 / gamma)
    pi = params.merton_fraction * w
    c = h + w * dead_consumption_factor(t, dead, params)
    a1, r1 = _foc_gap(pi, pi_fd, np.abs(pi))
    a2, r2 = _foc_gap(c, c_fd, c - h)
    blocks.append((-1, t, x, h, np.maximum(a1, a2), np.maximum(r1, r2), None))

    for i in range(coeffs.n_states):
        t, x, h = _alive_points(coeffs, params, grid, i)
        part = _alive_parts(coeffs, t, i, h)
        A, M, G = part["A"], part["M"], part["G"]
        w = x + M + h * A
        h_d = h

        def V_alive(dxx, dhh):
            return G**gamma * (w + dxx + dhh * A) ** (1 - gamma) / (1 - gamma)

        dx = FD_REL_STEP * w
        dh = np.where(A < 0, FD_REL_STEP * w / np.where(A < 0, -A, 1.0), FD_REL_STEP * np.maximum(h, 1.0))
        V_x, V_xx = _fd(lambda z: V_alive(z, 0.0), 0.0, dx)
        V_h, _ = _fd(lambda z: V_alive(0.0, z), 0.0, dh)
        lam = np.broadcast_to(coeffs.lam(t, i), np.shape(t))
        surv = coeffs.survival(t, i)
        dens = lam * surv
        Bt = dead.B(t)
        gt = dead.g(t)
        pi_fd = -(m.mu - m.r) * V_x / (m.sigma**2 * V_xx)
        weight = prefs.k_a[i] * surv * np.exp(-prefs.rho * t)
        c_fd = h + weight ** (1 / gamma) * (V_x - hab.alpha * V_h) ** (-1 / gamma)
        ins_fd = lam ** (1 - 1 / gamma) * V_x ** (-1 / gamma) * dens ** (1 / gamma) * gt
        p_fd = lam * (h_d * Bt - x) + ins_fd
        pi = params.merton_fraction * w
        c = h + w * alive_consumption_factor(t, i, coeffs, params)
        ins = w * alive_insurance_factor(t, i, coeffs, params)
        p = lam * (h_d * Bt - x) + ins
        a1, r1 = _foc_gap(pi, pi_fd, np.abs(pi))
        a2, r2 = _foc_gap(c, c_fd, c - h)
        p_scale = lam * (h_d * Bt + np.abs(x)) + np.abs(ins)
        a3, r3 = _foc_gap(p, p_fd, np.where(p_scale > 0, p_scale, 1.0))
        blocks.append((i, t, x, h, np.maximum.reduce([a1, a2, a3]), np.maximum.reduce([r1, r2, r3]), None))
    return _summarise("focs", FOC_TOL, grid, blocks)


# --------------------------------------------------------------------------
# coefficient ODE consistency
# --------------------------------------------------------------------------


def _fd4(values: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order central derivative on interior nodes 2..n-2."""
    v = values
    return (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * dt)


def check_ode_consistency(coeffs: AliveCoefficients, params: ModelParams) -> ResidualReport:
    """Tabulated A_i, M_i (both parts), G_i and g against their ODE right-hand sides."""
    gamma = params.prefs.gamma
    r = params.market.r
    alpha = params.habit.alpha
    a = habit_discount_rate(params)
    kappa = params.kappa
    t = coeffs.t
    dt = coeffs.grid_dt
    ti = t[2:-2]
    dead = coeffs.dead
    B = dead.B(ti)
    g = dead.g(ti)
    blocks = []

    # g on its own grid
    td = dead.t
    gd = dead.g_values
    Bd = dead.B(td[2:-2])
    src = (params.prefs.k_d * np.exp(-params.prefs.rho * td[2:-2])) ** (1 / gamma) * (1 + alpha * Bd) ** (1 - 1 / gamma)
    lin = -(1 - gamma) / gamma * (r + kappa) * gd[2:-2]
    err = np.abs(_fd4(gd, dead.grid_dt) - (lin - src)) / (np.abs(lin) + np.abs(src))
    blocks.append((-1, td[2:-2], np.zeros(1), np.zeros(1), err * 0, err, None))

    G = coeffs.G[2:-2]
    for i in range(coeffs.n_states):
        lam = np.broadcast_to(params.lam(ti, i), ti.shape)
        y = np.broadcast_to(params.income_rate(ti, i), ti.shape)
        surv = coeffs.survival(ti, i)
        A = coeffs.A[2:-2, i]
        My = coeffs.M_y[2:-2, i]
        MB = coeffs.M_B[2:-2, i]
        Gi = G[:, i]
        coupling = np.zeros_like(ti)
        for j in range(coeffs.n_states):
            if j != i:
                coupling += params.states.rate(ti, i, j) * ((G[:, j] / Gi) ** gamma - 1)
        G_terms = [
            -((1 - gamma) * (r + lam + kappa) + coupling) / gamma * Gi,
            -(params.prefs.k_a[i] * surv * np.exp(-params.prefs.rho * ti)) ** (1 / gamma) * (1 - alpha * A) ** (1 - 1 / gamma),
            -(lam * surv) ** (1 / gamma) * lam ** (1 - 1 / gamma) * g,
        ]
        checks = [
            (coeffs.A[:, i], [(a + lam) * A, np.ones_like(A)]),
            (coeffs.M_y[:, i], [(r + lam) * My, -y]),
            (coeffs.M_B[:, i], [(r + lam) * MB, -lam * B]),
            (coeffs.G[:, i], G_terms),
        ]
        worst = np.zeros_like(ti)
        for table, terms in checks:
            rhs = sum(terms)
            scale = sum(np.abs(term) for term in terms)
            with np.errstate(invalid="ignore", divide="ignore"):
                e = np.abs(_fd4(table, dt) - rhs) / np.where(scale > 0, scale, 1.0)
            worst = np.maximum(worst, e)
        blocks.append((i, ti, np.zeros(1), np.zeros(1), worst * 0, worst, None))
    grid = GridSpec(n_t=len(ti), n_x=1, n_h=1)
    return _summarise("ode_consistency", ODE_TOL, grid, blocks)


# --------------------------------------------------------------------------
# corruption probes
# --------------------------------------------------------------------------


def corrupt(coeffs: AliveCoefficients, name: str, eps: float, state: int = 0) -> AliveCoefficients:
    """Multiply one coefficient table by (1 + eps).

    ``name`` is "g" (post-death g), or "A", "M_y", "M_B", "G" for the
    column of ``state``.
    """
    if name == "g":
        return coeffs.with_table(dead=coeffs.dead.scaled(1.0 + eps))
    if name not in ("A", "M_y", "M_B", "G"):
        raise ConfigError(f"unknown coefficient {name!r}; expected g, A, M_y, M_B or G")
    table = getattr(coeffs, name).copy()
    table[:, state] *= 1.0 + eps
    return coeffs.with_table(**{name: table})


@dataclass(frozen=True)
class VerificationSuite:
    dead_hjb: ResidualReport
    alive_hjb: ResidualReport
    focs: ResidualReport
    ode: ResidualReport

    @property
    def reports(self) -> list[ResidualReport]:
        return [self.dead_hjb, self.alive_hjb, self.focs, self.ode]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def run_suite(coeffs: AliveCoefficients, params: ModelParams, grid: GridSpec | None = None) -> VerificationSuite:
    grid = grid or GridSpec()
    return VerificationSuite(
        dead_hjb=check_dead_hjb(coeffs.dead, params, grid),
        alive_hjb=check_alive_hjb(coeffs, None, params, grid),
        focs=check_focs(coeffs, params, grid),
        ode=check_ode_consistency(coeffs, params),
    )


# --------------------------------------------------------------------------
# Monte Carlo against the closed form
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DominanceResult:
    label: str
    estimate: MCEstimate
    difference: MCEstimate  # J_perturbed - J_optimal

    @property
    def passed(self) -> bool:
        return self.difference.mean <= 3.0 * self.difference.std_error


@dataclass(frozen=True)
class MCReport:
    closed_form: float
    estimate: MCEstimate
    dominance: tuple[DominanceResult, ...] = ()

    @property
    def z_score(self) -> float:
        if self.estimate.std_error == 0:
            return 0.0 if self.estimate.mean == self.closed_form else math.inf
        return (self.estimate.mean - self.closed_form) / self.estimate.std_error

    @property
    def within_3se(self) -> bool:
        return abs(self.z_score) <= 3.0

    @property
    def rel_std_error(self) -> float:
        return self.estimate.std_error / abs(self.closed_form)

    @property
    def value_passed(self) -> bool:
        return self.within_3se and self.rel_std_error <= 5e-3

    @property
    def dominance_passed(self) -> bool:
        return all(d.passed for d in self.dominance)

    def to_text(self) -> str:
        e = self.estimate
        lines = [
            f"mc_value: {'PASS' if self.value_passed else 'FAIL'} J={e.mean:.6e} se={e.std_error:.3e} "
            f"V={self.closed_form:.6e} z={self.z_score:.3f} rel_se={self.rel_std_error:.3e} "
            f"penalized={e.n_penalized}",
        ]
        for d in self.dominance:
            lines.append(
                f"dominance {d.label}: {'PASS' if d.passed else 'FAIL'} J={d.estimate.mean:.6e} "
                f"diff={d.difference.mean:.3e} se={d.difference.std_error:.3e} penalized={d.estimate.n_penalized}"
            )
        return "\n".join(lines)


def check_mc_value(params: ModelParams, cfg: SimConfig, coeffs: AliveCoefficients | None = None,
                   perturbations: tuple[tuple[str, float], ...] = PERTURBATIONS,
                   h_d_ref: float | None = None) -> MCReport:
    """MC objective under the optimal policy against V(0, x0, h0, eta0).

    Every perturbed policy reuses ``cfg`` (same seed), so the dominance
    comparison uses common random numbers.
    """
    if coeffs is None:
        coeffs = solve_alive(params, solve_dead(params), h_d_ref=h_d_ref)
    policy = OptimalPolicy(params, coeffs, h_d_ref=h_d_ref)
    base = simulate(params, policy, cfg)
    est = estimate_objective(base)
    V = alive_value(0.0, params.x0, params.habit.h0, params.eta0, coeffs, params, h_d=policy.h_d_ref)
    results = []
    for name, factor in perturbations:
        bundle = simulate(params, policy.perturbed(**{name: factor}), cfg)
        results.append(DominanceResult(label=f"{name}:{factor:g}", estimate=estimate_objective(bundle),
                                       difference=estimate_difference(bundle, base)))
    return MCReport(closed_form=float(V), estimate=est, dominance=tuple(results))


@dataclass(frozen=True)
class DtHalvingReport:
    coarse: MCEstimate
    fine: MCEstimate

    @property
    def combined_se(self) -> float:
        return math.hypot(self.coarse.std_error, self.fine.std_error)

    @property
    def passed(self) -> bool:
        return abs(self.fine.mean - self.coarse.mean) < 2.0 * self.combined_se


def check_mc_dt_halving(params: ModelParams, cfg: SimConfig, coeffs: AliveCoefficients | None = None,
                        h_d_ref: float | None = None) -> DtHalvingReport:
    """J at dt and dt/2 (independent draws since the step counts differ)."""
    if coeffs is None:
        coeffs = solve_alive(params, solve_dead(params), h_d_ref=h_d_ref)
    policy = OptimalPolicy(params, coeffs, h_d_ref=h_d_ref)
    coarse = estimate_objective(simulate(params, policy, cfg))
    fine_cfg = SimConfig(**{**cfg.__dict__, "dt": cfg.dt / 2})
    fine = estimate_objective(simulate(params, policy, fine_cfg))
    return DtHalvingReport(coarse=coarse, fine=fine)
