"""Forward Monte Carlo of wealth, habit, health state and death.

Controls are evaluated at the start of each step and held fixed over it.
Given frozen controls the wealth SDE is linear in X, so each step is
integrated exactly in distribution:

    X' = X e^{r dt} + b (e^{r dt} - 1)/r + sigma pi sqrt((e^{2 r dt} - 1)/(2 r)) Z

with b = pi (mu - r) + y - p - c.  The habit uses its exact linear-ODE
step.  Death and health transitions are Bernoulli events per step drawn
from one uniform: death if U < lambda dt, otherwise the first j whose
cumulative intensity sum (lambda + sum_{j' <= j} q_ij') dt exceeds U.

Two engines share these semantics: a compiled kernel for policies that
are affine in (x, h) at each (t, state), and a vectorised numpy engine for
arbitrary :class:`PolicyOracle` callables.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .alive import AliveCoefficients, alive_consumption_factor, alive_insurance_factor
from .dead import dead_consumption_factor
from .errors import ConfigError, EmptyBundle, PathBlowup, StepTooCoarse
from .model import ModelParams

MAX_EVENT_PROB = 0.1
DEFAULT_PENALTY = -1.0

# columns of the per-path result matrix
_UTIL, _RUN, _TERM, _TAU, _STATE, _XT, _MINW, _PEN, _NTR, _HT, _BLOW = range(11)
_NCOL = 11
# row order inside the affine policy tables
W_ROW, PI_ROW, C_ROW, P_ROW = range(4)


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyTables:
    """Affine controls on the simulation grid.

    ``alive[k, i, row]`` and ``dead[k, row]`` hold (const, x-coef, h-coef)
    so that value = const + x-coef * x + h-coef * h.  Rows are
    (effective wealth, pi, c, p) alive and (effective wealth, pi, c) dead.
    """

    alive: np.ndarray
    dead: np.ndarray


class PolicyOracle:
    """Feedback policy: (t, x, h, i) -> (pi, c, p) alive, (t, x, h) -> (pi, c) dead.

    All methods take array ``x``/``h`` and return arrays.  The effective
    wealth methods define admissibility (> 0 required); the default is
    "always admissible".
    """

    h_d_ref: float | None = None

    def decide_alive(self, t: float, x, h, i: int):
        raise NotImplementedError

    def decide_dead(self, t: float, x, h):
        raise NotImplementedError

    def alive_wealth(self, t: float, x, h, i: int):
        return np.full(np.shape(x), np.inf)

    def dead_wealth(self, t: float, x, h):
        return np.full(np.shape(x), np.inf)

    def tables(self, t_grid: np.ndarray, n_states: int) -> PolicyTables | None:
        """Affine tables for the compiled engine, or None if not affine."""
        return None


def _affine_eval(coef: np.ndarray, x, h):
    return coef[..., 0] + coef[..., 1] * x + coef[..., 2] * h


class AffinePolicy(PolicyOracle):
    """Policy given by tables evaluated at the nearest lower grid time."""

    def __init__(self, t_grid: np.ndarray, tables: PolicyTables, h_d_ref: float | None = None):
        self._t = np.asarray(t_grid, dtype=float)
        self._tables = tables
        self.h_d_ref = h_d_ref

    def _k(self, t: float) -> int:
        k = int(np.searchsorted(self._t, t + 1e-12 * max(1.0, abs(t)), side="right") - 1)
        return min(max(k, 0), len(self._t) - 1)

    def decide_alive(self, t, x, h, i):
        row = self._tables.alive[self._k(t), i]
        return tuple(_affine_eval(row[r], x, h) for r in (PI_ROW, C_ROW, P_ROW))

    def decide_dead(self, t, x, h):
        row = self._tables.dead[self._k(t)]
        return tuple(_affine_eval(row[r], x, h) for r in (PI_ROW, C_ROW))

    def alive_wealth(self, t, x, h, i):
        return _affine_eval(self._tables.alive[self._k(t), i, W_ROW], x, h)

    def dead_wealth(self, t, x, h):
        return _affine_eval(self._tables.dead[self._k(t), W_ROW], x, h)

    def tables(self, t_grid, n_states):
        if len(t_grid) != len(self._t) or not np.allclose(t_grid, self._t, rtol=0, atol=1e-12):
            raise ConfigError("affine policy tables were built for a different time grid")
        return self._tables


class OptimalPolicy(PolicyOracle):
    """Closed-form feedback policy, optionally with multiplicative perturbations.

    ``merton`` scales pi (alive and dead), ``consumption`` scales c (alive
    and dead), ``premium`` scales p.  ``h_d_ref=None`` evaluates M and p
    with the current habit as h_d.
    """

    def __init__(self, params: ModelParams, coeffs: AliveCoefficients, merton: float = 1.0,
                 consumption: float = 1.0, premium: float = 1.0, h_d_ref: float | None = None):
        self.params = params
        self.coeffs = coeffs
        self.merton = float(merton)
        self.consumption = float(consumption)
        self.premium = float(premium)
        self.h_d_ref = h_d_ref if h_d_ref is not None else coeffs.h_d_ref

    def perturbed(self, **factors: float) -> "OptimalPolicy":
        kw = dict(merton=self.merton, consumption=self.consumption, premium=self.premium)
        kw.update(factors)
        return OptimalPolicy(self.params, self.coeffs, h_d_ref=self.h_d_ref, **kw)

    @property
    def label(self) -> str:
        parts = [f"{n}:{v:g}" for n, v in
                 (("merton", self.merton), ("consumption", self.consumption), ("premium", self.premium))
                 if v != 1.0]
        return ",".join(parts) or "optimal"

    def _alive_rows(self, t, i: int) -> np.ndarray:
        """(..., 4, 3) affine rows for state ``i`` at times ``t``."""
        co = self.coeffs
        t = np.asarray(t, dtype=float)
        A = co.coef("A", t, i)
        M_y = co.coef("M_y", t, i)
        M_B = co.coef("M_B", t, i)
        lam = np.broadcast_to(co.lam(t, i), t.shape)
        B = co.dead.B(t)
        cf = alive_consumption_factor(t, i, co, self.params)
        pf = alive_insurance_factor(t, i, co, self.params)
        zero = np.zeros_like(A)
        one = np.ones_like(A)
        if self.h_d_ref is None:
            W = np.stack((M_y, one, A - M_B), axis=-1)
            p_hd = np.stack((zero, -lam, lam * B), axis=-1)
        else:
            hd = self.h_d_ref
            W = np.stack((M_y - hd * M_B, one, A), axis=-1)
            p_hd = np.stack((lam * hd * B, -lam, zero), axis=-1)
        m = self.params.merton_fraction * self.merton
        habit = np.stack((zero, zero, one), axis=-1)
        pi = m * W
        c = self.consumption * (habit + cf[..., None] * W)
        p = self.premium * (p_hd + pf[..., None] * W)
        return np.stack((W, pi, c, p), axis=-2)

    def _dead_rows(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        B = self.coeffs.dead.B(t)
        cf = dead_consumption_factor(t, self.coeffs.dead, self.params)
        zero = np.zeros_like(B)
        W = np.stack((zero, np.ones_like(B), -B), axis=-1)
        pi = self.params.merton_fraction * self.merton * W
        c = self.consumption * (np.stack((zero, zero, np.ones_like(B)), axis=-1) + cf[..., None] * W)
        return np.stack((W, pi, c), axis=-2)

    def decide_alive(self, t, x, h, i):
        rows = self._alive_rows(t, i)
        return tuple(_affine_eval(rows[r], x, h) for r in (PI_ROW, C_ROW, P_ROW))

    def decide_dead(self, t, x, h):
        rows = self._dead_rows(t)
        return tuple(_affine_eval(rows[r], x, h) for r in (PI_ROW, C_ROW))

    def alive_wealth(self, t, x, h, i):
        return _affine_eval(self._alive_rows(t, i)[W_ROW], x, h)

    def dead_wealth(self, t, x, h):
        return _affine_eval(self._dead_rows(t)[W_ROW], x, h)

    def tables(self, t_grid, n_states):
        alive = np.stack([self._alive_rows(t_grid, i) for i in range(n_states)], axis=1)
        return PolicyTables(alive=np.ascontiguousarray(alive), dead=np.ascontiguousarray(self._dead_rows(t_grid)))


class ConstantPolicy(PolicyOracle):
    """Constant controls per state (and after death); always admissible."""

    def __init__(self, pi, c, p, pi_dead: float = 0.0, c_dead: float | None = None):
        self.pi = np.atleast_1d(np.asarray(pi, dtype=float))
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.p = np.atleast_1d(np.asarray(p, dtype=float))
        self.pi_dead = float(pi_dead)
        self.c_dead = float(self.c[0] if c_dead is None else c_dead)

    def _per_state(self, v: np.ndarray, i: int) -> float:
        return float(v[i] if v.size > 1 else v[0])

    def decide_alive(self, t, x, h, i):
        shape = np.shape(x)
        return (np.full(shape, self._per_state(self.pi, i)), np.full(shape, self._per_state(self.c, i)),
                np.full(shape, self._per_state(self.p, i)))

    def decide_dead(self, t, x, h):
        shape = np.shape(x)
        return np.full(shape, self.pi_dead), np.full(shape, self.c_dead)

    def tables(self, t_grid, n_states):
        n = len(t_grid)
        alive = np.zeros((n, n_states, 4, 3))
        alive[:, :, W_ROW, 0] = np.inf
        for i in range(n_states):
            alive[:, i, PI_ROW, 0] = self._per_state(self.pi, i)
            alive[:, i, C_ROW, 0] = self._per_state(self.c, i)
            alive[:, i, P_ROW, 0] = self._per_state(self.p, i)
        dead = np.zeros((n, 3, 3))
        dead[:, W_ROW, 0] = np.inf
        dead[:, PI_ROW, 0] = self.pi_dead
        dead[:, C_ROW, 0] = self.c_dead
        return PolicyTables(alive=alive, dead=dead)


# --------------------------------------------------------------------------
# configuration and results
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``death_habit="reset"`` sets the habit to the policy's ``h_d_ref`` at
    death (the model in which a fixed-h_d closed form is exact);
    ``"continue"`` keeps h(tau).  ``engine`` is "auto", "kernel" or "numpy".
    """

    n_paths: int
    dt: float
    seed: int = 0
    antithetic: bool = False
    penalty: float = DEFAULT_PENALTY
    death_habit: str = "continue"
    block_size: int = 128
    n_dump: int = 10
    engine: str = "auto"

    def __post_init__(self) -> None:
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigError("n_paths must be an integer >= 1")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be positive")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError("antithetic sampling needs an even n_paths")
        if self.death_habit not in ("continue", "reset"):
            raise ConfigError("death_habit must be 'continue' or 'reset'")
        if self.block_size < 1 or self.n_dump < 0:
            raise ConfigError("block_size must be >= 1 and n_dump >= 0")
        if self.engine not in ("auto", "kernel", "numpy"):
            raise ConfigError("engine must be 'auto', 'kernel' or 'numpy'")
        if not math.isfinite(self.penalty):
            raise ConfigError("penalty must be finite")


@dataclass(frozen=True)
class PathBundle:
    """Per-path outcomes of one simulation run (arrays of length n_paths).

    ``tau`` is NaN for survivors; ``final_state`` is -1 after death;
    penalised paths hit inadmissible effective wealth (or c <= h) and
    carry running utility so far plus ``cfg.penalty``.
    """

    utility: np.ndarray
    running: np.ndarray
    terminal: np.ndarray
    tau: np.ndarray
    final_state: np.ndarray
    terminal_wealth: np.ndarray
    terminal_habit: np.ndarray
    min_effective_wealth: np.ndarray
    penalized: np.ndarray
    n_transitions: np.ndarray
    times: np.ndarray
    cfg: SimConfig
    dump: np.ndarray = field(repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.utility)

    @property
    def n_penalized(self) -> int:
        return int(np.count_nonzero(self.penalized))

    def dump_csv(self) -> str:
        """Trajectories of the first ``cfg.n_dump`` paths; eta = -1 after death.

        ``annuity`` marks a negative premium while alive.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "t", "X", "h", "eta", "pi", "c", "p", "annuity"])
        for j in range(self.dump.shape[0]):
            for k, t in enumerate(self.times):
                row = self.dump[j, k]
                if np.isnan(row[0]):
                    break
                writer.writerow([j, f"{t:.10g}", f"{row[0]:.17g}", f"{row[1]:.17g}", int(row[2]),
                                 f"{row[3]:.17g}", f"{row[4]:.17g}", f"{row[5]:.17g}",
                                 int(row[2] >= 0 and row[5] < 0)])
        return buf.getvalue()


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_effective: int
    n_penalized: int = 0

    @property
    def rel_std_error(self) -> float:
        return self.std_error / abs(self.mean) if self.mean != 0 else math.inf


def _pair_values(values: np.ndarray, antithetic: bool) -> np.ndarray:
    return 0.5 * (values[0::2] + values[1::2]) if antithetic else values


def _estimate(samples: np.ndarray, n_penalized: int) -> MCEstimate:
    n = len(samples)
    if n < 2:
        raise EmptyBundle("need at least two independent samples")
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n))
    return MCEstimate(mean=mean, std_error=se, n_effective=n, n_penalized=n_penalized)


def estimate_objective(paths: PathBundle) -> MCEstimate:
    """Sample mean and standard error of the realised objective.

    Antithetic pairs are averaged first so the error reflects the pairing.
    """
    if paths.n_paths == 0:
        raise EmptyBundle("no paths")
    return _estimate(_pair_values(paths.utility, paths.cfg.antithetic), paths.n_penalized)


def estimate_difference(a: PathBundle, b: PathBundle) -> MCEstimate:
    """Estimate of J_a - J_b from paths simulated with common random numbers."""
    if a.n_paths != b.n_paths or a.cfg.seed != b.cfg.seed or a.cfg.antithetic != b.cfg.antithetic:
        raise ConfigError("paired difference needs bundles from the same seed and path count")
    diff = _pair_values(a.utility - b.utility, a.cfg.antithetic)
    return _estimate(diff, a.n_penalized + b.n_penalized)


# --------------------------------------------------------------------------
# engines
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Grid:
    t: np.ndarray
    dt: float
    lam: np.ndarray  # (n+1, S)
    q: np.ndarray  # (n+1, S, S)
    y: np.ndarray  # (n+1, S)
    disc: np.ndarray  # (n+1,)


def _build_grid(params: ModelParams, dt: float) -> _Grid:
    T = params.horizon_T
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    t = np.linspace(0.0, T, n + 1)
    dt = T / n
    S = params.n_states
    lam = np.column_stack([np.broadcast_to(params.lam(t, i), t.shape) for i in range(S)]).astype(float)
    y = np.column_stack([np.broadcast_to(params.income_rate(t, i), t.shape) for i in range(S)]).astype(float)
    q = np.ascontiguousarray(params.states.offdiag(t), dtype=float)
    worst_death = float(lam.max()) * dt
    worst_move = float(q.sum(axis=-1).max()) * dt
    if worst_death > MAX_EVENT_PROB or worst_move > MAX_EVENT_PROB:
        raise StepTooCoarse(
            f"per-step death probability {worst_death:.3g} / transition probability {worst_move:.3g} "
            f"exceeds {MAX_EVENT_PROB}; use a smaller dt"
        )
    return _Grid(t=t, dt=dt, lam=np.ascontiguousarray(lam), q=q, y=np.ascontiguousarray(y),
                 disc=np.exp(-params.prefs.rho * t))


def _step_factors(r: float, dt: float) -> tuple[float, float, float]:
    """Growth, drift and diffusion factors of the exact frozen-control wealth step."""
    if r == 0.0:
        return 1.0, dt, math.sqrt(dt)
    return math.exp(r * dt), math.expm1(r * dt) / r, math.sqrt(math.expm1(2 * r * dt) / (2 * r))


@njit(cache=True)
def _kernel(alive_tab, dead_tab, lam_tab, q_tab, y_tab, disc, dt, r, mu, sigma, alpha, beta, gamma,
            k_a, omega_a, k_d, omega_d, x0, h0, eta0, h_reset, penalty, Z, U, out, dump):
    n = lam_tab.shape[0] - 1
    S = lam_tab.shape[1]
    er = math.exp(r * dt)
    if r == 0.0:
        fa = dt
        fs = math.sqrt(dt)
    else:
        fa = math.expm1(r * dt) / r
        fs = math.sqrt(math.expm1(2.0 * r * dt) / (2.0 * r))
    eb = math.exp(-beta * dt)
    one_m_g = 1.0 - gamma
    n_dump = dump.shape[0]
    for p in range(Z.shape[0]):
        x = x0
        h = h0
        i = eta0
        dead = False
        run = 0.0
        prev_u = 0.0
        min_w = math.inf
        tau = math.nan
        pen = False
        blow = False
        ntr = 0
        for k in range(n + 1):
            if dead:
                row = dead_tab[k]
                w = row[0, 0] + row[0, 1] * x + row[0, 2] * h
                pi = row[1, 0] + row[1, 1] * x + row[1, 2] * h
                c = row[2, 0] + row[2, 1] * x + row[2, 2] * h
                pr = 0.0
                weight = k_d
            else:
                row = alive_tab[k, i]
                w = row[0, 0] + row[0, 1] * x + row[0, 2] * h
                pi = row[1, 0] + row[1, 1] * x + row[1, 2] * h
                c = row[2, 0] + row[2, 1] * x + row[2, 2] * h
                pr = row[3, 0] + row[3, 1] * x + row[3, 2] * h
                weight = k_a[i]
            if w < min_w:
                min_w = w
            if not (w > 0.0) or not (c > h):
                pen = True
                break
            u_k = weight * disc[k] * (c - h) ** one_m_g / one_m_g
            if k > 0:
                run += 0.5 * dt * (prev_u + u_k)
            prev_u = u_k
            if p < n_dump:
                dump[p, k, 0] = x
                dump[p, k, 1] = h
                dump[p, k, 2] = -1.0 if dead else i
                dump[p, k, 3] = pi
                dump[p, k, 4] = c
                dump[p, k, 5] = pr
            if k == n:
                break
            b = pi * (mu - r) - c
            if not dead:
                b += y_tab[k, i] - pr
            x_new = x * er + b * fa + sigma * pi * fs * Z[p, k]
            if beta == 0.0:
                h = h + alpha * c * dt
            else:
                target = alpha * c / beta
                h = target + (h - target) * eb
            if not dead:
                u = U[p, k]
                lam = lam_tab[k, i]
                acc = lam * dt
                if u < acc:
                    dead = True
                    tau = (k + 1) * dt
                    x_new += pr / lam
                    if not math.isnan(h_reset):
                        h = h_reset
                else:
                    for j in range(S):
                        if j != i:
                            acc += q_tab[k, i, j] * dt
                            if u < acc:
                                i = j
                                ntr += 1
                                break
            x = x_new
            if not (math.isfinite(x) and math.isfinite(h)):
                blow = True
                break
        term = math.nan
        if blow:
            total = math.nan
        elif pen:
            total = run + penalty
        elif not (x > 0.0):
            pen = True
            total = run + penalty
        else:
            weight = omega_d if dead else omega_a[i]
            term = weight * disc[n] * x**one_m_g / one_m_g
            total = run + term
        out[p, 0] = total
        out[p, 1] = run
        out[p, 2] = term
        out[p, 3] = tau
        out[p, 4] = -1.0 if dead else i
        out[p, 5] = x
        out[p, 6] = min_w
        out[p, 7] = 1.0 if pen else 0.0
        out[p, 8] = ntr
        out[p, 9] = h
        out[p, 10] = 1.0 if blow else 0.0


def _numpy_engine(params: ModelParams, policy: PolicyOracle, grid: _Grid, h_reset: float,
                  penalty: float, Z: np.ndarray, U: np.ndarray, out: np.ndarray, dump: np.ndarray) -> None:
    """Reference engine: same scheme as the kernel, vectorised over paths."""
    m = params.market
    prefs = params.prefs
    gamma = prefs.gamma
    alpha, beta = params.habit.alpha, params.habit.beta
    n = len(grid.t) - 1
    S = params.n_states
    dt = grid.dt
    er, fa, fs = _step_factors(m.r, dt)
    eb = math.exp(-beta * dt)
    P = Z.shape[0]
    x = np.full(P, params.x0)
    h = np.full(P, params.habit.h0)
    i = np.full(P, params.eta0, dtype=np.int64)
    dead = np.zeros(P, dtype=bool)
    active = np.ones(P, dtype=bool)
    pen = np.zeros(P, dtype=bool)
    run = np.zeros(P)
    prev_u = np.zeros(P)
    min_w = np.full(P, np.inf)
    tau = np.full(P, np.nan)
    ntr = np.zeros(P)
    k_a = np.asarray(prefs.k_a)
    n_dump = dump.shape[0]
    for k in range(n + 1):
        t = float(grid.t[k])
        w = np.full(P, np.nan)
        pi = np.zeros(P)
        c = np.zeros(P)
        pr = np.zeros(P)
        for s in range(S):
            sel = active & ~dead & (i == s)
            if sel.any():
                pi[sel], c[sel], pr[sel] = policy.decide_alive(t, x[sel], h[sel], s)
                w[sel] = policy.alive_wealth(t, x[sel], h[sel], s)
        sel = active & dead
        if sel.any():
            pi[sel], c[sel] = policy.decide_dead(t, x[sel], h[sel])
            w[sel] = policy.dead_wealth(t, x[sel], h[sel])
        min_w = np.where(active, np.minimum(min_w, w), min_w)
        bad = active & ~((w > 0) & (c > h))
        pen |= bad
        active &= ~bad
        weight = np.where(dead, prefs.k_d, k_a[i])
        excess = np.where(active, c - h, 1.0)
        u_k = weight * grid.disc[k] * excess ** (1 - gamma) / (1 - gamma)
        if k > 0:
            run = np.where(active, run + 0.5 * dt * (prev_u + u_k), run)
        prev_u = u_k
        nd = min(n_dump, P)
        if nd:
            rec = active[:nd]
            dump[:nd, k, 0] = np.where(rec, x[:nd], np.nan)
            dump[:nd, k, 1] = np.where(rec, h[:nd], np.nan)
            dump[:nd, k, 2] = np.where(rec, np.where(dead[:nd], -1, i[:nd]), np.nan)
            dump[:nd, k, 3] = np.where(rec, pi[:nd], np.nan)
            dump[:nd, k, 4] = np.where(rec, c[:nd], np.nan)
            dump[:nd, k, 5] = np.where(rec, pr[:nd], np.nan)
        if k == n:
            break
        b = pi * (m.mu - m.r) - c + np.where(dead, 0.0, grid.y[k, i] - pr)
        x_new = x * er + b * fa + m.sigma * pi * fs * Z[:, k]
        h_new = h + alpha * c * dt if beta == 0.0 else alpha * c / beta + (h - alpha * c / beta) * eb
        alive_now = active & ~dead
        u = U[:, k]
        lam = grid.lam[k, i]
        acc = lam * dt
        die = alive_now & (u < acc)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = np.where(die, x_new + pr / lam, x_new)
        if not math.isnan(h_reset):
            h_new = np.where(die, h_reset, h_new)
        tau = np.where(die, (k + 1) * dt, tau)
        done = die | ~alive_now
        new_i = i.copy()
        for j in range(S):
            other = j != i
            acc = acc + np.where(other, grid.q[k, i, j] * dt, 0.0)
            hit = ~done & other & (u < acc)
            new_i[hit] = j
            done |= hit
        ntr += new_i != i
        i = new_i
        dead |= die
        x = np.where(active, x_new, x)
        h = np.where(active, h_new, h)
    blow = ~(np.isfinite(x) & np.isfinite(h))
    term = np.full(P, np.nan)
    ok = active & ~blow & (x > 0)
    pen |= active & ~blow & ~(x > 0)
    weight = np.where(dead, prefs.omega_d, np.asarray(prefs.omega_a)[i])
    xs = np.where(ok, x, 1.0)
    term = np.where(ok, weight * grid.disc[n] * xs ** (1 - gamma) / (1 - gamma), np.nan)
    total = np.where(ok, run + term, run + penalty)
    total = np.where(blow, np.nan, total)
    cols = (total, run, term, tau, np.where(dead, -1, i), x, min_w, pen, ntr, h, blow)
    for col, v in enumerate(cols):
        out[:, col] = v


def _path_draws(seed: int, stream: int, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))
    return gen.standard_normal(n_steps), gen.random(n_steps)


def draws_for_block(cfg: SimConfig, start: int, stop: int, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Normal and uniform draws of paths [start, stop).

    Path j uses stream j, or stream j // 2 with the normals negated on odd
    j when antithetic; the uniforms are shared within a pair.
    """
    Z = np.empty((stop - start, n_steps))
    U = np.empty((stop - start, n_steps))
    for row, j in enumerate(range(start, stop)):
        stream = j // 2 if cfg.antithetic else j
        z, u = _path_draws(int(cfg.seed), stream, n_steps)
        Z[row] = -z if (cfg.antithetic and j % 2) else z
        U[row] = u
    return Z, U


def _h_reset(policy: PolicyOracle, cfg: SimConfig) -> float:
    if cfg.death_habit == "continue":
        return math.nan
    if policy.h_d_ref is None:
        raise ConfigError("death_habit='reset' needs a policy with a fixed h_d_ref")
    return float(policy.h_d_ref)


def _run_block(params, policy, grid, tables, cfg, Z, U, out, dump):
    h_reset = _h_reset(policy, cfg)
    if tables is None:
        _numpy_engine(params, policy, grid, h_reset, cfg.penalty, Z, U, out, dump)
        return
    m, prefs = params.market, params.prefs
    _kernel(tables.alive, tables.dead, grid.lam, grid.q, grid.y, grid.disc, grid.dt, m.r, m.mu, m.sigma,
            params.habit.alpha, params.habit.beta, prefs.gamma, np.asarray(prefs.k_a, dtype=float),
            np.asarray(prefs.omega_a, dtype=float), prefs.k_d, prefs.omega_d, float(params.x0),
            float(params.habit.h0), int(params.eta0), h_reset, float(cfg.penalty), Z, U, out, dump)


def _bundle(out: np.ndarray, dump: np.ndarray, grid: _Grid, cfg: SimConfig) -> PathBundle:
    if np.any(out[:, _BLOW] > 0):
        bad = int(np.argmax(out[:, _BLOW] > 0))
        raise PathBlowup(f"path {bad} produced a non-finite state")
    return PathBundle(
        utility=out[:, _UTIL].copy(),
        running=out[:, _RUN].copy(),
        terminal=out[:, _TERM].copy(),
        tau=out[:, _TAU].copy(),
        final_state=out[:, _STATE].astype(np.int64),
        terminal_wealth=out[:, _XT].copy(),
        terminal_habit=out[:, _HT].copy(),
        min_effective_wealth=out[:, _MINW].copy(),
        penalized=out[:, _PEN] > 0,
        n_transitions=out[:, _NTR].astype(np.int64),
        times=grid.t,
        cfg=cfg,
        dump=dump,
    )


def _policy_tables(policy: PolicyOracle, grid: _Grid, params: ModelParams, cfg: SimConfig):
    if cfg.engine == "numpy":
        return None
    tables = policy.tables(grid.t, params.n_states)
    if tables is None and cfg.engine == "kernel":
        raise ConfigError("policy has no affine tables; the compiled engine cannot run it")
    return tables


def simulate(params: ModelParams, policy: PolicyOracle, cfg: SimConfig) -> PathBundle:
    """Simulate ``cfg.n_paths`` paths from (0, x0, h0, eta0) under ``policy``."""
    grid = _build_grid(params, cfg.dt)
    n_steps = len(grid.t) - 1
    tables = _policy_tables(policy, grid, params, cfg)
    out = np.empty((cfg.n_paths, _NCOL))
    n_dump = min(cfg.n_dump, cfg.n_paths)
    dump = np.full((n_dump, n_steps + 1, 6), np.nan)
    block = cfg.block_size + (cfg.block_size % 2 if cfg.antithetic else 0)
    for start in range(0, cfg.n_paths, block):
        stop = min(start + block, cfg.n_paths)
        Z, U = draws_for_block(cfg, start, stop, n_steps)
        bd = max(0, min(n_dump, stop) - start)
        sub = np.full((bd, n_steps + 1, 6), np.nan)
        _run_block(params, policy, grid, tables, cfg, Z, U, out[start:stop], sub)
        if bd:
            dump[start:start + bd] = sub
    return _bundle(out, dump, grid, cfg)


def simulate_with_draws(params: ModelParams, policy: PolicyOracle, cfg: SimConfig,
                        Z: np.ndarray, U: np.ndarray) -> PathBundle:
    """Simulate with caller-supplied draws of shape (n_paths, n_steps)."""
    grid = _build_grid(params, cfg.dt)
    n_steps = len(grid.t) - 1
    Z = np.ascontiguousarray(Z, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    if Z.shape != (cfg.n_paths, n_steps) or U.shape != Z.shape:
        raise ConfigError(f"draws must have shape ({cfg.n_paths}, {n_steps})")
    tables = _policy_tables(policy, grid, params, cfg)
    out = np.empty((cfg.n_paths, _NCOL))
    dump = np.full((min(cfg.n_dump, cfg.n_paths), n_steps + 1, 6), np.nan)
    _run_block(params, policy, grid, tables, cfg, Z, U, out, dump)
    return _bundle(out, dump, grid, cfg)
