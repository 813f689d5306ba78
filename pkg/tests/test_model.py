import math

import numpy as np
import pytest
from scipy import integrate

from healthshock.errors import HabitViolation, InvalidParameter, InvalidState, NonpositiveWealth, OutOfHorizon
from healthshock.model import (
    ConstantHazard,
    ExponentialIntensity,
    GompertzIllnessHazard,
    HabitParams,
    HealthStateSpace,
    IncomeModel,
    MarketParams,
    PreferenceParams,
    ScaledHazard,
    cumulative_hazard,
    cumulative_hazard_table,
    density,
    habit_step,
    survival,
    terminal_utility,
    utility_alive,
    utility_dead,
)

M, N, L = 20.0, 12.14982, 92.29736


def gompertz_cumhaz(t):
    # integral of (1/n) exp((m+s-l)/n) over [0, t]
    return math.exp((M + t - L) / N) - math.exp((M - L) / N)


@pytest.fixture
def hazard():
    return GompertzIllnessHazard(m=M, n=N, l=L, k1=(0.032,), k2=(0.0043,))


def test_gompertz_rates(hazard):
    t = 13.0
    base = math.exp((M + t - L) / N) / N
    assert hazard.lam(t, 0) == pytest.approx(base, rel=1e-15)
    assert hazard.lam(t, 1) == pytest.approx(base + 0.032 + 0.0043 * (M + t), rel=1e-15)


def test_cumulative_hazard_closed_form(hazard):
    for t in (0.0, 1.0, 17.3, 40.0):
        assert cumulative_hazard(t, 0, hazard) == pytest.approx(gompertz_cumhaz(t), rel=1e-12, abs=1e-15)
        sick = gompertz_cumhaz(t) + 0.032 * t + 0.0043 * (M * t + t * t / 2)
        assert cumulative_hazard(t, 1, hazard) == pytest.approx(sick, rel=1e-12, abs=1e-15)


def test_cumulative_table_matches_scalar(hazard):
    t = np.linspace(0, 40, 81)
    table = cumulative_hazard_table(hazard, 1, t)
    scalar = np.array([cumulative_hazard(s, 1, hazard) for s in t])
    np.testing.assert_allclose(table, scalar, rtol=1e-11, atol=1e-14)


def test_survival_density_consistent(hazard):
    t = 25.0
    assert survival(0.0, 0, hazard) == 1.0
    assert density(t, 1, hazard) == pytest.approx(hazard.lam(t, 1) * survival(t, 1, hazard), rel=1e-14)
    # density integrates to 1 - survival
    total, _ = integrate.quad(lambda s: density(s, 0, hazard), 0, t, epsabs=1e-13)
    assert total == pytest.approx(1 - survival(t, 0, hazard), rel=1e-9)


def test_horizon_check(hazard):
    with pytest.raises(OutOfHorizon):
        survival(41.0, 0, hazard, horizon=40.0)


def test_scaled_and_constant_hazard():
    base = ConstantHazard(rates=(0.01, 0.05))
    scaled = ScaledHazard(base=base, factor=1e-6)
    assert scaled.lam(3.0, 1) == pytest.approx(5e-8)
    assert cumulative_hazard(10.0, 1, base) == pytest.approx(0.5, rel=1e-12)


def test_theta_at_least_lambda():
    h = ConstantHazard(rates=(0.02,), loading=0.1)
    assert h.theta(1.0, 0) == pytest.approx(0.022)
    with pytest.raises(InvalidParameter):
        ConstantHazard(rates=(0.02,), loading=-0.1)


def test_income_states():
    inc = IncomeModel(y0=25000, delta=0.075, xi=(1.0, 1.25))
    assert inc.rate(0.0, 1) == pytest.approx(20000.0)
    assert inc.rate(10.0, 0) == pytest.approx(25000 * math.exp(0.75))
    with pytest.raises(InvalidParameter):
        IncomeModel(y0=1, delta=0, xi=(1.0, 0.9))
    with pytest.raises(InvalidState):
        inc.rate(0.0, 2)


def test_transition_intensity():
    q = ExponentialIntensity(0, 1, 0.0001492, 0.07353)
    assert q(40.0) == pytest.approx(0.0001492 * math.exp(0.07353 * 40))
    assert q(40.0) == pytest.approx(2.825e-3, rel=2e-3)
    space = HealthStateSpace(2, (q,))
    Q = space.matrix(np.array([0.0, 40.0]))
    np.testing.assert_allclose(Q.sum(axis=-1), 0.0, atol=1e-18)
    assert space.rate(5.0, 1, 0) == 0.0


def test_market_validation():
    with pytest.raises(InvalidParameter):
        MarketParams(r=0.02, mu=0.02, sigma=0.2)
    with pytest.raises(InvalidParameter):
        MarketParams(r=0.02, mu=0.07, sigma=0.0)


def test_preference_validation():
    with pytest.raises(InvalidParameter):
        PreferenceParams(gamma=1.0, rho=0.1, k_a=(1,), omega_a=(1,), k_d=1, omega_d=1)


def test_habit_step_exact():
    hab = HabitParams(alpha=0.1, beta=0.174, h0=6.0)
    c = 1000.0
    # exact solution of dh = (alpha c - beta h) dt
    t = 2.5
    expected = 0.1 * c / 0.174 + (6.0 - 0.1 * c / 0.174) * math.exp(-0.174 * t)
    assert habit_step(6.0, c, t, hab) == pytest.approx(expected, rel=1e-14)
    h = 6.0
    for _ in range(250):
        h = habit_step(h, c, 0.01, hab)
    assert h == pytest.approx(expected, rel=1e-12)


def test_habit_step_no_forgetting():
    hab = HabitParams(alpha=0.1, beta=0.0, h0=1.0)
    assert habit_step(1.0, 10.0, 2.0, hab) == pytest.approx(3.0)


def test_utilities(params):
    u = utility_alive(1.0, 11.0, 6.0, 1, params.prefs)
    assert u == pytest.approx(0.5 * math.exp(-0.1) * 5.0**-5 / -5)
    assert utility_dead(0.0, 7.0, 6.0, params.prefs) == pytest.approx(0.5 * 1.0 / -5)
    with pytest.raises(HabitViolation):
        utility_alive(0.0, 6.0, 6.0, 0, params.prefs)
    assert terminal_utility(40.0, 2.0, None, params.prefs) == pytest.approx(3 * math.exp(-4) * 2.0**-5 / -5)
    with pytest.raises(NonpositiveWealth):
        terminal_utility(40.0, 0.0, 0, params.prefs)


def test_params_checks(params):
    assert params.merton_fraction == pytest.approx(0.05 / (0.04 * 6))
    assert params.kappa == pytest.approx(0.0025 / (0.08 * 6))
    assert params.n_states == 2
