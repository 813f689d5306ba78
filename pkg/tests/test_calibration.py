import numpy as np
import pytest

from healthshock.calibration import (
    FitResult,
    LifeTable,
    fit_gompertz,
    fit_illness_excess,
    fit_transition,
    gompertz_rate,
    illness_rate,
    parse_table,
    read_table,
    transition_rate,
)
from healthshock.errors import ConfigError, DegenerateTable, InvalidParameter, NonPositiveRate

M, N, L = 20.0, 12.14982, 92.29736
AGES = np.arange(20.0, 100.0, 1.0)


def table(rates, ages=AGES, weights=None, kind="mortality"):
    return LifeTable(ages, rates, weights, kind)


def test_rate_functions_match_hazard(params):
    t = np.array([0.0, 10.0, 35.0])
    np.testing.assert_allclose(gompertz_rate(M + t, M, N, L), params.lam(t, 0), rtol=1e-14)
    np.testing.assert_allclose(illness_rate(M + t, M, N, L, 0.032, 0.0043), params.lam(t, 1), rtol=1e-14)
    np.testing.assert_allclose(transition_rate(t, 0.0001492, 0.07353), params.states.rate(t, 0, 1), rtol=1e-14)


def test_gompertz_round_trip():
    fit = fit_gompertz(table(gompertz_rate(AGES, M, N, L)))
    assert fit.parameters["m"] == M
    assert fit.parameters["n"] == pytest.approx(N, rel=1e-9)
    assert fit.parameters["l"] == pytest.approx(L, rel=1e-9)
    assert fit.converged and fit.sse < 1e-20


def test_gompertz_from_poor_start():
    fit = fit_gompertz(table(gompertz_rate(AGES, M, N, L)), init={"n": 10.0, "l": 80.0})
    assert fit.parameters["n"] == pytest.approx(N, rel=1e-7)
    assert fit.parameters["l"] == pytest.approx(L, rel=1e-7)


def test_gompertz_noisy_fit_is_close_and_reproducible():
    rng = np.random.default_rng(0)
    noisy = gompertz_rate(AGES, M, N, L) * (1 + 0.01 * rng.standard_normal(AGES.size))
    a = fit_gompertz(table(noisy))
    b = fit_gompertz(table(noisy))
    assert a.parameters == b.parameters
    assert a.parameters["n"] == pytest.approx(N, rel=0.02)
    assert a.parameters["l"] == pytest.approx(L, rel=0.005)


def test_weights_select_rows():
    rates = gompertz_rate(AGES, M, N, L)
    rates[::7] *= 3.0  # outliers
    w = np.ones_like(AGES)
    w[::7] = 1e-12
    fit = fit_gompertz(table(rates, weights=w))
    assert fit.parameters["n"] == pytest.approx(N, rel=1e-5)


def test_illness_excess_round_trip():
    base = FitResult({"m": M, "n": N, "l": L}, 0.0, 1, True, "gompertz")
    rates = illness_rate(AGES, M, N, L, 0.032, 0.0043)
    fit = fit_illness_excess(table(np.minimum(rates, 0.99)), base)
    assert fit.parameters["k1"] == pytest.approx(0.032, rel=1e-9)
    assert fit.parameters["k2"] == pytest.approx(0.0043, rel=1e-9)


def test_illness_needs_base_parameters():
    with pytest.raises(ConfigError):
        fit_illness_excess(table(gompertz_rate(AGES, M, N, L)), FitResult({"n": N}, 0.0, 1, True))


def test_transition_round_trip():
    t = np.arange(0.0, 40.0)
    fit = fit_transition(table(transition_rate(t, 0.0001492, 0.07353), ages=M + t, kind="morbidity"))
    assert fit.parameters["base_age"] == M
    assert fit.parameters["m1"] == pytest.approx(0.0001492, rel=1e-10)
    assert fit.parameters["n1"] == pytest.approx(0.07353, rel=1e-10)


def test_table_is_sorted():
    tab = LifeTable.from_rows([(30, 0.02), (20, 0.01), (25, 0.015)])
    np.testing.assert_array_equal(tab.ages, [20, 25, 30])
    np.testing.assert_array_equal(tab.rates, [0.01, 0.015, 0.02])


@pytest.mark.parametrize("rows,err", [
    ([(20, 0.01), (20, 0.02)], InvalidParameter),
    ([(20, 0.0), (21, 0.02)], NonPositiveRate),
    ([(20, 1.5), (21, 0.02)], InvalidParameter),
    ([(20, 0.01, -1.0), (21, 0.02, 1.0)], InvalidParameter),
])
def test_table_validation(rows, err):
    with pytest.raises(err):
        LifeTable.from_rows(rows)


def test_degenerate_tables():
    with pytest.raises(DegenerateTable):
        fit_gompertz(LifeTable.from_rows([(20, 0.01), (21, 0.02)]))
    with pytest.raises(DegenerateTable):
        fit_gompertz(LifeTable.from_rows([(20, 0.01), (21, 0.01), (22, 0.01)]))
    with pytest.raises(DegenerateTable):
        fit_gompertz(LifeTable.from_rows([(20, 0.03), (21, 0.02), (22, 0.01)]))


def test_parse_table_errors():
    tab = parse_table("# comment\nage,rate\n20,0.01\n\n21,0.02\n")
    assert len(tab) == 2
    with pytest.raises(ConfigError, match="line 1"):
        parse_table("years,rate\n20,0.01\n")
    with pytest.raises(ConfigError, match="line 3"):
        parse_table("age,rate\n20,0.01\n21,abc\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_table("age,rate\n20,0.01,1\n")
    with pytest.raises(ConfigError):
        parse_table("")


def test_read_table(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(table(gompertz_rate(AGES, M, N, L)).to_csv())
    assert len(read_table(path)) == AGES.size
    with pytest.raises(ConfigError):
        read_table(tmp_path / "missing.csv")


def test_fit_result_csv_round_trip():
    fit = fit_gompertz(table(gompertz_rate(AGES, M, N, L)))
    back = FitResult.from_csv("# header line\n" + fit.to_csv())
    assert back.parameters == fit.parameters
    assert back.model == "gompertz" and back.iterations == fit.iterations
    with pytest.raises(ConfigError):
        FitResult.from_csv("a,b\n1,2\n")


def test_nested_model_gives_zero_slope():
    base = FitResult({"m": M, "n": N, "l": L}, 0.0, 1, True, "gompertz")
    fit = fit_illness_excess(table(illness_rate(AGES, M, N, L, 0.05, 0.0)), base)
    assert abs(fit.parameters["k2"]) < 1e-10
    assert fit.parameters["k1"] == pytest.approx(0.05, rel=1e-10)


def test_illness_residuals_orthogonal_and_base_untouched():
    rng = np.random.default_rng(1)
    base = FitResult({"m": M, "n": N, "l": L}, 0.0, 1, True, "gompertz")
    rates = illness_rate(AGES, M, N, L, 0.032, 0.0043) * (1 + 0.01 * rng.standard_normal(AGES.size))
    fit = fit_illness_excess(table(np.minimum(rates, 0.99)), base)
    resid = fit.extra["residuals"]
    X = np.column_stack((np.ones_like(AGES), AGES))
    np.testing.assert_allclose(X.T @ resid, 0.0, atol=1e-10)
    assert base.parameters == {"m": M, "n": N, "l": L}
    assert all(fit.parameters[k] == base.parameters[k] for k in ("m", "n", "l"))


def test_flat_transition_table():
    t = np.arange(0.0, 20.0)
    fit = fit_transition(table(np.full(t.size, 0.003), ages=M + t, kind="morbidity"))
    assert abs(fit.parameters["n1"]) < 1e-10


def test_transition_value_at_forty():
    assert transition_rate(40.0, 0.0001492, 0.07353) == pytest.approx(0.0001492 * np.exp(2.9412), rel=1e-12)
    assert abs(transition_rate(40.0, 0.0001492, 0.07353) - 2.825e-3) < 1e-6


def test_age_20_to_60_round_trip():
    ages = np.arange(20.0, 61.0)
    fit = fit_gompertz(table(gompertz_rate(ages, M, N, L), ages=ages))
    assert fit.parameters["n"] == pytest.approx(N, rel=1e-6)
    assert fit.parameters["l"] == pytest.approx(L, rel=1e-6)


def test_permuted_rows_with_weights():
    rng = np.random.default_rng(2)
    rates = gompertz_rate(AGES, M, N, L) * (1 + 0.01 * rng.standard_normal(AGES.size))
    w = rng.uniform(0.5, 2.0, AGES.size)
    perm = rng.permutation(AGES.size)
    a = fit_gompertz(table(rates, weights=w))
    b = fit_gompertz(table(rates[perm], ages=AGES[perm], weights=w[perm]))
    assert a.parameters == b.parameters
