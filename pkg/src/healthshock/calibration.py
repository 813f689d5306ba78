"""Fitting the hazard models to mortality and morbidity tables.

* Gompertz base mortality  lambda(t, 0) = (1/n) exp((m + t - l)/n), with m
  anchored to the table's first age (only m - l is identified).
* Critical-illness excess  lambda(t, 1) = lambda(t, 0) + k1 + k2 (m + t),
  linear in (k1, k2).
* Transition intensity     q01(t) = m1 exp(n1 t), log-linear.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, DegenerateTable, InvalidParameter, NonConvergence, NonPositiveRate

MAX_ITER = 10_000
SIMPLEX_TOL = 1e-8


@dataclass(frozen=True)
class LifeTable:
    """Rates by age, stored sorted by age; weights default to 1."""

    ages: np.ndarray
    rates: np.ndarray
    weights: np.ndarray
    kind: str = "mortality"

    def __post_init__(self) -> None:
        ages = np.asarray(self.ages, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        weights = np.ones_like(ages) if self.weights is None else np.asarray(self.weights, dtype=float)
        if ages.ndim != 1 or ages.shape != rates.shape or ages.shape != weights.shape:
            raise InvalidParameter("ages, rates and weights must be 1-d arrays of equal length")
        if self.kind not in ("mortality", "morbidity"):
            raise InvalidParameter("kind must be 'mortality' or 'morbidity'")
        if not (np.all(np.isfinite(ages)) and np.all(np.isfinite(rates)) and np.all(np.isfinite(weights))):
            raise InvalidParameter("table entries must be finite")
        order = np.argsort(ages, kind="stable")
        ages, rates, weights = ages[order], rates[order], weights[order]
        if np.any(np.diff(ages) <= 0):
            raise InvalidParameter("ages must be distinct")
        if np.any(rates <= 0):
            raise NonPositiveRate(f"rate {rates[rates <= 0][0]:g} at age {ages[rates <= 0][0]:g} is not positive")
        if np.any(rates >= 1):
            raise InvalidParameter("rates must lie in (0, 1)")
        if np.any(weights <= 0):
            raise InvalidParameter("weights must be positive")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.ages)

    @property
    def base_age(self) -> float:
        return float(self.ages[0])

    @classmethod
    def from_rows(cls, rows, kind: str = "mortality") -> "LifeTable":
        rows = list(rows)
        ages = [r[0] for r in rows]
        rates = [r[1] for r in rows]
        weights = [r[2] if len(r) > 2 and r[2] is not None else 1.0 for r in rows]
        return cls(np.array(ages, dtype=float), np.array(rates, dtype=float), np.array(weights, dtype=float), kind)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["age", "rate", "weight"])
        for a, r, w in zip(self.ages, self.rates, self.weights):
            writer.writerow([f"{a:.17g}", f"{r:.17g}", f"{w:.17g}"])
        return buf.getvalue()


def parse_table(text: str, kind: str = "mortality", source: str = "<table>") -> LifeTable:
    """Parse ``age,rate[,weight]`` CSV text; errors name the offending line."""
    lines = text.splitlines()
    body = [(n, ln) for n, ln in enumerate(lines, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ConfigError(f"{source}: empty table")
    line_no, header_line = body[0]
    header = [h.strip().lower() for h in header_line.split(",")]
    if header not in (["age", "rate"], ["age", "rate", "weight"]):
        raise ConfigError(f"{source}: line {line_no}: expected header 'age,rate[,weight]', got {header_line!r}")
    rows = []
    for line_no, ln in body[1:]:
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != len(header):
            raise ConfigError(f"{source}: line {line_no}: expected {len(header)} fields, got {len(cells)}")
        try:
            rows.append(tuple(float(c) for c in cells))
        except ValueError:
            raise ConfigError(f"{source}: line {line_no}: non-numeric field in {ln!r}") from None
    if not rows:
        raise DegenerateTable(f"{source}: table has no data rows")
    return LifeTable.from_rows(rows, kind)


def read_table(path: str | Path, kind: str = "mortality") -> LifeTable:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read table {path}: {exc}") from exc
    return parse_table(text, kind, str(path))


@dataclass(frozen=True)
class FitResult:
    parameters: dict
    sse: float
    iterations: int
    converged: bool
    model: str = ""
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "parameter", "value"])
        for name, value in self.parameters.items():
            writer.writerow([self.model, name, f"{value:.17g}"])
        writer.writerow([self.model, "sse", f"{self.sse:.17g}"])
        writer.writerow([self.model, "iterations", self.iterations])
        writer.writerow([self.model, "converged", int(self.converged)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FitResult":
        reader = csv.DictReader(io.StringIO("\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))))
        if reader.fieldnames != ["model", "parameter", "value"]:
            raise ConfigError("fit file must have header 'model,parameter,value'")
        params, meta, model = {}, {}, ""
        for row in reader:
            model = row["model"]
            if row["parameter"] in ("sse", "iterations", "converged"):
                meta[row["parameter"]] = float(row["value"])
            else:
                params[row["parameter"]] = float(row["value"])
        return cls(params, meta.get("sse", 0.0), int(meta.get("iterations", 0)),
                   bool(meta.get("converged", 1)), model)


def gompertz_rate(age, m: float, n: float, l: float):
    """(1/n) exp((m + t - l)/n) at t = age - m."""
    t = np.asarray(age, dtype=float) - m
    return np.exp((m + t - l) / n) / n


def illness_rate(age, m: float, n: float, l: float, k1: float, k2: float):
    return gompertz_rate(age, m, n, l) + k1 + k2 * np.asarray(age, dtype=float)


def transition_rate(t, m1: float, n1: float):
    return m1 * np.exp(n1 * np.asarray(t, dtype=float))


def _weighted_lstsq(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    if rank < X.shape[1]:
        raise DegenerateTable("regressors are collinear")
    return coef


def fit_gompertz(table: LifeTable, init: dict | None = None) -> FitResult:
    """Weighted least squares of the Gompertz law by Nelder-Mead over (n, l).

    The search runs in (log n, l / l_0) so the simplex tolerance acts as a
    relative one; the start is the log-linear least-squares solution
    unless ``init`` gives n and l.
    """
    if len(table) < 3:
        raise DegenerateTable(f"need at least 3 rows to fit (n, l), got {len(table)}")
    if np.ptp(table.rates) == 0:
        raise DegenerateTable("all rates are equal; the Gompertz scale is not identified")
    m = table.base_age
    ages, rates, w = table.ages, table.rates, table.weights
    if init is not None:
        n0, l0 = float(init["n"]), float(init["l"])
    else:
        slope, intercept = _weighted_lstsq(np.column_stack((ages, np.ones_like(ages))), np.log(rates), w)
        if slope <= 0:
            raise DegenerateTable("rates do not increase with age")
        n0 = 1.0 / slope
        l0 = -(intercept + math.log(n0)) * n0
    if not (n0 > 0) or l0 == 0:
        raise InvalidParameter("initial guess needs n > 0 and l != 0")
    scale = float(np.sum(w * rates**2))

    def unpack(u):
        return math.exp(u[0]), float(u[1] * l0)

    def objective(u):
        n, l = unpack(u)
        resid = gompertz_rate(ages, m, n, l) - rates
        return float(np.sum(w * resid**2)) / scale

    res = minimize(objective, np.array([math.log(n0), 1.0]), method="Nelder-Mead",
                   options={"xatol": SIMPLEX_TOL, "fatol": 1e-15, "maxiter": MAX_ITER, "maxfev": 4 * MAX_ITER})
    if not res.success:
        raise NonConvergence(f"Nelder-Mead did not converge: {res.message}")
    n, l = unpack(res.x)
    return FitResult(parameters={"m": m, "n": n, "l": l}, sse=float(res.fun) * scale,
                     iterations=int(res.nit), converged=True, model="gompertz")


def fit_illness_excess(mortality_table: LifeTable, base: FitResult) -> FitResult:
    """Linear least squares for (k1, k2) on the excess over the fitted base law."""
    if len(mortality_table) < 2:
        raise DegenerateTable("need at least 2 rows to fit (k1, k2)")
    try:
        m, n, l = (float(base.parameters[k]) for k in ("m", "n", "l"))
    except KeyError as exc:
        raise ConfigError(f"base fit lacks parameter {exc}") from None
    ages, w = mortality_table.ages, mortality_table.weights
    excess = mortality_table.rates - gompertz_rate(ages, m, n, l)
    X = np.column_stack((np.ones_like(ages), ages))
    k1, k2 = _weighted_lstsq(X, excess, w)
    resid = excess - X @ np.array([k1, k2])
    return FitResult(parameters={"m": m, "n": n, "l": l, "k1": float(k1), "k2": float(k2)},
                     sse=float(np.sum(w * resid**2)), iterations=1, converged=True, model="illness",
                     extra={"residuals": resid})


def fit_transition(table: LifeTable, base_age: float | None = None) -> FitResult:
    """Log-linear least squares for q01(t) = m1 exp(n1 t), t = age - base_age."""
    if len(table) < 2:
        raise DegenerateTable("need at least 2 rows to fit (m1, n1)")
    if np.any(table.rates <= 0):
        raise NonPositiveRate("transition rates must be positive for a log fit")
    base = table.base_age if base_age is None else float(base_age)
    t = table.ages - base
    X = np.column_stack((np.ones_like(t), t))
    log_m1, n1 = _weighted_lstsq(X, np.log(table.rates), table.weights)
    m1 = math.exp(log_m1)
    resid = table.rates - transition_rate(t, m1, n1)
    return FitResult(parameters={"base_age": base, "m1": m1, "n1": float(n1)},
                     sse=float(np.sum(table.weights * resid**2)), iterations=1, converged=True,
                     model="transition")
