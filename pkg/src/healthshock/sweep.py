"""Parameter sweeps of the optimal policy and the figure-direction battery.

A sweep re-solves the model for each value of one parameter and tabulates
pi*, c*, p* at a fixed comparison point (x, h) over a time grid.  The
special axis ``eta`` compares health states of a single solve.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .alive import alive_controls, solve_alive
from .config import apply_overrides, params_from_dict
from .dead import solve_dead
from .errors import ConfigError, ModelError
from .model import ModelParams

CONTROLS = ("pi", "c", "p")
ETA_AXIS = "eta"


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: ``axis`` is a dotted config key (or ``eta``).

    ``x``/``h`` default to the scenario's x0 and h0; ``state`` defaults to
    its eta0 and is ignored on the ``eta`` axis.
    """

    axis: str
    values: tuple
    x: float | None = None
    h: float | None = None
    n_times: int = 40
    t_max_frac: float = 0.9
    state: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) < 2:
            raise ConfigError("a sweep needs at least two values")
        if self.n_times < 1 or not (0 < self.t_max_frac <= 1):
            raise ConfigError("need n_times >= 1 and 0 < t_max_frac <= 1")

    def times(self, horizon: float) -> np.ndarray:
        return np.linspace(0.0, self.t_max_frac * horizon, self.n_times)


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    times: np.ndarray
    # controls[control] has shape (len(values), len(times))
    controls: dict

    def rows(self):
        for v_idx, value in enumerate(self.spec.values):
            for k, t in enumerate(self.times):
                for name in CONTROLS:
                    yield self.spec.axis, value, float(t), name, float(self.controls[name][v_idx, k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["axis", "value", "t", "control", "result", "annuity"])
        for axis, value, t, name, result in self.rows():
            annuity = int(name == "p" and result < 0)
            writer.writerow([axis, value, f"{t:.10g}", name, f"{result:.17g}", annuity])
        return buf.getvalue()

    def gnuplot_script(self, csv_name: str) -> str:
        """Gnuplot script drawing one panel per control, one line per value."""
        axis = self.spec.axis
        lines = [
            f"# {axis} sweep: pi*, c*, p* against t at the comparison point",
            "set datafile separator ','",
            f"set terminal pngcairo size 1500,450",
            f"set output 'sweep_{axis.replace('.', '_')}.png'",
            "set multiplot layout 1,3",
            "set xlabel 't'",
            "set key left top",
        ]
        for name in CONTROLS:
            plots = []
            for value in self.spec.values:
                cond = f'(strcol(2) eq "{value}" && strcol(4) eq "{name}") ? $5 : 1/0'
                plots.append(f"'{csv_name}' every ::1 using 3:({cond}) with lines title '{axis}={value}'")
            lines.append(f"set title '{name}*'")
            lines.append("plot " + ", \\\n     ".join(plots))
        lines.append("unset multiplot")
        return "\n".join(lines) + "\n"


def _tabulate(params: ModelParams, coeffs, times, x: float, h: float, state: int) -> dict:
    pi, c, p = alive_controls(times, x, h, state, coeffs, params)
    return {"pi": np.asarray(pi, dtype=float), "c": np.asarray(c, dtype=float), "p": np.asarray(p, dtype=float)}


def _solve(params: ModelParams):
    return solve_alive(params, solve_dead(params))


def run_sweep(tree: Mapping[str, Any], spec: SweepSpec, max_workers: int | None = None) -> SweepResult:
    """Tabulate the optimal controls for every value of ``spec.axis``."""
    base = params_from_dict(tree)
    times = spec.times(base.horizon_T)
    x = base.x0 if spec.x is None else spec.x
    h = base.habit.h0 if spec.h is None else spec.h

    if spec.axis == ETA_AXIS:
        coeffs = _solve(base)
        tables = [_tabulate(base, coeffs, times, x, h, int(v)) for v in spec.values]
    else:
        state = base.eta0 if spec.state is None else spec.state

        def one(value):
            try:
                params = params_from_dict(apply_overrides(tree, {spec.axis: value}))
                return _tabulate(params, _solve(params), times, x, h, state)
            except ModelError as exc:
                raise type(exc)(f"{spec.axis}={value}: {exc}") from exc

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            tables = list(pool.map(one, spec.values))
    controls = {name: np.vstack([tab[name] for tab in tables]) for name in CONTROLS}
    return SweepResult(spec=spec, times=times, controls=controls)


# --------------------------------------------------------------------------
# qualitative direction battery
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionCheck:
    name: str
    passed: bool
    detail: str


def _monotone(values: np.ndarray, direction: str) -> np.ndarray:
    """Per-column strict monotonicity along axis 0 of a (n_values, n_times) array."""
    d = np.diff(values, axis=0)
    return np.all(d < 0, axis=0) if direction == "decreasing" else np.all(d > 0, axis=0)


def _check(name: str, result: SweepResult, control: str, direction: str, initial_only: bool = False) -> DirectionCheck:
    ok = _monotone(result.controls[control], direction)
    if initial_only:
        ok = ok[:1]
    n_bad = int(np.count_nonzero(~ok))
    if n_bad:
        first = float(result.times[int(np.argmax(~ok))])
        detail = f"{control}* not {direction} at {n_bad}/{ok.size} times, first t={first:.4g}"
    else:
        detail = f"{control}* {direction} at all {ok.size} times"
    return DirectionCheck(name, n_bad == 0, detail)


# (axis, values, state, [(control, direction, initial_only)])
FIGURE_SWEEPS: tuple = (
    ("income.xi.1", (1.1, 1.25, 1.5), 1,
     [("pi", "decreasing", False), ("c", "decreasing", False), ("p", "decreasing", False)]),
    ("hazard.k1.0", (0.02, 0.032, 0.05), 1,
     [("pi", "decreasing", False), ("c", "decreasing", False), ("p", "increasing", False)]),
    ("hazard.k2.0", (0.003, 0.0043, 0.006), 1,
     [("pi", "decreasing", False), ("c", "decreasing", False), ("p", "increasing", False)]),
    ("habit.alpha", (0.05, 0.1, 0.15), 0,
     [("pi", "decreasing", False), ("c", "decreasing", True), ("p", "decreasing", False)]),
    ("habit.beta", (0.15, 0.174, 0.2), 0,
     [("pi", "increasing", False), ("p", "increasing", False)]),
)


def figure_directions(tree: Mapping[str, Any], n_times: int = 40) -> list[DirectionCheck]:
    """Qualitative comparative statics at (x0, h0) on [0, 0.9 T].

    Income and illness-mortality parameters only enter the sick state's
    primitives, so they are compared in state 1; habit parameters in the
    healthy state.
    """
    checks = []
    eta = run_sweep(tree, SweepSpec(ETA_AXIS, (0, 1), n_times=n_times))
    gap = eta.controls["pi"][1] < eta.controls["pi"][0]
    checks.append(DirectionCheck(
        "eta: pi*(sick) < pi*(healthy)", bool(gap.all()),
        f"holds at {int(gap.sum())}/{gap.size} times"))
    for axis, values, state, claims in FIGURE_SWEEPS:
        res = run_sweep(tree, SweepSpec(axis, values, n_times=n_times, state=state))
        for control, direction, initial in claims:
            label = f"{axis}: {'initial ' if initial else ''}{control}* {direction}"
            checks.append(_check(label, res, control, direction, initial))
    return checks
