"""Command-line interface: solve, simulate, verify, calibrate, sweep.

Exit codes: 0 success, 1 verification or dominance failure, 2 usage,
configuration or solver error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import __version__
from .alive import alive_value, solve_alive
from .calibration import FitResult, fit_gompertz, fit_illness_excess, fit_transition, read_table
from .config import PAPER_DEFAULTS_TOKEN, parse_scalar, config_hash, dump_yaml, parse_set_args, resolve_params
from .dead import solve_dead
from .errors import ConfigError, ModelError
from .simulation import OptimalPolicy, SimConfig, estimate_difference, estimate_objective, simulate
from .sweep import ETA_AXIS, FIGURE_SWEEPS, SweepSpec, run_sweep
from .verification import GridSpec, check_mc_value, corrupt, reports_csv, run_suite

log = logging.getLogger("healthshock")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _header(chash: str, extra: str = "") -> str:
    line = f"# healthshock {__version__} config_hash={chash}"
    return line + (f" {extra}" if extra else "") + "\n"


def _write(out: Path, name: str, body: str, header: str | None) -> Path:
    path = out / name
    path.write_text((header or "") + body, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _factor_arg(text: str, what: str) -> tuple[str, float, int]:
    parts = text.split(":")
    if len(parts) not in (2, 3) or not parts[0]:
        raise UsageError(f"{what} expects NAME:VALUE, got {text!r}")
    try:
        value = float(parts[1])
        state = int(parts[2]) if len(parts) == 3 else 0
    except ValueError:
        raise UsageError(f"{what} {text!r}: value must be numeric") from None
    return parts[0], value, state


def _resolve(args):
    params, tree = resolve_params(args.config, parse_set_args(args.set))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return params, tree, out


def _sim_config(args) -> SimConfig:
    if args.paths is not None and args.paths < 1:
        raise UsageError("--paths must be >= 1")
    return SimConfig(n_paths=args.paths, dt=args.dt, seed=args.seed, antithetic=args.antithetic,
                     penalty=args.penalty, death_habit=args.death_habit, n_dump=args.dump)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_solve(args) -> int:
    params, tree, out = _resolve(args)
    chash = config_hash(tree)
    dead = solve_dead(params, n_nodes=args.nodes)
    alive = solve_alive(params, dead, h_d_ref=args.h_d_ref, n_steps=args.steps)
    hdr = _header(chash, f"dead_nodes={args.nodes} rk4_steps={args.steps} "
                         f"step_doubling_rel_change={alive.step_doubling_rel_change:.3e}")
    _write(out, "dead_coeffs.csv", dead.to_csv(), hdr)
    _write(out, "alive_coeffs.csv", alive.to_csv(), hdr)
    V0 = alive_value(0.0, params.x0, params.habit.h0, params.eta0, alive, params)
    rows = [("N", f"{dead.N:.17g}"), ("B0", f"{dead.B(0.0):.17g}")]
    rows += [(f"G{i}_0", f"{alive.G[0, i]:.17g}") for i in range(params.n_states)]
    rows += [("V0", f"{V0:.17g}"), ("step_doubling_rel_change", f"{alive.step_doubling_rel_change:.3e}")]
    _write(out, "summary.csv", _csv(rows, ["quantity", "value"]), hdr)
    _write(out, "config_resolved.yaml", dump_yaml(params), f"# healthshock {__version__} config_hash={chash}\n")
    for name, value in rows:
        print(f"{name} = {value}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    params, tree, out = _resolve(args)
    cfg = _sim_config(args)
    alive = solve_alive(params, solve_dead(params), h_d_ref=args.h_d_ref)
    policy = OptimalPolicy(params, alive)
    base = simulate(params, policy, cfg)
    est = estimate_objective(base)
    V0 = alive_value(0.0, params.x0, params.habit.h0, params.eta0, alive, params, h_d=policy.h_d_ref)
    rows = [("optimal", f"{est.mean:.17g}", f"{est.std_error:.17g}", est.n_effective, est.n_penalized,
             "", "", "")]
    failed = False
    for text in args.perturb or ():
        name, factor, _ = _factor_arg(text, "--perturb")
        if name not in ("merton", "consumption", "premium"):
            raise UsageError(f"--perturb name must be merton, consumption or premium, got {name!r}")
        bundle = simulate(params, policy.perturbed(**{name: factor}), cfg)
        pe = estimate_objective(bundle)
        diff = estimate_difference(bundle, base)
        ok = diff.mean <= 3.0 * diff.std_error
        failed |= not ok
        rows.append((f"{name}:{factor:g}", f"{pe.mean:.17g}", f"{pe.std_error:.17g}", pe.n_effective,
                     pe.n_penalized, f"{diff.mean:.17g}", f"{diff.std_error:.17g}", int(ok)))
    hdr = _header(config_hash(tree), f"paths={cfg.n_paths} dt={cfg.dt:g} seed={cfg.seed} "
                                     f"antithetic={int(cfg.antithetic)} closed_form_V0={V0:.17g}")
    body = _csv(rows, ["policy", "mean", "std_error", "n_effective", "n_penalized",
                       "diff_vs_optimal", "diff_std_error", "dominance_pass"])
    _write(out, "mc_report.csv", body, hdr)
    if cfg.n_dump:
        _write(out, "paths.csv", base.dump_csv(), hdr)
    print(body, end="")
    print(f"closed-form V(0,x0,h0,eta0) = {V0:.6e}")
    return EXIT_FAIL if failed else EXIT_OK


def _grid_arg(text: str) -> GridSpec:
    try:
        counts = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--grid expects NT,NX,NH, got {text!r}") from None
    if len(counts) != 3:
        raise UsageError(f"--grid expects NT,NX,NH, got {text!r}")
    if min(counts) < 1:
        raise UsageError("--grid counts must all be >= 1")
    return GridSpec(n_t=counts[0], n_x=counts[1], n_h=counts[2])


def cmd_verify(args) -> int:
    grid = _grid_arg(args.grid)
    params, tree, out = _resolve(args)
    alive = solve_alive(params, solve_dead(params), h_d_ref=args.h_d_ref)
    label = ""
    if args.corrupt:
        name, eps, state = _factor_arg(args.corrupt, "--corrupt")
        alive = corrupt(alive, name, eps, state)
        label = f" corrupt={args.corrupt}"
    suite = run_suite(alive, params, grid)
    text = [r.to_text() for r in suite.reports]
    passed = suite.passed
    if args.mc:
        cfg = _sim_config(args)
        mc = check_mc_value(params, cfg, coeffs=alive, h_d_ref=args.h_d_ref)
        text.append(mc.to_text())
        passed &= mc.value_passed and mc.dominance_passed
    report = "\n".join(text) + "\n"
    hdr = _header(config_hash(tree), f"grid={grid.describe().replace(' ', ';')}{label}")
    _write(out, "verify_report.txt", report, hdr)
    _write(out, "verify_worst.csv", reports_csv(suite.reports), hdr)
    print(report, end="")
    print("verification", "PASSED" if passed else "FAILED")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_calibrate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model == "illness" and not args.base:
        raise UsageError("--model illness needs --base FIT.csv from a prior gompertz fit")
    kind = "morbidity" if args.model == "transition" else "mortality"
    table = read_table(args.table, kind)
    if args.model == "gompertz":
        init = None
        if args.init:
            try:
                n0, l0 = (float(v) for v in args.init.split(","))
            except ValueError:
                raise UsageError("--init expects n,l") from None
            init = {"n": n0, "l": l0}
        fit = fit_gompertz(table, init)
    elif args.model == "illness":
        try:
            base = FitResult.from_csv(Path(args.base).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read --base: {exc}") from exc
        fit = fit_illness_excess(table, base)
    else:
        fit = fit_transition(table)
    body = fit.to_csv()
    _write(out, f"fit_{args.model}.csv", body, f"# healthshock {__version__} table={Path(args.table).name}\n")
    print(body, end="")
    return EXIT_OK


def _values_arg(text: str) -> tuple:
    values = tuple(parse_scalar(v.strip()) for v in text.split(",") if v.strip())
    if len(values) < 2:
        raise UsageError("--values needs at least two comma-separated values")
    return values


def _emit_sweep(out: Path, tree, chash: str, spec: SweepSpec) -> None:
    res = run_sweep(tree, spec)
    stem = f"sweep_{spec.axis.replace('.', '_')}"
    hdr = _header(chash, f"axis={spec.axis} x={spec.x} h={spec.h} state={spec.state}")
    _write(out, f"{stem}.csv", res.to_csv(), hdr)
    _write(out, f"{stem}.gp", res.gnuplot_script(f"{stem}.csv"), hdr)


def cmd_sweep(args) -> int:
    params, tree, out = _resolve(args)
    chash = config_hash(tree)
    if args.figures:
        specs = [SweepSpec(ETA_AXIS, (0, 1), x=args.x, h=args.h, n_times=args.times)]
        specs += [SweepSpec(axis, values, x=args.x, h=args.h, n_times=args.times, state=state)
                  for axis, values, state, _ in FIGURE_SWEEPS]
    else:
        if not args.axis or not args.values:
            raise UsageError("sweep needs --axis and --values (or --figures)")
        specs = [SweepSpec(args.axis, _values_arg(args.values), x=args.x, h=args.h, n_times=args.times,
                           state=args.state)]
    for spec in specs:
        _emit_sweep(out, tree, chash, spec)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=PAPER_DEFAULTS_TOKEN,
                        help="YAML config file or 'paper_defaults' (default)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-key override (repeatable)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--paths", type=int, default=10_000)
    sim.add_argument("--dt", type=float, default=1e-2)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--antithetic", action="store_true")
    sim.add_argument("--penalty", type=float, default=-1.0, help="utility assigned to inadmissible paths")
    sim.add_argument("--death-habit", choices=("continue", "reset"), default="continue")
    sim.add_argument("--dump", type=int, default=10, help="number of trajectories written to paths.csv")

    hd = argparse.ArgumentParser(add_help=False)
    hd.add_argument("--h-d-ref", type=float, default=None,
                    help="fixed habit level at death (default: the current habit)")

    parser = argparse.ArgumentParser(prog="healthshock", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"healthshock {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common, hd], help="solve and export coefficient tables")
    p.add_argument("--steps", type=int, default=4000, help="RK4 steps for the alive system")
    p.add_argument("--nodes", type=int, default=4001, help="grid nodes for the post-death g")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", parents=[common, sim, hd], help="Monte Carlo of the optimal policy")
    p.add_argument("--perturb", action="append", metavar="NAME:FACTOR",
                   help="also run a perturbed policy: merton, consumption or premium (repeatable)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common, sim, hd], help="HJB, FOC and ODE checks")
    p.add_argument("--grid", default="50,20,10", help="NT,NX,NH grid counts")
    p.add_argument("--corrupt", metavar="NAME:EPS[:STATE]", help="perturb a coefficient table (g, A, M_y, M_B, G)")
    p.add_argument("--mc", action="store_true", help="also run the Monte Carlo value and dominance checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("calibrate", parents=[common], help="fit hazard models to a table")
    p.add_argument("--model", choices=("gompertz", "illness", "transition"), required=True)
    p.add_argument("--table", required=True, help="CSV with header age,rate[,weight]")
    p.add_argument("--base", help="gompertz fit CSV (required for --model illness)")
    p.add_argument("--init", help="initial n,l for the gompertz fit")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", parents=[common], help="policy sweeps over one parameter")
    p.add_argument("--axis", help="dotted config key, or 'eta' to compare health states")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--figures", action="store_true", help="run every figure sweep")
    p.add_argument("--times", type=int, default=40)
    p.add_argument("--x", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--state", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
