"""Structured (YAML) configuration for :class:`ModelParams`.

Schema::

    market:      {r, mu, sigma}
    prefs:       {gamma, rho, k_a: [..], omega_a: [..], k_d, omega_d}
    habit:       {alpha, beta, h0}
    income:      {y0, delta, xi: [1, ..]}
    hazard:      {kind: gompertz_illness, m, n, l, k1: [..], k2: [..], loading}
                 | {kind: constant, rates: [..], loading}
    transitions: [{src, dst, m1, n1}, ...]       # q_src,dst(t) = m1 exp(n1 t)
    horizon_T, x0, eta0

Overrides use dotted keys into that tree; list entries are addressed by
index, e.g. ``income.xi.1=1.5`` or ``transitions.0.m1=2e-4``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError, InvalidParameter, ModelError
from .model import (
    ConstantHazard,
    ExponentialIntensity,
    GompertzIllnessHazard,
    HabitParams,
    HazardModel,
    HealthStateSpace,
    IncomeModel,
    MarketParams,
    ModelParams,
    PreferenceParams,
    ScaledHazard,
)

PAPER_DEFAULTS_TOKEN = "paper_defaults"

PAPER_DEFAULTS: dict[str, Any] = {
    "market": {"r": 0.02, "mu": 0.07, "sigma": 0.2},
    "prefs": {
        "gamma": 6.0,
        "rho": 0.1,
        "k_a": [1.0, 0.5],
        "omega_a": [2.5, 3.0],
        "k_d": 0.5,
        "omega_d": 3.0,
    },
    "habit": {"alpha": 0.1, "beta": 0.174, "h0": 6.0},
    "income": {"y0": 25000.0, "delta": 0.075, "xi": [1.0, 1.25]},
    "hazard": {
        "kind": "gompertz_illness",
        "m": 20.0,
        "n": 12.14982,
        "l": 92.29736,
        "k1": [0.032],
        "k2": [0.0043],
        "loading": 0.0,
    },
    "transitions": [{"src": 0, "dst": 1, "m1": 0.0001492, "n1": 0.07353}],
    "horizon_T": 40.0,
    "x0": 35000.0,
    "eta0": 0,
}


def paper_defaults_dict() -> dict[str, Any]:
    return copy.deepcopy(PAPER_DEFAULTS)


def paper_defaults() -> ModelParams:
    return params_from_dict(PAPER_DEFAULTS)


def _hazard_from_dict(d: Mapping[str, Any]) -> HazardModel:
    kind = d.get("kind")
    if kind == "gompertz_illness":
        return GompertzIllnessHazard(
            m=float(d["m"]),
            n=float(d["n"]),
            l=float(d["l"]),
            k1=d.get("k1", ()),
            k2=d.get("k2", ()),
            loading=float(d.get("loading", 0.0)),
        )
    if kind == "constant":
        return ConstantHazard(rates=d["rates"], loading=float(d.get("loading", 0.0)))
    if kind == "scaled":
        return ScaledHazard(base=_hazard_from_dict(d["base"]), factor=float(d["factor"]))
    raise ConfigError(f"unknown hazard kind {kind!r}")


def params_from_dict(d: Mapping[str, Any]) -> ModelParams:
    """Build and validate :class:`ModelParams` from the nested schema."""
    try:
        hazard = _hazard_from_dict(d["hazard"])
        prefs = d["prefs"]
        return ModelParams(
            market=MarketParams(**{k: float(v) for k, v in d["market"].items()}),
            prefs=PreferenceParams(
                gamma=float(prefs["gamma"]),
                rho=float(prefs["rho"]),
                k_a=prefs["k_a"],
                omega_a=prefs["omega_a"],
                k_d=float(prefs["k_d"]),
                omega_d=float(prefs["omega_d"]),
            ),
            habit=HabitParams(**{k: float(v) for k, v in d["habit"].items()}),
            states=HealthStateSpace(
                n_states=hazard.n_states,
                intensities=tuple(
                    ExponentialIntensity(int(q["src"]), int(q["dst"]), float(q["m1"]), float(q["n1"]))
                    for q in d.get("transitions", ())
                ),
            ),
            hazard=hazard,
            income=IncomeModel(
                y0=float(d["income"]["y0"]),
                delta=float(d["income"]["delta"]),
                xi=d["income"]["xi"],
            ),
            horizon_T=float(d["horizon_T"]),
            x0=float(d["x0"]),
            eta0=int(d.get("eta0", 0)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing configuration key {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc


def params_to_dict(p: ModelParams) -> dict[str, Any]:
    return {
        "market": {"r": p.market.r, "mu": p.market.mu, "sigma": p.market.sigma},
        "prefs": {
            "gamma": p.prefs.gamma,
            "rho": p.prefs.rho,
            "k_a": list(p.prefs.k_a),
            "omega_a": list(p.prefs.omega_a),
            "k_d": p.prefs.k_d,
            "omega_d": p.prefs.omega_d,
        },
        "habit": {"alpha": p.habit.alpha, "beta": p.habit.beta, "h0": p.habit.h0},
        "income": {"y0": p.income.y0, "delta": p.income.delta, "xi": list(p.income.xi)},
        "hazard": p.hazard.to_dict(),
        "transitions": [
            {"src": q.src, "dst": q.dst, "m1": q.m1, "n1": q.n1} for q in p.states.intensities
        ],
        "horizon_T": p.horizon_T,
        "x0": p.x0,
        "eta0": p.eta0,
    }


def parse_scalar(text: str) -> Any:
    value = yaml.safe_load(text)
    if isinstance(value, (dict, list)) or value is None:
        raise ConfigError(f"override value {text!r} is not a scalar")
    if isinstance(value, str):
        # YAML 1.1 reads forms like 2e-4 as strings
        try:
            return float(value)
        except ValueError:
            return value
    return value


def apply_overrides(d: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Return a copy of ``d`` with dotted-key overrides applied.

    Every key must already exist in ``d``; string values are parsed as YAML
    scalars so ``"0.05"`` becomes a float.
    """
    out = copy.deepcopy(dict(d))
    for key, value in overrides.items():
        if isinstance(value, str):
            value = parse_scalar(value)
        parts = key.split(".")
        node: Any = out
        for depth, part in enumerate(parts):
            last = depth == len(parts) - 1
            if isinstance(node, list):
                try:
                    idx = int(part)
                    node[idx]
                except (ValueError, IndexError):
                    raise ConfigError(f"override key {key!r}: no list entry {part!r}") from None
                if last:
                    node[idx] = value
                else:
                    node = node[idx]
            elif isinstance(node, dict):
                if part not in node:
                    raise ConfigError(f"override key {key!r} does not exist")
                if last:
                    if isinstance(node[part], (dict, list)):
                        raise ConfigError(f"override key {key!r} names a block, not a value")
                    node[part] = value
                else:
                    node = node[part]
            else:
                raise ConfigError(f"override key {key!r} descends into a scalar")
    return out


def parse_set_args(items: list[str] | None) -> dict[str, str]:
    """Parse repeated ``key=value`` command-line arguments."""
    out: dict[str, str] = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def load_config_dict(source: str | Path) -> dict[str, Any]:
    """Load a model config tree from a YAML file or the ``paper_defaults`` token.

    A file may either be the model tree itself or wrap it under ``model:``
    together with a top-level ``overrides:`` map.
    """
    if str(source) == PAPER_DEFAULTS_TOKEN:
        return paper_defaults_dict()
    path = Path(source)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    if "model" in raw:
        model = raw["model"]
        model = paper_defaults_dict() if model == PAPER_DEFAULTS_TOKEN else model
        return apply_overrides(model, raw.get("overrides") or {})
    return raw


def resolve_params(source: str | Path, overrides: Mapping[str, Any] | None = None) -> tuple[ModelParams, dict]:
    """Load, override and validate; returns the params and the resolved tree."""
    tree = apply_overrides(load_config_dict(source), overrides or {})
    try:
        return params_from_dict(tree), tree
    except (InvalidParameter, ModelError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_yaml(p: ModelParams) -> str:
    return yaml.safe_dump(params_to_dict(p), sort_keys=False)


def config_hash(tree: Mapping[str, Any]) -> str:
    """Short stable digest of a resolved configuration tree."""
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
