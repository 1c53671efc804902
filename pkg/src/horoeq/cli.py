"""Command-line entry point: ``horoeq <subcommand> [--config PATH] [--out DIR] [--seed N] [--threads N]``.

A run is described by one YAML file; missing keys take the defaults in
:data:`DEFAULT_CONFIG`. Each experiment writes ``summary.json`` (byte-stable for a
fixed config and seed), ``results.csv``, ``timings.json`` and two-column
``*.dat`` plot series under ``<out>/<experiment>/``.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from . import experiments as ex
from .core import (
    frame_distance,
    geodesic_matrix,
    matmul,
    orientation_self_test,
    state_to_frame,
    unstable_matrix,
)
from .fields import (
    FamilySpec,
    Observable,
    build_admissible_family,
    default_family_spec,
    default_observable,
    reference_observables,
)
from .flows import HamiltonianParams, IntegrationQualityError, IntegratorConfig, integrate
from .functionals import GridSpec
from .surface import ConfigurationError, build_bolza, from_disk, load_surface

OUT_ENV = "HOROEQ_OUT"

DEFAULT_CONFIG = {
    "surface": "bolza",
    "family": "default",
    "observable": "default",
    "integrator": {"h": 1e-3, "max_time": 1e4, "energy_monitor_interval": 100, "energy_tol": 1e-6, "eps_cap": 0.2},
    "seed": 0,
    "workers": 1,
    "out": "horoeq-out",
    "experiments": {
        "admissibility": {"n_x": 40, "n_y": 40, "n_angle": 64, "threshold": 1e-2, "T_max": 14.0, "nodes": 12,
                          "refine": True, "stability": 0.2},
        "liouville": {"n_mc": 1_000_000, "length": 1e4, "n_curves": 8},
        "equidist": {"t": 1.3, "b0_list": [1e-1, 1e-2, 1e-3, 1e-4], "n_base": 10, "n_samples": 256,
                     "sub_critical": [0.8, 1e-3], "step_check_samples": 8},
        "horocycle_rate": {"T_list": [1e2, 1e3, 1e4], "n_states": 20},
        "reduction_check": {"t": 1.2, "b0_list": [1e-2, 3e-3, 1e-3, 3e-4], "n_samples": 256, "gamma1": 0.49},
        "shadowing": {"eps_norms": [1e-4, 3e-4, 1e-3, 3e-3, 1e-2], "n_states": 10},
        "bounds": {"energy_window": [0.45, 0.55], "n_shells": 3, "n_base": 4, "b0": 1e-3, "t": 1.3,
                   "n_samples": 64},
    },
}

EXPERIMENTS = ("admissibility", "liouville", "equidist", "horocycle_rate", "reduction_check", "shadowing", "bounds")
SUBCOMMANDS = {"validate": None, "admissibility": "admissibility", "liouville": "liouville",
               "equidist": "equidist", "horocycle-rate": "horocycle_rate", "reduction-check": "reduction_check",
               "shadowing": "shadowing", "bounds": "bounds", "all": None}


class ConfigError(ConfigurationError):
    """Invalid run configuration; the message starts with the offending field path."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    # family/observable may be replaced wholesale by a mapping
    flat = {k: v for k, v in data.items() if k not in ("family", "observable")}
    cfg = _merge(DEFAULT_CONFIG, flat)
    for k in ("family", "observable"):
        if k in data:
            cfg[k] = data[k]
    return cfg


def _number(cfg: dict, key: str, path: str, *, positive: bool = False, integer: bool = False):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}: must be positive")
    return int(v) if integer else float(v)


def _check_params(p: dict, default: dict, path: str) -> dict:
    """Type-check experiment parameters against the defaults: flags stay flags, counts stay integers."""
    out = {}
    for key, ref in default.items():
        v = p[key]
        if isinstance(ref, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{path}.{key}: expected true or false, got {v!r}")
            out[key] = v
        elif isinstance(ref, list):
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{path}.{key}: expected a non-empty list, got {v!r}")
            if len(ref) == 2 and key in ("energy_window", "sub_critical") and len(v) != 2:
                raise ConfigError(f"{path}.{key}: expected two values")
            out[key] = [_number({key: x}, key, path, positive=True) for x in v]
        elif isinstance(ref, int):
            n = _number(p, key, path, integer=True)
            if n < 0:
                raise ConfigError(f"{path}.{key}: must be non-negative")
            out[key] = n
        else:
            out[key] = _number(p, key, path, positive=True)
    return out


class Run:
    """Validated configuration with the objects it describes."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.seed = _number(cfg, "seed", "config", integer=True)
        self.workers = _number(cfg, "workers", "config", positive=True, integer=True)
        self.surface = self._surface(cfg["surface"])
        self.family_spec = self._family_spec(cfg["family"])
        try:
            self.family = build_admissible_family(self.surface, self.family_spec)
        except ConfigurationError as exc:
            raise ConfigError(f"family: {exc}") from exc
        self.observable = self._observable(cfg["observable"])
        ic = cfg["integrator"]
        try:
            self.integrator = IntegratorConfig(
                h=_number(ic, "h", "integrator", positive=True),
                max_time=_number(ic, "max_time", "integrator", positive=True),
                energy_monitor_interval=_number(ic, "energy_monitor_interval", "integrator", positive=True,
                                                integer=True),
                energy_tol=_number(ic, "energy_tol", "integrator", positive=True),
                eps_cap=_number(ic, "eps_cap", "integrator", positive=True))
        except ValueError as exc:
            raise ConfigError(f"integrator: {exc}") from exc
        self.params = {name: _check_params(p, DEFAULT_CONFIG["experiments"][name], f"experiments.{name}")
                       for name, p in cfg["experiments"].items()}

    def _surface(self, spec):
        if spec == "bolza":
            return build_bolza()
        if not isinstance(spec, str):
            raise ConfigError("surface: expected 'bolza' or a file path")
        try:
            return load_surface(spec)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"surface: {exc}") from exc

    def _family_spec(self, spec) -> FamilySpec:
        if spec == "default":
            return default_family_spec()
        if not isinstance(spec, dict):
            raise ConfigError("family: expected 'default' or a mapping with 'potentials'")
        try:
            return FamilySpec.from_dict(spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"family: {exc}") from exc

    def _observable(self, spec) -> Observable:
        if spec == "default":
            return default_observable(self.surface)
        if isinstance(spec, str) and spec.startswith("reference:"):
            name = spec.split(":", 1)[1]
            found = [o for o in reference_observables(self.surface) if o.name == name]
            if not found:
                raise ConfigError(f"observable: no reference observable named {name!r}")
            return found[0]
        if not isinstance(spec, dict):
            raise ConfigError("observable: expected 'default', 'reference:<name>' or a mapping")
        allowed = {"centers_disk", "amplitudes", "r_max", "c0", "cos", "sin", "constant", "name"}
        unknown = set(spec) - allowed
        if unknown:
            raise ConfigError(f"observable.{sorted(unknown)[0]}: unknown key")
        try:
            centers = [from_disk(complex(x, y)) for x, y in spec.get("centers_disk", [])]
            return Observable(self.surface, centers, spec.get("amplitudes", []), r_max=spec.get("r_max", 0.7),
                              c0=spec.get("c0", 1.0), cos_coeffs=spec.get("cos", []), sin_coeffs=spec.get("sin", []),
                              constant=spec.get("constant", 0.0), name=spec.get("name", "observable"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"observable: {exc}") from exc

    def echo(self) -> dict:
        """Fully resolved configuration (family and observable expanded)."""
        out = copy.deepcopy(self.cfg)
        out["family"] = self.family_spec.to_dict()
        out["observable"] = self.observable.describe()
        out.pop("out", None)
        out.pop("workers", None)
        return out


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _exp_admissibility(run: Run, p: dict) -> ex.ExperimentReport:
    grid = GridSpec(n_x=int(p["n_x"]), n_y=int(p["n_y"]), n_angle=int(p["n_angle"]), threshold=float(p["threshold"]),
                    T_max=float(p["T_max"]), nodes=int(p["nodes"]))
    return ex.admissibility_experiment(run.family, grid, refine=bool(p["refine"]), stability=float(p["stability"]))


def _exp_liouville(run: Run, p: dict) -> ex.ExperimentReport:
    obs = run.observable
    others = [o for o in reference_observables(run.surface) if o.name != obs.name]
    return ex.liouville_experiment([obs] + others, n_mc=int(p["n_mc"]), length=float(p["length"]),
                                   n_curves=int(p["n_curves"]), seed=run.seed)


def _exp_equidist(run: Run, p: dict) -> ex.ExperimentReport:
    bases = ex.random_unit_states(run.surface, int(p["n_base"]), run.seed)
    return ex.equidistribution_sweep(run.family, run.observable, bases, b0_list=p["b0_list"], t=float(p["t"]),
                                     n_samples=int(p["n_samples"]), seed=run.seed, cfg=run.integrator,
                                     sub_critical=p["sub_critical"], workers=run.workers,
                                     step_check_samples=int(p["step_check_samples"]))


def _exp_horocycle_rate(run: Run, p: dict) -> ex.ExperimentReport:
    states = ex.random_unit_states(run.surface, int(p["n_states"]), run.seed, ex.TAG_HORO_RATE)
    return ex.horocycle_rate(run.observable, states, p["T_list"])


def _exp_reduction(run: Run, p: dict) -> ex.ExperimentReport:
    rho0 = ex.random_unit_states(run.surface, 1, run.seed)[0]
    return ex.reduction_chain_check(run.family, run.observable, rho0, b0_list=p["b0_list"], t=float(p["t"]),
                                    n_samples=int(p["n_samples"]), seed=run.seed, cfg=run.integrator,
                                    gamma1=float(p["gamma1"]))


def _exp_shadowing(run: Run, p: dict) -> ex.ExperimentReport:
    states = ex.random_unit_states(run.surface, int(p["n_states"]), run.seed, ex.TAG_SHADOWING)
    return ex.shadowing_study(run.family, states, p["eps_norms"], seed=run.seed, cfg=run.integrator,
                              workers=run.workers)


def _exp_bounds(run: Run, p: dict) -> ex.ExperimentReport:
    bases = ex.random_unit_states(run.surface, int(p["n_base"]), run.seed, ex.TAG_BOUNDS)
    return ex.a_plus_minus_bounds(run.family, run.observable, p["energy_window"], int(p["n_shells"]), bases,
                                  b0=float(p["b0"]), t=float(p["t"]), n_samples=int(p["n_samples"]), seed=run.seed,
                                  cfg=run.integrator, workers=run.workers)


RUNNERS: dict = {"admissibility": _exp_admissibility, "liouville": _exp_liouville, "equidist": _exp_equidist,
                 "horocycle_rate": _exp_horocycle_rate, "reduction_check": _exp_reduction,
                 "shadowing": _exp_shadowing, "bounds": _exp_bounds}


def self_tests(run: Run) -> ex.ExperimentReport:
    """Fast invariant checks of the configured surface, family and integrator."""
    rep = ex.ExperimentReport("validate", run.echo(), columns=["test", "value", "passed"])
    surf = run.surface

    def record(name, value, ok):
        rep.estimates[name] = value
        rep.checks[name] = bool(ok)
        rep.rows.append({"test": name, "value": value, "passed": bool(ok)})

    try:
        info = surf.validate()
        record("surface_structure", info["area"], True)
    except ConfigurationError:
        record("surface_structure", float("nan"), False)
    slope = orientation_self_test()
    record("unstable_expansion_rate", slope, abs(slope - 1) < 1e-3)

    states = ex.random_unit_states(surf, 16, run.seed)
    f = state_to_frame(states)
    gen = ex.stream(run.seed, 99)
    t = 20 * ex.open_uniform(gen, 16) - 10
    s = 2 * ex.open_uniform(gen, 16) - 1
    lhs = matmul(matmul(f, unstable_matrix(s)), geodesic_matrix(t))
    rhs = matmul(matmul(f, geodesic_matrix(t)), unstable_matrix(s * np.exp(t)))
    err = float(np.max(frame_distance(lhs, rhs)))
    record("intertwining", err, err < 1e-9)

    z = states.z
    zr, xr, _, _ = surf.reduce(z * 3 + 2, states.xi)
    record("reduction_in_domain", float(np.mean(surf.contains(zr))), bool(np.all(surf.contains(zr))))

    gens = surf.generators
    v = run.family.values(z)
    moved = matmul(gens[0], np.eye(2))
    zg = (moved[0, 0] * z + moved[0, 1]) / (moved[1, 0] * z + moved[1, 1])
    perr = float(np.max(np.abs(run.family.values(zg) - v)))
    record("potential_periodic", perr, perr < 1e-12)
    aerr = float(np.max(np.abs(run.observable(states) - run.observable(states.scaled(2.5)))))
    record("observable_homogeneous", aerr, aerr <= 1e-13)

    eps = np.full(run.family.size, 0.05)
    try:
        res = integrate(states[:4], HamiltonianParams(run.family, eps), 5.0, run.integrator)
        drift = float(np.max(res.energy_error))
        record("energy_drift", drift, drift <= run.integrator.energy_tol)
    except IntegrationQualityError as exc:
        record("energy_drift", exc.diagnostics.get("max_relative_error", float("nan")), False)
    return rep


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def write_report(rep: ex.ExperimentReport, out: Path) -> Path:
    d = out / rep.experiment
    d.mkdir(parents=True, exist_ok=True)
    (d / "summary.json").write_text(rep.summary_json())
    (d / "results.csv").write_text(rep.csv_text())
    (d / "timings.json").write_text(json.dumps(rep.timings, sort_keys=True, indent=2) + "\n")
    for name in rep.series:
        (d / f"{name}.dat").write_text(rep.series_text(name))
    return d


def _one_line(rep: ex.ExperimentReport) -> str:
    status = "PASS" if rep.passed else "FAIL"
    failed = [k for k, v in rep.checks.items() if not v]
    extra = f" failed={','.join(failed)}" if failed else ""
    return f"{rep.experiment}: {status} ({len(rep.checks)} checks){extra}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="horoeq", description="Perturbed geodesic flow experiments.")
    parser.add_argument("--version", action="version", version=f"horoeq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the config value)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--threads", type=int, help="worker processes")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            cfg["workers"] = args.threads
        out = args.out or os.environ.get(OUT_ENV) or cfg["out"]
        run = Run(cfg)
    except ConfigurationError as exc:
        print(f"horoeq: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "validate":
        selected = []
    elif args.command == "all":
        selected = list(EXPERIMENTS)
    else:
        selected = [SUBCOMMANDS[args.command]]

    ok = True
    reports = [self_tests(run)] if args.command in ("validate", "all") else []
    if reports:
        write_report(reports[0], out)
        print(_one_line(reports[0]))
        ok &= reports[0].passed
    for name in selected:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ex.ShadowingQualityWarning)
                rep = RUNNERS[name](run, run.params[name])
        except (ex.ConsistencyError, ex.SearchError, IntegrationQualityError) as exc:
            print(f"{name}: ERROR {exc}", file=sys.stderr)
            ok = False
            continue
        except ConfigurationError as exc:
            print(f"horoeq: invalid configuration: experiments.{name}: {exc}", file=sys.stderr)
            return 2
        rep.config = {"run": run.echo(), "experiment": rep.config}
        write_report(rep, out)
        print(_one_line(rep))
        ok &= rep.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
