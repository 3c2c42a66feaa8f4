"""Command-line scenario runner.

    socmodels run <config.yaml | preset-name>
    socmodels verify {fast,full}
    socmodels presets list

Outputs go to ``$SOCMODELS_OUTPUT/<run name>`` (default ``./runs``). Exit
codes: 0 success, 1 failed verification, 2 invalid configuration, 3
numerical failure.
"""
from __future__ import annotations

import argparse
import os
import platform
import sys
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import scipy
import yaml

from . import __version__
from .core import BatterySpec, CapacityTrace, ConstantCurrent, PoissonTrain, PulseTrain, discharge_trace
from .errors import ModelError, NumericalFailure
from .io import write_csv, write_json
from .numerics import DEFAULT_TOLERANCES, RNG_ALGORITHM, ToleranceConfig

OUTPUT_ENV = "SOCMODELS_OUTPUT"
MODELS = ("kibam", "compartments", "pde", "markov", "nlode")


class ConfigError(ModelError):
    """The scenario file is malformed or names unknown options."""


# --------------------------------------------------------------------------
# config parsing


def preset_dir() -> Path:
    return Path(str(resources.files("socmodels") / "presets"))


def list_presets() -> dict[str, str]:
    out = {}
    for path in sorted(preset_dir().glob("*.yaml")):
        cfg = yaml.safe_load(path.read_text()) or {}
        out[path.stem] = str(cfg.get("description", "")).strip()
    return out


def load_config(ref: str) -> dict:
    path = Path(ref)
    if not path.exists():
        candidate = preset_dir() / f"{ref}.yaml"
        if not candidate.exists():
            raise ConfigError(f"no config file or preset named {ref!r}")
        path = candidate
    try:
        cfg = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    cfg.setdefault("name", path.stem)
    return cfg


def _require(cfg: dict, key: str, where: str = "config") -> Any:
    if key not in cfg:
        raise ConfigError(f"{where} is missing required key {key!r}")
    return cfg[key]


def _battery(cfg: dict) -> BatterySpec:
    b = _require(cfg, "battery")
    return BatterySpec(float(_require(b, "N", "battery")), float(_require(b, "T", "battery")))


def _tolerances(cfg: dict) -> ToleranceConfig:
    over = cfg.get("tolerances") or {}
    known = {f.name for f in fields(ToleranceConfig)}
    bad = set(over) - known
    if bad:
        raise ConfigError(f"unknown tolerance keys {sorted(bad)}; allowed {sorted(known)}")
    tol = DEFAULT_TOLERANCES.replace(**{k: type(getattr(DEFAULT_TOLERANCES, k))(v) for k, v in over.items()})
    for f in fields(tol):
        if not getattr(tol, f.name) > 0:
            raise ConfigError(f"tolerance {f.name} must be positive")
    return tol


def _profile(cfg: dict):
    pr = _require(cfg, "profile")
    kind = _require(pr, "kind", "profile")
    if kind == "constant":
        return ConstantCurrent(float(_require(pr, "rate", "profile")))
    if kind == "pulse":
        return PulseTrain(*(float(_require(pr, k, "profile")) for k in ("current", "on_duration", "off_duration")))
    if kind == "poisson":
        return PoissonTrain(float(_require(pr, "jump_charge", "profile")), float(_require(pr, "event_rate", "profile")),
                            seed=int(pr.get("seed", 0)))
    raise ConfigError(f"unknown profile kind {kind!r}; use constant, pulse or poisson")


def _grid(cfg: dict) -> np.ndarray:
    g = _require(cfg, "grid")
    if "times" in g:
        t = np.asarray(g["times"], dtype=float)
    else:
        t = np.linspace(float(g.get("t_start", 0.0)), float(_require(g, "t_end", "grid")), int(g.get("n", 101)))
    if t.ndim != 1 or len(t) < 1 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ConfigError("grid times must be non-negative and strictly increasing")
    return t


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def _out_dir(cfg: dict) -> Path:
    out = cfg.get("output") or {}
    if "dir" in out:
        d = Path(out["dir"])
        return d if d.is_absolute() else output_root() / d
    return output_root() / str(cfg["name"])


# --------------------------------------------------------------------------
# model runners; each returns a list of written files


def _ensure_n_paths(cfg: dict, default: int = 1) -> int:
    n = int(cfg.get("n_paths", default))
    if n < 1:
        raise ConfigError("n_paths must be at least 1")
    return n


def run_kibam(cfg: dict, out: Path, tol: ToleranceConfig) -> list[Path]:
    from .kibam import KibamParams, kibam_general_u, kibam_poisson_path

    battery = _battery(cfg)
    prm = _require(cfg, "params")
    if "kc" in prm:
        params = KibamParams.from_kc(float(prm["kc"]), float(prm.get("p", 0.0)), battery)
    else:
        params = KibamParams(float(_require(prm, "k", "params")), float(prm.get("p", 0.0)), battery)
    profile = _profile(cfg)
    t = _grid(cfg)
    written = []
    if isinstance(profile, PoissonTrain):
        for i in range(_ensure_n_paths(cfg)):
            trace = discharge_trace(profile, float(t[-1]), i)
            st = kibam_poisson_path(params, trace, t)
            written.append(st.to_csv(out / f"kibam_path{i:04d}.csv"))
            written.append(CapacityTrace(t, st.v, st.u, battery).to_csv(out / f"capacity_path{i:04d}.csv"))
    else:
        trace = discharge_trace(profile, float(t[-1]))
        st = kibam_general_u(params, trace, t)
        written.append(st.to_csv(out / "kibam.csv"))
        written.append(CapacityTrace(t, st.v, st.u, battery).to_csv(out / "capacity.csv"))
    return written


def _spatial_params(cfg: dict, prm: dict):
    from .spatial import SpatialParams

    return SpatialParams(float(_require(prm, "kappa", "params")), float(prm.get("mu", 0.0)), float(prm.get("rho", 0.0)),
                         _battery(cfg))


def run_compartments(cfg: dict, out: Path, tol: ToleranceConfig) -> list[Path]:
    from .spatial import CompartmentSystem, compartment_remaining_capacity, simulate_compartments

    prm = _require(cfg, "params")
    m = int(_require(prm, "m", "params"))
    sys_ = CompartmentSystem.from_spatial(_spatial_params(cfg, prm), m)
    t = _grid(cfg)
    u = simulate_compartments(sys_, discharge_trace(_profile(cfg), float(t[-1])), t)
    cols = [t] + [u[:, j] for j in range(m)]
    written = [write_csv(out / "compartments.csv", ["t_hours"] + [f"u{j + 1}_Ah" for j in range(m)], cols)]
    v = compartment_remaining_capacity(sys_, u)
    written.append(CapacityTrace(t, v, u[:, 0], _battery(cfg)).to_csv(out / "capacity.csv"))
    return written


def run_pde(cfg: dict, out: Path, tol: ToleranceConfig) -> list[Path]:
    from .spatial import (
        available_capacity,
        end_of_life,
        pde_solution,
        phase_plane_curve,
        phase_plane_to_csv,
        profile_to_csv,
        transition_density,
    )

    profile = _profile(cfg)
    if not isinstance(profile, ConstantCurrent):
        raise ConfigError("pde runs support constant-current profiles only")
    rate = profile.rate
    sets = cfg.get("param_sets") or [dict(cfg.get("params") or {}, id="run")]
    base = cfg.get("params") or {}
    n_points = int((cfg.get("grid") or {}).get("n", 200))
    written, summary = [], []
    for entry in sets:
        prm = {**base, **entry}
        sid = str(prm.get("id", f"mu{prm.get('mu', 0)}_rho{prm.get('rho', 0)}"))
        params = _spatial_params(cfg, prm)
        kind = (cfg.get("output") or {}).get("kind", "phase_plane")
        if kind not in ("phase_plane", "profile", "density"):
            raise ConfigError(f"unknown pde output kind {kind!r}; use phase_plane, profile or density")
        if kind == "density":
            t = _grid(cfg)
            y = float((cfg.get("output") or {}).get("y", 0.0))
            x = np.linspace(0.0, params.ell, int(cfg.get("output", {}).get("n_x", 91)))
            vals = np.stack([transition_density(float(ti), y, x, params, tol) for ti in t])
            tt, xx = np.meshgrid(t, x, indexing="ij")
            written.append(write_csv(out / f"density_{sid}.csv", ["t_hours", "x", "p"], [tt.ravel(), xx.ravel(),
                                                                                       vals.ravel()]))
        elif kind == "phase_plane":
            curve = phase_plane_curve(params, rate, n_points=n_points, tol=tol)
            written.append(phase_plane_to_csv(out / f"phase_plane_{sid}.csv", {sid: curve}))
            t_eol, v_eol = end_of_life(params, rate, tol)
            summary.append((sid, params.mu, params.rho, t_eol, v_eol))
        else:
            t = _grid(cfg)
            u = available_capacity(t, params, rate, tol)
            v = u + params.N * params.ell - rate * t
            written.append(CapacityTrace(t, v, u, params.battery).to_csv(out / f"capacity_{sid}.csv"))
            x = np.linspace(0.0, params.ell, int(cfg.get("output", {}).get("n_x", 19)))
            trace = discharge_trace(profile, float(t[-1]))
            vals = np.stack([pde_solution(float(ti), x, params, trace=trace, tol=tol) for ti in t])
            written.append(profile_to_csv(out / f"profile_{sid}.csv", t, x, vals))
    if summary:
        ids, mus, rhos, ts, vs = zip(*summary)
        written.append(write_csv(out / "end_of_life.csv", ["param_set_id", "mu", "rho", "t0_hours", "v0_Ah"],
                                 [list(ids), mus, rhos, ts, vs]))
    return written


def _markov_params(cfg: dict):
    from .stochastic import MarkovParams

    prm = _require(cfg, "params")
    vals = [float(_require(prm, k, "params")) for k in ("alpha", "beta", "q", "unit_charge")]
    return MarkovParams(*vals, _battery(cfg), level=int(prm.get("m", 1)))


def run_markov(cfg: dict, out: Path, tol: ToleranceConfig) -> list[Path]:
    from .nlode import fluid_limit_closed
    from .stochastic import chain_ensemble

    params = _markov_params(cfg)
    t = _grid(cfg)
    seed = int(cfg.get("seed", 0))
    ens = chain_ensemble(params, t, _ensure_n_paths(cfg, 100), seed)
    x = fluid_limit_closed(params, t, tol)
    v = params.battery.T - params.rate * t
    return [ens.to_csv(out / "ensemble.csv"), CapacityTrace(t, v, x, params.battery).to_csv(out / "fluid.csv")]


def _nlode_spec(cfg: dict, rate: float):
    from .nlode import NlodeSpec, recovery_from_config

    prm = _require(cfg, "params")
    G = recovery_from_config(_require(prm, "G", "params"))
    F = recovery_from_config(prm["F"]) if "F" in prm else None
    return NlodeSpec(G, float(_require(prm, "a", "params")), rate, _battery(cfg), F)


def run_nlode(cfg: dict, out: Path, tol: ToleranceConfig) -> list[Path]:
    from .core import average_rate
    from .nlode import expode_poisson_paths, expode_solve, generic_ode_solve

    profile = _profile(cfg)
    t = _grid(cfg)
    spec = _nlode_spec(cfg, average_rate(profile))
    battery = spec.battery
    written = []
    if spec.is_exponential:
        x_det = expode_solve(spec, t, tol)
    else:
        x_det = generic_ode_solve(spec, ConstantCurrent(spec.rate), t, tol=tol).x
    det = CapacityTrace(t, battery.T - spec.rate * t, x_det, battery)
    written.append(det.to_csv(out / "deterministic.csv"))
    if isinstance(profile, PoissonTrain) and spec.is_exponential:
        n = _ensure_n_paths(cfg, 20)
        V, X = expode_poisson_paths(spec, profile, t, n)
        n_write = min(n, int((cfg.get("output") or {}).get("paths_written", 20)))
        for i in range(n_write):
            path = CapacityTrace(t, V[i], X[i], battery)
            written.append(path.to_csv(out / f"soc_path{i:04d}.csv"))
        ids = np.repeat(np.arange(n_write), len(t))
        written.append(write_csv(out / "phase_plane.csv", ["v_Ah", "x_Ah", "run_id"],
                                 [V[:n_write].ravel(), X[:n_write].ravel(), ids]))
        se = X.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(len(t), np.nan)
        written.append(write_csv(out / "ensemble.csv", ["t_hours", "mean_x_Ah", "se_x_Ah", "det_x_Ah", "n_paths"],
                                 [t, X.mean(axis=0), se, x_det, n]))
    elif not isinstance(profile, ConstantCurrent):
        tr = generic_ode_solve(spec, profile, t, tol=tol)
        written.append(tr.to_csv(out / "capacity.csv"))
    threshold = (cfg.get("output") or {}).get("threshold")
    if threshold is not None:
        from .metrics import performance_report

        ev = (lambda s: float(expode_solve(spec, s, tol))) if spec.is_exponential else None
        rep = performance_report(det, float(threshold), evaluator=ev, v_of_t=lambda s: battery.T - spec.rate * s)
        written += [rep.to_csv(out / "performance.csv"), rep.to_json(out / "performance.json")]
    return written


def _seeds(cfg: dict) -> dict:
    seeds = {}
    if "seed" in cfg:
        seeds["seed"] = cfg["seed"]
    profile = cfg.get("profile")
    if isinstance(profile, dict) and "seed" in profile:
        seeds["profile_seed"] = profile["seed"]
    return seeds


RUNNERS = {"kibam": run_kibam, "compartments": run_compartments, "pde": run_pde, "markov": run_markov,
           "nlode": run_nlode}


def run_config(cfg: dict) -> tuple[Path, list[Path]]:
    model = _require(cfg, "model")
    if model not in RUNNERS:
        raise ConfigError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    tol = _tolerances(cfg)
    _battery(cfg)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    written = RUNNERS[model](cfg, out, tol)
    meta = {
        "config": cfg,
        "tolerances": asdict(tol),
        "seeds": _seeds(cfg),
        "rng": RNG_ALGORITHM,
        "versions": {"socmodels": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "outputs": sorted(str(p.relative_to(out)) for p in written),
    }
    write_json(out / "run_meta.json", meta)
    return out, written


# --------------------------------------------------------------------------
# entry point


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out, written = run_config(cfg)
    print(f"wrote {len(written)} files to {out}")
    return 0


def _cmd_verify(args) -> int:
    from .acceptance import run_suite

    results = run_suite(args.suite, echo=print)
    failed = [r for r in results if not r.passed]
    report = output_root() / f"verify_{args.suite}.json"
    write_json(report, {"suite": args.suite, "passed": not failed, "criteria": [r.to_dict() for r in results]})
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed; report at {report}")
    for r in failed:
        print(f"FAILED: criterion {r.cid} ({r.name})")
    return 1 if failed else 0


def _cmd_presets(args) -> int:
    for name, desc in list_presets().items():
        print(f"{name}\t{desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="socmodels", description="Battery state-of-charge model runner")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config (path or preset name)")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("suite", choices=["fast", "full"])
    v.set_defaults(func=_cmd_verify)
    p = sub.add_parser("presets", help="bundled scenario presets")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=_cmd_presets)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
