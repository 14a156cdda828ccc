"""Experiment runner: configuration, dispatch, artifacts and verdicts.

A configuration is a YAML mapping with the sections below; every key is
checked before any computation and unknown keys are rejected.

    experiment: simulate | pullback | stability | measure | liouville |
                mixing | ou-diagnostics | conjugation
    params:     nu, sigma, n, length, dealias_fraction, dt, nonlinear
    noise:      seeds, t_min, t_max, dt, init_mode
    forcing:    kind, shape, mode, amplitude, seed, spectrum, snapshot,
                exponent, delta
    tolerances: slack_c, quad_tol, mc_multiplier
    options:    experiment-specific keys (see ``_OPTIONS``)
    output_dir: directory for CSV / JSON / binary artifacts
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy import integrate

from .errors import ConfigError, SNSEError
from .fields import (ForcingSpec, Grid, SpectralField, normalized,
                     random_divfree_field, single_mode_field, taylor_green)
from .integrator import (DEFAULT_SLACK_C, CocycleParams, conjugation_check, integrate_cnse)
from .io import read_field_snapshot, write_csv, write_field_snapshot, write_path_csv, \
    write_trajectory_csv
from .measures import (MC_MULT, CylindricalFunctional, GaussianBump, MeasureSampleSpec,
                       capped_norm, cesaro_observable, ito_order_study, liouville_balance,
                       low_modes, mixing_test, transition_expectation)
from .noise import ou_trajectory, sample_wiener_path, shift_path
from .rds import (TEMPERED_NOTE, absorbing_radius, apriori_bounds, forcing_hypothesis_check,
                  pullback_ensemble, stability_batch)

EXPERIMENTS = ("simulate", "pullback", "stability", "measure", "liouville", "mixing",
               "ou-diagnostics", "conjugation")
EXIT_PASS, EXIT_FALSIFIED, EXIT_ERROR = 0, 1, 2


# ---------------------------------------------------------------------------
# value checkers: each returns the normalized value or raises ValueError

def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {v!r}")
    return v


def _pos(v):
    v = _num(v)
    if not v > 0:
        raise ValueError(f"must be positive, got {v!r}")
    return v


def _nonneg(v):
    v = _num(v)
    if v < 0:
        raise ValueError(f"must be non-negative, got {v!r}")
    return v


def _unit(v):
    v = _num(v)
    if not 0 < v <= 1:
        raise ValueError(f"must lie in (0, 1], got {v!r}")
    return v


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _pos_int(v):
    v = _int(v)
    if v < 1:
        raise ValueError(f"must be >= 1, got {v!r}")
    return v


def _even_int(v):
    v = _int(v)
    if v < 8 or v % 2:
        raise ValueError(f"must be an even integer >= 8, got {v!r}")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def _str(v):
    if not isinstance(v, str) or not v:
        raise ValueError(f"expected a non-empty string, got {v!r}")
    return v


def _opt_str(v):
    return None if v is None else _str(v)


def _choice(*names):
    def check(v):
        if v not in names:
            raise ValueError(f"must be one of {list(names)}, got {v!r}")
        return v
    return check


def _list_of(check, min_len=1):
    def run(v):
        if not isinstance(v, (list, tuple)) or len(v) < min_len:
            raise ValueError(f"expected a list with at least {min_len} entries, got {v!r}")
        return [check(x) for x in v]
    return run


def _mode(v):
    out = _list_of(_int, 2)(v)
    if len(out) != 2 or out == [0, 0]:
        raise ValueError(f"expected a nonzero integer pair, got {v!r}")
    return out


def _seeds(v):
    out = _list_of(_int)(v)
    if any(s < 0 for s in out):
        raise ValueError("seeds must be non-negative")
    if len(set(out)) != len(out):
        raise ValueError("seeds must be distinct")
    return out


_FIELD_KEYS = {
    "kind": (_choice("random", "taylor-green", "single-mode", "zero", "snapshot"), "random"),
    "radius": (lambda v: None if v is None else _pos(v), 1.0),
    "spectrum": (_num, 2.0),
    "seed_base": (_int, 1_000_000),
    "mode": (_mode, [1, 1]),
    "amplitude": (_num, 1.0),
    "snapshot": (_opt_str, None),
}

_SECTIONS = {
    "params": {
        "nu": (_pos, 0.01), "sigma": (_nonneg, 1.0), "n": (_even_int, 128),
        "length": (_pos, 8 * math.pi), "dealias_fraction": (_unit, 2.0 / 3.0),
        "dt": (_pos, 1e-3), "nonlinear": (_bool, True),
    },
    "noise": {
        "seeds": (_seeds, [0]), "t_min": (_num, -50.0), "t_max": (_num, 50.0),
        "dt": (_pos, 1e-3),
        "init_mode": (_choice("stationary-draw", "zero"), "stationary-draw"),
    },
    "forcing": {
        "kind": (_choice("zero", "fixed-field", "time-polynomial"), "zero"),
        "shape": (_choice("single-mode", "taylor-green", "random", "snapshot"), "single-mode"),
        "mode": (_mode, [1, 1]), "amplitude": (_num, 0.05), "seed": (_int, 0),
        "spectrum": (_num, 2.0), "snapshot": (_opt_str, None),
        "exponent": (_nonneg, 0.0), "delta": (_nonneg, 0.25),
    },
    "tolerances": {
        "slack_c": (_pos, DEFAULT_SLACK_C), "quad_tol": (_pos, 1e-6),
        "mc_multiplier": (_pos, MC_MULT),
    },
}

_OPTIONS = {
    "simulate": {
        "t_start": (_num, 0.0), "t_end": (_num, 1.0),
        "snapshot_times": (_list_of(_num, 0), []), "initial": ("field", {}),
    },
    "pullback": {
        "tau": (_num, 0.0), "pull_times": (_list_of(_pos), [20.0, 40.0]),
        "n_data": (_pos_int, 4), "Z": (_pos, 60.0), "qdt": (lambda v: None if v is None else _pos(v), None),
        "margin": (_nonneg, 1e-2), "pass_fraction": (_unit, 0.95),
        "hypothesis_s": (_list_of(_num, 2), [-10.0, -20.0, -40.0]),
        "hypothesis_c": (_list_of(_pos), [0.1, 1.0]),
        "initial": ("field", {}),
    },
    "stability": {
        "t_end": (_pos, 40.0), "observe_every": (_pos_int, 10),
        "pass_fraction": (_unit, 0.95), "initial": ("field", {}),
    },
    "measure": {
        "t": (_nonneg, 40.0), "power": (_pos_int, 2), "cap": (_pos, 10.0),
        "threshold": (_pos, 1e-3), "tau": (_num, 0.0), "cesaro_T": (_pos, 20.0),
        "n_nodes": (_pos_int, 41), "initial": ("field", {}),
    },
    "mixing": {
        "t_grid": (_list_of(_nonneg), [10.0, 20.0, 40.0]), "power": (_pos_int, 2),
        "cap": (_pos, 10.0), "initial": ("field", {}),
    },
    "liouville": {
        "tau": (_num, 0.0), "t_end": (_num, 2.0), "t_pull": (_pos, 20.0),
        "n_members": (_pos_int, 8), "n_modes": (_pos_int, 3),
        "psi_center": (_list_of(_num), [0.3, 0.0, -0.2]), "psi_width": (_pos, 0.7),
        "ito_levels": (_int, 4), "ito_order_min": (_num, 0.45), "initial": ("field", {}),
    },
    "ou-diagnostics": {
        "delta": (_pos, 1.0), "block": (_pos, 5.0), "variance_tol": (_pos, 0.05),
        "mean_tol": (_pos, 0.05), "decay_ratio": (_pos, 1e-2),
    },
    "conjugation": {
        "tau": (_num, 0.0), "t_end": (_num, 1.0), "levels": (_pos_int, 3),
        "order_min": (_num, 0.45), "initial": ("field", {}),
    },
}


def _check_mapping(raw, schema, prefix, errors):
    out = {}
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"{prefix}: expected a mapping, got {type(raw).__name__}")
        raw = {}
    for key in raw:
        if key not in schema:
            errors.append(f"{prefix}.{key}: unknown key")
    for key, (check, default) in schema.items():
        name = f"{prefix}.{key}"
        if check == "field":
            out[key] = _check_mapping(raw.get(key, default), _FIELD_KEYS, name, errors)
            continue
        val = raw.get(key, default)
        try:
            out[key] = check(copy.deepcopy(val))
        except ValueError as exc:
            errors.append(f"{name}: {exc}")
            out[key] = default
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    params: CocycleParams
    noise: dict
    forcing: ForcingSpec
    tolerances: dict
    options: dict
    output_dir: str
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def grid(self) -> Grid:
        return self.params.grid


def _build_field(spec: dict, grid: Grid, seed: int | None, where: str) -> SpectralField:
    kind = spec["kind"]
    if kind == "zero":
        return SpectralField.zeros(grid)
    if kind == "random":
        f = random_divfree_field(spec["seed_base"] + (seed or 0), grid, spec["spectrum"])
    elif kind == "taylor-green":
        f = taylor_green(grid, spec["amplitude"])
    elif kind == "single-mode":
        f = single_mode_field(grid, tuple(spec["mode"]), spec["amplitude"])
    else:
        if not spec["snapshot"]:
            raise ConfigError(f"{where}.snapshot: required for kind 'snapshot'")
        f = read_field_snapshot(spec["snapshot"], grid)
    r = spec.get("radius")
    return normalized(f, r) if r is not None else f


def _window_errors(exp, o, nz, forced) -> list[str]:
    """Noise window coverage required by each experiment."""
    lo, hi = nz["t_min"], nz["t_max"]
    need = []
    if exp == "simulate":
        need = [o["t_start"], o["t_end"]]
    elif exp == "pullback":
        need = [-max(o["pull_times"]), -o["Z"], 0.0, -o["tau"]]
    elif exp == "stability":
        need = [0.0, o["t_end"]]
    elif exp == "liouville":
        need = [o["tau"] - o["t_pull"] - o["t_end"], 0.0, -o["t_end"]]
    elif exp == "ou-diagnostics":
        need = [lo + nz["dt"], 0.0, hi - nz["dt"]]
        if not lo < 0 < hi:
            return ["noise.t_min: ou-diagnostics needs t_min < 0 < t_max"]
    elif exp == "conjugation":
        need = [o["tau"], o["t_end"]]
    elif exp == "measure" and forced:
        need = [-o["cesaro_T"], 0.0, -o["tau"]]
    errs = []
    if need and min(need) < lo - 1e-12:
        errs.append(f"noise.t_min: window [{lo}, {hi}] must reach {min(need)} for {exp}")
    if need and max(need) > hi + 1e-12:
        errs.append(f"noise.t_max: window [{lo}, {hi}] must reach {max(need)} for {exp}")
    return errs


def validate_config(raw: dict, experiment: str | None = None, seed_offset: int = 0,
                    output_dir: str | None = None) -> ExperimentConfig:
    """Check every field; raise ConfigError listing all offending names."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(f"config: expected a mapping at top level, got {type(raw).__name__}")
    top = {"experiment", "params", "noise", "forcing", "tolerances", "options", "output_dir"}
    for key in raw:
        if key not in top:
            errors.append(f"{key}: unknown key")
    exp = raw.get("experiment", experiment)
    if experiment is not None and exp != experiment:
        errors.append(f"experiment: config names {exp!r} but {experiment!r} was requested")
    if exp not in EXPERIMENTS:
        errors.append(f"experiment: must be one of {list(EXPERIMENTS)}, got {exp!r}")
    sec = {name: _check_mapping(raw.get(name), schema, name, errors)
           for name, schema in _SECTIONS.items()}
    opts = _check_mapping(raw.get("options"), _OPTIONS.get(exp, {}), "options", errors) \
        if exp in EXPERIMENTS else {}
    out_dir = output_dir if output_dir is not None else raw.get("output_dir", "snse2d_out")
    if not isinstance(out_dir, str) or not out_dir:
        errors.append(f"output_dir: expected a non-empty string, got {out_dir!r}")
    if not isinstance(seed_offset, int) or seed_offset < 0:
        errors.append(f"seed_offset: must be a non-negative integer, got {seed_offset!r}")
    else:
        sec["noise"]["seeds"] = [s + seed_offset for s in sec["noise"]["seeds"]]

    p, nz, fc = sec["params"], sec["noise"], sec["forcing"]
    if not nz["t_min"] < nz["t_max"]:
        errors.append(f"noise.t_max: must exceed t_min={nz['t_min']!r}")
    ratio = p["dt"] / nz["dt"]
    # ou-diagnostics never steps the fluid, so params.dt is irrelevant there
    if exp != "ou-diagnostics" and (abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1):
        errors.append(f"params.dt: {p['dt']!r} must be a whole multiple of noise.dt={nz['dt']!r}")
    for name in ("t_min", "t_max"):
        r = nz[name] / nz["dt"]
        if abs(r - round(r)) > 1e-7 * max(1.0, abs(r)):
            errors.append(f"noise.{name}: {nz[name]!r} is not on the noise.dt lattice")
    if fc["kind"] != "zero" and fc["delta"] >= p["sigma"] ** 2 / 2:
        errors.append(f"forcing.delta: {fc['delta']!r} must be below sigma^2/2 = {p['sigma'] ** 2 / 2!r}")
    if exp in ("stability", "mixing") and fc["kind"] != "zero":
        errors.append(f"forcing.kind: {exp} requires zero forcing")
    if exp in ("pullback",) and fc["kind"] == "zero":
        errors.append("forcing.kind: pullback needs a nonzero forcing for a positive radius")
    if exp in ("stability", "pullback", "measure", "mixing", "liouville", "ou-diagnostics") \
            and p["sigma"] == 0:
        errors.append(f"params.sigma: {exp} needs sigma > 0")
    if exp == "simulate" and opts["t_end"] < opts["t_start"]:
        errors.append("options.t_end: must be >= options.t_start")
    if exp in ("liouville", "conjugation") and opts["t_end"] <= opts["tau"]:
        errors.append("options.t_end: must exceed options.tau")
    lv = {"liouville": "ito_levels", "conjugation": "levels"}.get(exp)
    if lv and opts[lv] >= 2:
        r = p["dt"] / 2 ** (opts[lv] - 1) / nz["dt"]
        if abs(r - round(r)) > 1e-9 * r or round(r) < 1:
            errors.append(f"options.{lv}: finest step dt/2^{opts[lv] - 1} must be a multiple "
                          f"of noise.dt={nz['dt']!r}")
    if exp == "liouville" and len(opts["psi_center"]) != opts["n_modes"]:
        errors.append("options.psi_center: length must equal options.n_modes")
    if exp in EXPERIMENTS and not [e for e in errors if e.startswith(("noise.", "options."))]:
        errors.extend(_window_errors(exp, opts, nz, fc["kind"] != "zero"))

    grid = params = forcing = None
    if not [e for e in errors if e.startswith("params.")]:
        try:
            grid = Grid(p["n"], p["length"], p["dealias_fraction"])
        except SNSEError as exc:
            errors.append(f"params.n: {exc}")
    if grid is not None and not [e for e in errors if e.startswith("forcing.")]:
        try:
            if fc["kind"] == "zero":
                forcing = ForcingSpec()
            else:
                shape = {"kind": fc["shape"], "radius": None, "spectrum": fc["spectrum"],
                         "seed_base": fc["seed"], "mode": fc["mode"],
                         "amplitude": fc["amplitude"], "snapshot": fc["snapshot"]}
                f1 = _build_field(shape, grid, 0, "forcing")
                if fc["shape"] == "random":
                    f1 = normalized(f1, abs(fc["amplitude"]))
                forcing = ForcingSpec(fc["kind"], f1, fc["exponent"], fc["delta"])
        except (SNSEError, OSError) as exc:
            errors.append(f"forcing.{fc['shape'] if fc['kind'] != 'zero' else 'kind'}: {exc}")
    if forcing is not None:
        try:
            params = CocycleParams(p["nu"], p["sigma"], grid, p["dt"], forcing,
                                   p["nonlinear"], sec["tolerances"]["slack_c"])
        except SNSEError as exc:
            errors.append(f"params: {exc}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    resolved = {"experiment": exp, **sec, "options": opts}
    return ExperimentConfig(exp, params, nz, forcing, sec["tolerances"], opts, out_dir, resolved)


def load_config(path, experiment: str | None = None, seed_offset: int = 0,
                output_dir: str | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return validate_config(raw if raw is not None else {}, experiment, seed_offset, output_dir)


# ---------------------------------------------------------------------------
# reports

@dataclass
class Verdict:
    anchor: str
    status: str  # pass | fail | flag
    detail: str = ""
    value: float | None = None
    bound: float | None = None

    def __str__(self) -> str:
        return f"{self.anchor}: {self.status}" + (f" ({self.detail})" if self.detail else "")

    def as_dict(self) -> dict:
        return {"anchor": self.anchor, "status": self.status, "detail": self.detail,
                "value": self.value, "bound": self.bound, "text": str(self)}


@dataclass
class RunReport:
    experiment: str
    config_hash: str
    verdicts: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    wall_time: float = 0.0
    error: str | None = None
    parallel_unit: str = "path"
    estimates: dict = field(default_factory=dict)
    note: str = ""

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_ERROR
        if any(v.status == "fail" for v in self.verdicts):
            return EXIT_FALSIFIED
        return EXIT_PASS

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "config_hash": self.config_hash,
                "verdicts": [v.as_dict() for v in self.verdicts],
                "artifacts": list(self.artifacts), "wall_time": self.wall_time,
                "error": self.error, "parallel_unit": self.parallel_unit,
                "estimates": self.estimates, "note": self.note,
                "exit_code": self.exit_code}


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


class _Ctx:
    """Artifact bookkeeping shared by the experiment functions."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = cfg.output_dir
        os.makedirs(self.out, exist_ok=True)
        self.artifacts = []
        self.meta = {"config_hash": cfg.config_hash, "experiment": cfg.experiment}

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def csv(self, name, columns, rows, **meta):
        p = write_csv(self.path(name), columns, rows, {**self.meta, **meta})
        self.artifacts.append(p)
        return p

    def snapshot(self, name, f: SpectralField):
        p = self.path(name)
        write_field_snapshot(f, p)
        self.artifacts.append(p)
        return p

    def paths(self):
        nz = self.cfg.noise
        return [sample_wiener_path(s, nz["t_min"], nz["t_max"], nz["dt"]) for s in nz["seeds"]]

    def initial(self, seed: int, key: str = "initial") -> SpectralField:
        return _build_field(self.cfg.options[key], self.cfg.grid, seed, f"options.{key}")


# ---------------------------------------------------------------------------
# experiments; each returns (verdicts, estimates, parallel unit, note)

def _exp_simulate(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    p = cfg.params
    g = p.grid
    t0, t1 = o["t_start"], o["t_end"]
    flags = {"budget": True, "rho": True, "rho_tilde": True, "rho_hat": True}
    margins = []
    tg_err = []
    for seed, path in zip(cfg.noise["seeds"], ctx.paths()):
        # y does not depend on sigma; sigma = 0 only switches z to 1
        ou = ou_trajectory(path, p.sigma if p.sigma > 0 else 1.0, cfg.noise["init_mode"])
        v0 = ctx.initial(seed)
        z0 = math.exp(-p.sigma * ou.y(t0))
        rec = integrate_cnse(v0 * z0, t0, t1, ou, p, o["snapshot_times"])
        b = apriori_bounds(rec)
        for k in flags:
            flags[k] = flags[k] and b.verdicts[k]
        margins.append({"seed": seed, **b.margins})
        z1 = math.exp(-p.sigma * ou.y(t1))
        v1 = rec.final * (1.0 / z1)
        ctx.artifacts.append(write_trajectory_csv(
            ctx.path(f"trajectory_seed{seed}.csv"), rec,
            {**ctx.meta, "seed": seed, "variable": "u = z v", "tol_discrete": rec.tol_discrete}))
        ctx.artifacts.append(write_path_csv(ctx.path(f"path_seed{seed}.csv"), path,
                                            ou_trajectory(path, p.sigma if p.sigma > 0 else 1.0,
                                                          cfg.noise["init_mode"]),
                                            {**ctx.meta, "sigma": p.sigma}))
        ctx.snapshot(f"final_seed{seed}.snse", v1)
        for ts, u in sorted(rec.snapshots.items()):
            ctx.snapshot(f"snapshot_seed{seed}_t{ts:g}.snse", u * (1.0 / math.exp(-p.sigma * ou.y(ts))))
        if (p.sigma == 0 and cfg.forcing.is_zero and o["initial"]["kind"] == "taylor-green"):
            rate = p.nu * 2 * g.k0**2
            exact = v0 * math.exp(-rate * (t1 - t0))
            tg_err.append((v1 - exact).norm() / exact.norm())
    tol = p.slack_c * p.dt
    names = {"budget": "Lemma 3.6 (ei1) discrete energy budget",
             "rho": "Lemma 3.6 (ei2) rho bound",
             "rho_tilde": "Lemma 3.6 (ei8) rho~ bound on |grad u|^2",
             "rho_hat": "Lemma 3.6 (ei8) rho^ bound on int |Au|^2"}
    verdicts = [Verdict(names[k], _status(v), f"slack C*dt = {tol:.3g}", None, tol)
                for k, v in flags.items()]
    if tg_err:
        worst = float(max(tg_err))
        verdicts.append(Verdict("Taylor-Green e^{-2 nu t} decay (closed form)",
                                _status(worst <= 1e-6), f"max relative error {worst:.3e}",
                                worst, 1e-6))
    return verdicts, {"bounds_margins": margins}, "trajectory", ""


def _exp_pullback(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    p = cfg.params
    tau = o["tau"]
    rows, mrows = [], []
    ok_paths, tail_ok = 0, True
    seeds = cfg.noise["seeds"]
    paths = ctx.paths()
    data = [[ctx.initial(seed * o["n_data"] + i) for i in range(o["n_data"])] for seed in seeds]
    reps = pullback_ensemble(tau, o["pull_times"], paths, data, p, cfg.noise["init_mode"])
    for seed, path, rep in zip(seeds, paths, reps):
        est = absorbing_radius(tau, path, p.sigma, cfg.forcing, o["Z"], o["qdt"],
                               init_mode=cfg.noise["init_mode"])
        bound = est.M_value * (1 + o["margin"])
        ok = bool(np.all(rep.terminal_norms <= bound))
        ok_paths += ok
        tail_ok = tail_ok and est.tail_bound <= cfg.tolerances["quad_tol"] * max(est.M_value, 1e-300)
        mrows.append((seed, est.M_value, est.tail_bound, est.truncation_depth, est.quadrature_dt,
                      int(ok)))
        for i, t in enumerate(rep.pull_times):
            for j in range(o["n_data"]):
                rows.append((seed, t, j, rep.terminal_norms[i, j], rep.terminal_v_norms[i, j],
                             rep.diameters[i, 0], rep.diameters[i, 1]))
    ctx.csv("pullback.csv", ["seed", "pull_time", "datum", "h_norm_sq", "v_norm_sq",
                             "h_diameter", "v_diameter"], rows, note=TEMPERED_NOTE, tau=tau)
    ctx.csv("absorbing_radius.csv", ["seed", "M", "tail_bound", "Z", "qdt", "within"], mrows,
            tau=tau)
    need = math.ceil(o["pass_fraction"] * len(seeds) - 1e-9)
    verdicts = [
        Verdict("Lemma 3.8 / Lemma 3.9 (AB1) absorbing radius",
                _status(ok_paths >= need),
                f"{ok_paths}/{len(seeds)} paths inside M(1+{o['margin']:g}), need {need}",
                float(ok_paths), float(need)),
        Verdict("Lemma 3.9 (AB1) quadrature tail", "pass" if tail_ok else "flag",
                f"tail bound vs quad_tol {cfg.tolerances['quad_tol']:g}"),
    ]
    hyp = forcing_hypothesis_check(cfg.forcing, p.sigma, o["hypothesis_s"], o["hypothesis_c"])
    for c, res in hyp.items():
        verdicts.append(Verdict(f"Hypothesis 3.2 (forcing2) monotone decay, c={c:g}",
                                _status(res["monotone_decreasing"]),
                                "values " + ", ".join(f"{v:.4g}" for v in res["values"])))
    return verdicts, {"hypothesis": {str(c): r for c, r in hyp.items()}}, "path", TEMPERED_NOTE


def _exp_stability(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    seeds = cfg.noise["seeds"]
    pairs = [(ctx.initial(2 * s), ctx.initial(2 * s + 1)) for s in seeds]
    rep = stability_batch(pairs, ctx.paths(), cfg.params, o["t_end"], o["observe_every"],
                          cfg.noise["init_mode"])
    rows = [(s, t, rep.ratio[i, k], rep.envelope[k])
            for i, s in enumerate(seeds) for k, t in enumerate(rep.times)]
    ctx.csv("stability.csv", ["seed", "t", "ratio", "envelope"], rows)
    ctx.csv("stability_onset.csv", ["seed", "onset", "final_ratio", "within"],
            [(s, rep.onset[i], rep.ratio[i, -1], int(rep.ratio[i, -1] <= rep.envelope[-1]))
             for i, s in enumerate(seeds)])
    final_ok = int((rep.ratio[:, -1] <= rep.envelope[-1]).sum())
    need = math.ceil(o["pass_fraction"] * len(seeds) - 1e-9)
    v = Verdict("Lemma 5.1 (U1) envelope", _status(final_ok >= need),
                f"{final_ok}/{len(seeds)} paths with r(T) <= e^(-sigma^2 T/4) = "
                f"{rep.envelope[-1]:.3e}; {rep.pass_count} stay below after onset",
                float(final_ok), float(need))
    return [v], {"onset": rep.onset.tolist()}, "path", TEMPERED_NOTE


def _exp_measure(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    p = cfg.params
    seeds = cfg.noise["seeds"]
    obs = capped_norm(o["power"], o["cap"])
    x = ctx.initial(0)
    mult = cfg.tolerances["mc_multiplier"]
    if cfg.forcing.is_zero:
        mean, se, ndiv = transition_expectation(obs, o["t"], x, len(seeds), p, seeds=seeds,
                                                noise_dt=cfg.noise["dt"])
        ctx.csv("measure.csv", ["t", "mean", "stderr", "n_paths", "n_diverged"],
                [(o["t"], mean, se, len(seeds), ndiv)], observable=obs.name)
        v = Verdict("Theorem 5.5 / Remark 5.6 Dirac-at-zero transition expectation",
                    _status(mean <= o["threshold"]),
                    f"T_t g(x) = {mean:.3e} +- {mult:g}*{se:.2e} at t={o['t']:g}",
                    mean, o["threshold"])
        return [v], {"mean": mean, "stderr": se, "n_diverged": ndiv}, "path", ""
    rows = []
    for seed, path in zip(seeds, ctx.paths()):
        res = cesaro_observable(obs, lambda t: x, o["tau"], path, o["cesaro_T"], p, o["n_nodes"])
        rows.append((seed, res.average, res.stderr))
    ctx.csv("measure.csv", ["seed", "cesaro_average", "stderr"], rows, observable=obs.name)
    avg = [r[1] for r in rows]
    v = Verdict("Theorem 4.8 sample-measure Cesaro estimate", "flag",
                "estimate only; uniqueness for f != 0 is not claimed",
                float(np.mean(avg)))
    return [v], {"cesaro": avg}, "path", "f != 0: no uniqueness claim"


def _exp_mixing(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    seeds = cfg.noise["seeds"]
    psi = capped_norm(o["power"], o["cap"])
    x = ctx.initial(0)
    rep = mixing_test(psi, x, o["t_grid"], len(seeds), cfg.params, seeds=seeds,
                      noise_dt=cfg.noise["dt"])
    mult = cfg.tolerances["mc_multiplier"]
    status = []
    for d, e, s in zip(rep.deviation, rep.envelope, rep.series.stderr):
        status.append("pass" if d <= e + mult * s else ("flag" if mult * s >= e else "fail"))
    ctx.csv("mixing.csv", ["t", "mean", "stderr", "envelope", "deviation", "status"],
            zip(rep.series.times, rep.series.values, rep.series.stderr, rep.envelope,
                rep.deviation, status), observable=psi.name, lipschitz=psi.lipschitz)
    overall = "fail" if "fail" in status else ("flag" if "flag" in status else "pass")
    v = Verdict("Theorem 5.5 / Remark 5.6 mixing envelope L|v0|e^{-sigma^2 t/8}", overall,
                ", ".join(f"t={t:g}:{s}" for t, s in zip(rep.series.times, status)))
    return [v], {"mean": rep.series.values.tolist(), "stderr": rep.series.stderr.tolist()}, \
        "path", ""


def _exp_liouville(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    p = cfg.params
    g = p.grid
    Lam = CylindricalFunctional(tuple(low_modes(g, o["n_modes"])),
                                GaussianBump(tuple(o["psi_center"]), o["psi_width"]))
    seeds = cfg.noise["seeds"]
    paths = ctx.paths()
    spec = MeasureSampleSpec([ctx.initial(i) for i in range(o["n_members"])], o["t_pull"])
    rep = liouville_balance(o["tau"], o["t_end"], paths, Lam, spec, p)
    mult = cfg.tolerances["mc_multiplier"]
    bound = mult * rep.stderr + rep.discretization
    ok = abs(rep.gap) <= bound
    ctx.csv("liouville.csv", ["seed", "lhs", "rhs", "gap"],
            zip(seeds, rep.lhs, rep.rhs, rep.gaps), gap=rep.gap, stderr=rep.stderr,
            discretization=rep.discretization)
    verdicts = [Verdict("Theorem 4.12 (SLTT1) two-sided Liouville balance", _status(ok),
                        f"|gap| = {abs(rep.gap):.3e} vs {mult:g} stderr + disc = {bound:.3e}",
                        abs(rep.gap), bound)]
    est = {"gap": rep.gap, "stderr": rep.stderr, "discretization": rep.discretization}
    if o["ito_levels"] >= 2:
        # the same increments that drive the balance above
        shifted = [shift_path(q, -o["t_end"]) for q in paths]
        dts, rms, order = ito_order_study(Lam, ctx.initial(0), o["tau"], o["t_end"], shifted,
                                          p, o["ito_levels"])
        ctx.csv("ito_order.csv", ["dt", "rms_residual"], zip(dts, rms), order=order)
        verdicts.append(Verdict("(ItoF) Ito formula residual order", _status(order >= o["ito_order_min"]),
                                f"order {order:.3f}", order, o["ito_order_min"]))
        est["ito_order"] = order
    return verdicts, est, "path", TEMPERED_NOTE


def _block_max_decreasing(t, vals, block):
    edges = np.arange(0.0, t[-1] + block, block)
    maxima = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (t >= a) & (t < b) if b < t[-1] else (t >= a)
        if sel.any():
            maxima.append(vals[sel].max())
    maxima = np.array(maxima)
    return bool(np.all(np.diff(maxima) < 0)), maxima


def _exp_ou(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    nz = cfg.noise
    rows = []
    variances, means, decays, ratios = [], [], [], []
    for seed, path in zip(nz["seeds"], ctx.paths()):
        ou = ou_trajectory(path, cfg.params.sigma if cfg.params.sigma > 0 else 1.0,
                           nz["init_mode"])
        i0 = ou.index(0.0)
        fwd = ou.y_values[i0:]
        var = float(np.mean(fwd**2))
        mean = float(integrate.trapezoid(fwd, dx=ou.dt) / ou.t_max)
        back = ou.y_values[: i0 + 1][::-1]  # y(theta_{-t} w) for t = 0, dt, ...
        tb = np.arange(len(back)) * ou.dt
        w = np.exp(-o["delta"] * tb) * np.abs(back)
        mono, _ = _block_max_decreasing(tb, w, o["block"])
        ratio = float(w[-1] / w[0]) if w[0] > 0 else float("inf")
        variances.append(var)
        means.append(mean)
        decays.append(mono and ratio < o["decay_ratio"])
        ratios.append(ratio)
        rows.append((seed, var, mean, ratio, int(mono)))
    ctx.csv("ou_diagnostics.csv", ["seed", "variance", "time_average", "decay_ratio",
                                   "block_max_decreasing"], rows, delta=o["delta"],
            block=o["block"])
    var = float(np.mean(variances))
    mean = float(np.mean(means))
    verdicts = [
        Verdict("(OU1)-(OU2) stationary variance 1/2", _status(abs(var - 0.5) <= o["variance_tol"]),
                f"pooled variance {var:.4f} over {len(rows)} paths", var, o["variance_tol"]),
        Verdict("(Z3) ergodic time average of y", _status(abs(mean) <= o["mean_tol"]),
                f"pooled time average {mean:.4f} over [0, {nz['t_max']:g}]", mean, o["mean_tol"]),
        Verdict("(Z3) e^{-delta t}|y(theta_{-t} w)| decay", _status(all(decays)),
                f"{sum(decays)}/{len(rows)} paths with decreasing block maxima and final ratio "
                f"< {o['decay_ratio']:g}", float(max(ratios)), o["decay_ratio"]),
    ]
    return verdicts, {"variance": var, "time_average": mean}, "path", ""


def _exp_conjugation(ctx: _Ctx):
    cfg, o = ctx.cfg, ctx.cfg.options
    v0 = ctx.initial(0)
    rep = conjugation_check(v0, o["tau"], o["t_end"], ctx.paths(), cfg.params, o["levels"],
                            cfg.noise["init_mode"])
    rms = np.sqrt(np.nanmean(rep.discrepancies**2, axis=0))
    ctx.csv("conjugation.csv", ["dt", "rms_relative_gap"], zip(rep.dts, rms), order=rep.order)
    ok = not rep.diverged and np.isfinite(rep.order) and rep.order >= o["order_min"]
    v = Verdict("(COV) conjugation strong order", _status(bool(ok)),
                f"order {rep.order:.3f}" + (f"; diverged at {rep.diverged}" if rep.diverged else ""),
                rep.order, o["order_min"])
    return [v], {"order": rep.order, "rms": rms.tolist()}, "path", ""


_DISPATCH = {
    "simulate": _exp_simulate, "pullback": _exp_pullback, "stability": _exp_stability,
    "measure": _exp_measure, "mixing": _exp_mixing, "liouville": _exp_liouville,
    "ou-diagnostics": _exp_ou, "conjugation": _exp_conjugation,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Run the configured experiment and write its artifacts plus report.json.

    Runtime failures of the numerics are captured into the report (exit
    code 2) rather than raised.
    """
    start = time.perf_counter()
    report = RunReport(config.experiment, config.config_hash)
    try:
        ctx = _Ctx(config)
    except OSError as exc:
        report.error = f"output_dir: cannot create {config.output_dir}: {exc}"
        return report
    with open(ctx.path("config.resolved.json"), "w") as fh:
        json.dump(_jsonable(config.resolved), fh, indent=2, sort_keys=True)
        fh.write("\n")
    ctx.artifacts.append(ctx.path("config.resolved.json"))
    try:
        verdicts, est, unit, note = _DISPATCH[config.experiment](ctx)
        report.verdicts, report.estimates = verdicts, _jsonable(est)
        report.parallel_unit, report.note = unit, note
    except (SNSEError, FloatingPointError, OSError) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    report.artifacts = list(ctx.artifacts)
    report.wall_time = time.perf_counter() - start
    rp = ctx.path("report.json")
    report.artifacts.append(rp)
    with open(rp, "w") as fh:
        json.dump(_jsonable(report.as_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
