"""Experiment configuration, task dispatch and result persistence."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DomainError, NumericalError, SupportError
from .evolution import (
    DIRICHLET_TYPE,
    RegimeLabel,
    TestFunction,
    boundary_integrability,
    bump,
    classify_regime,
    integrate,
    reaction_solution,
    stationary_profile,
    weak_residual,
)
from .kernel import JumpKernel, ModelParams, Variant, continuum_rates
from .observables import ReplicaEnsemble, block_average, ensemble_mean_profile, window_size
from .operators import QuadratureSpec, operator_convergence_error, polynomial
from .process import simulate

SCHEMA_VERSION = 1
ENV_PREFIX = "HEAVYSEP_"
TASKS = ("simulate", "evolve", "stationary", "sweep", "verify-operator", "verify-hydro")

TEST_FUNCTIONS = {
    "poly4": polynomial([0, 0, 1, -2, 1]),
    "u": polynomial([0, 1]),
    "u2": polynomial([0, 0, 1]),
    "sin": lambda u: np.sin(np.pi * u),
}

UNITS = {
    "time": "macroscopic time (microscopic time divided by Theta(N))",
    "x_over_N": "lattice coordinate x/N in (0, 1)",
    "value": "density (mean occupation)",
    "se": "standard error of the replica mean (0 for deterministic output)",
    "N": "lattice size",
    "e_N": "L1 gap between N^gamma L_N G and the regional fractional Laplacian of G",
}


def _float_list(v):
    if isinstance(v, str):
        v = [x for x in v.replace(",", " ").split() if x]
    return [float(x) for x in v]


def _int_list(v):
    return [int(x) for x in _float_list(v)]


@dataclass
class ExperimentConfig:
    """Flat experiment description; every field can come from file, env or CLI."""

    task: str = "stationary"
    N: int = 64
    gamma: float = 1.5
    theta: float = 0.0
    kappa: float = 1.0
    alpha: float = 0.2
    beta: float = 0.8
    variant: str = "full"
    T: float = 0.1
    times: int = 5
    replicas: int = 100
    seed: int = 0
    initial: float = 0.5
    workers: int = 1
    out: str | None = None
    epsilon: float = 1e-4
    panels: int = 24
    order: int = 8
    richardson_levels: int = 1
    N_grid: list = field(default_factory=lambda: [128, 256, 512, 1024])
    gamma_grid: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.25, 1.5, 1.75])
    theta_grid: list = field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 2.0])
    test_function: str = "poly4"
    regime_override: str | None = None
    block_epsilon: float = 0.05

    _converters = {
        "task": str,
        "N": int,
        "gamma": float,
        "theta": float,
        "kappa": float,
        "alpha": float,
        "beta": float,
        "variant": str,
        "T": float,
        "times": int,
        "replicas": int,
        "seed": int,
        "initial": float,
        "workers": int,
        "out": str,
        "epsilon": float,
        "panels": int,
        "order": int,
        "richardson_levels": int,
        "N_grid": _int_list,
        "gamma_grid": _float_list,
        "theta_grid": _float_list,
        "test_function": str,
        "regime_override": str,
        "block_epsilon": float,
    }

    @classmethod
    def keys(cls):
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_mapping(cls, data):
        cfg = cls()
        cfg.update(data)
        return cfg

    def update(self, data, source="config"):
        for key, raw in data.items():
            key = key.replace("-", "_")
            if key not in self._converters:
                raise ConfigError(f"unknown {source} key {key!r}")
            if raw is None:
                setattr(self, key, None)
                continue
            try:
                setattr(self, key, self._converters[key](raw))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r} from {source}: {raw!r}") from exc
        return self

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        try:
            self.params()
        except (DomainError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.T < 0 or not math.isfinite(self.T):
            raise ConfigError("T must be a finite nonnegative number")
        if self.times < 1:
            raise ConfigError("times must be >= 1")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0.0 <= self.initial <= 1.0:
            raise ConfigError("initial density must lie in [0, 1]")
        if self.task == "sweep" and (not self.gamma_grid or not self.theta_grid):
            raise ConfigError("sweep grids must be nonempty")
        if self.task == "verify-operator":
            if not self.N_grid:
                raise ConfigError("N_grid must be nonempty")
            if self.test_function not in TEST_FUNCTIONS:
                raise ConfigError(f"unknown test function {self.test_function!r}; choose from {sorted(TEST_FUNCTIONS)}")
        if self.regime_override is not None:
            try:
                RegimeLabel(self.regime_override)
            except ValueError as exc:
                raise ConfigError(f"unknown regime {self.regime_override!r}") from exc
        try:
            self.quadrature()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def params(self):
        return ModelParams(self.N, self.gamma, self.theta, self.kappa, self.alpha, self.beta, Variant(self.variant))

    def quadrature(self):
        return QuadratureSpec(
            epsilon=self.epsilon, panels=self.panels, order=self.order, richardson_levels=self.richardson_levels
        )

    def sample_times(self):
        return np.linspace(0.0, self.T, self.times + 1) if self.T > 0 else np.array([0.0])

    def as_dict(self):
        return {k: getattr(self, k) for k in self.keys()}

    def content_hash(self):
        """sha256 over the inputs that determine the results (not the output path)."""
        data = self.as_dict()
        data.pop("out", None)
        data.pop("workers", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config_file(path):
    """Read a flat YAML (or JSON, a YAML subset) mapping."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat key-value mapping")
    return data


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    lookup = {k.upper(): k for k in ExperimentConfig.keys()}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX) :].upper()
            if key not in lookup:
                raise ConfigError(f"unknown environment override {name}")
            out[lookup[key]] = value
    return out


def resolve_config(cli=None, file_path=None, environ=None, task=None):
    """Merge defaults < file < environment < CLI and validate."""
    cfg = ExperimentConfig()
    if file_path:
        cfg.update(load_config_file(file_path), "file")
    cfg.update(env_overrides(environ), "environment")
    if cli:
        cfg.update({k: v for k, v in cli.items() if v is not None}, "command line")
    if task is not None:
        cfg.task = task
    return cfg.validate()


# ---------------------------------------------------------------------------
# replicas


def replica_rng(base_seed, k):
    """Generator of replica k; independent of how many replicas are run."""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(k,)))


def _run_replica(args):
    params, initial, T, times, base_seed, k = args
    rec = simulate(params, lambda u: np.full_like(u, initial), T, replica_rng(base_seed, k), sample_times=times)
    rec.seed = int(base_seed)
    return k, rec


def run_replicas(params, initial, T, times, replicas, base_seed, workers=1):
    jobs = [(params, initial, T, times, base_seed, k) for k in range(replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replica, jobs, chunksize=max(1, replicas // (4 * workers))))
    else:
        results = [_run_replica(j) for j in jobs]
    ids = [k for k, _ in results]
    return ReplicaEnsemble.from_records([r for _, r in results], replica_ids=ids)


# ---------------------------------------------------------------------------
# tasks


def sweep_phase_diagram(gammas, thetas, N=128, alpha=0.2, beta=0.8, kappa=1.0, block_epsilon=0.05):
    """Regime label and stationary summary for every (gamma, theta) cell.

    Failing cells are reported with ``status`` "error" and do not stop the
    sweep.  Returns (rows, profiles) where profiles maps the cell index to
    its stationary profile.
    """
    rows = []
    profiles = {}
    for i, gamma in enumerate(gammas):
        for j, theta in enumerate(thetas):
            row = {"i": i, "j": j, "gamma": float(gamma), "theta": float(theta)}
            try:
                row["regime"] = classify_regime(gamma, theta).value
                params = ModelParams(N, gamma, theta, kappa, alpha, beta)
                prof = stationary_profile(params).values
                ell = window_size(block_epsilon * N)
                row.update(
                    status="ok",
                    message="",
                    min=float(prof.min()),
                    max=float(prof.max()),
                    left_block=block_average(prof, 0, ell, "right"),
                    right_block=block_average(prof, N, ell, "left"),
                )
                profiles[(i, j)] = prof
            except (DomainError, NumericalError, np.linalg.LinAlgError) as exc:
                row.setdefault("regime", "")
                row.update(status="error", message=str(exc), min="", max="", left_block="", right_block="")
            rows.append(row)
    return rows, profiles


def _admissible_test_function(label):
    if RegimeLabel(label) in DIRICHLET_TYPE:
        return TestFunction.static(bump(0.15, 0.7), (0.15, 0.7))
    return TestFunction.static(lambda u: u * u * (3.0 - 2.0 * u))


def verify_hydro(params, T, R, cfg=None):
    """Replica ensemble versus the lattice ODE, plus weak residuals.

    Returns a report dict and the (ensemble, deterministic trajectory) pair.
    """
    cfg = cfg or ExperimentConfig()
    times = np.linspace(0.0, T, cfg.times + 1) if T > 0 else np.array([0.0])
    kernel = JumpKernel.build(params.gamma, params.N)
    ens = run_replicas(params, cfg.initial, T, times, R, cfg.seed, cfg.workers)
    rho0 = np.full(params.N - 1, cfg.initial)
    ode = integrate(rho0, params, T, times, kernel=kernel)
    worst = 0.0
    gaps = []
    if R >= 2:
        for k, t in enumerate(times):
            mean, se = ensemble_mean_profile(ens, t)
            diff = np.abs(mean - ode.values[k])
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(se > 0, diff / se, np.where(diff > 0, np.inf, 0.0))
            gaps.append(float(z.max()))
        worst = max(gaps)
    report = {
        "max_standardized_gap": worst,
        "standardized_gap_per_time": gaps,
        "replicas": R,
    }
    label = classify_regime(params.gamma, params.theta) if params.variant is Variant.FULL else None
    spec = cfg.quadrature()
    common = dict(alpha=params.alpha, beta=params.beta, gamma=params.gamma, spec=spec)
    if label is not None and T > 0:
        report["regime"] = label.value
        report["weak_residual"] = weak_residual(
            label, ode, _admissible_test_function(label), cfg.initial, T, params.kappa, **common
        )
        if label is not RegimeLabel.FRAC_DIFFUSION_NEUMANN:
            control_label = RegimeLabel.FRAC_DIFFUSION_NEUMANN
            control_G = TestFunction.static(lambda u: np.asarray(u, float))
        else:
            control_label = RegimeLabel.FRAC_REACTION_DIFFUSION_DIRICHLET
            control_G = _admissible_test_function(control_label)
        report["negative_control"] = {
            "functional": control_label.value,
            "residual": weak_residual(control_label, ode, control_G, cfg.initial, T, params.kappa, **common),
        }
        if cfg.regime_override is not None:
            forced = RegimeLabel(cfg.regime_override)
            try:
                report["override"] = {
                    "functional": forced.value,
                    "residual": weak_residual(
                        forced, ode, _admissible_test_function(forced), cfg.initial, T, params.kappa, **common
                    ),
                }
            except SupportError as exc:
                report["override"] = {"functional": forced.value, "error": str(exc)}
        if params.gamma > 1:
            report["boundary_integrability"] = boundary_integrability(ode, params.alpha, params.beta, params.gamma)
        if label is RegimeLabel.REACTION_DIRICHLET:
            u = ode.grid
            inner = (u >= 0.1) & (u <= 0.9)
            exact = np.array(
                [reaction_solution(cfg.initial, u[inner], t, params.kappa, params.alpha, params.beta, params.gamma) for t in times]
            )
            report["reaction_gap"] = float(np.max(np.abs(ode.values[:, inner] - exact)))
    return report, ens, ode


# ---------------------------------------------------------------------------
# persistence


@dataclass
class ResultRecord:
    task: str
    config: dict
    config_hash: str
    payload: dict
    rows: list = field(repr=False, default_factory=list)
    columns: tuple = ()
    files: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION
    extra_tables: dict = field(repr=False, default_factory=dict)

    def summary(self):
        return {
            "schema_version": self.schema_version,
            "task": self.task,
            "config": self.config,
            "config_hash": self.config_hash,
            "columns": list(self.columns),
            "units": {c: UNITS[c] for c in self.columns if c in UNITS},
            "payload": self.payload,
        }


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            values = [row[c] for c in columns] if isinstance(row, dict) else row
            w.writerow([_fmt(v) for v in values])
    return str(path)


def persist(record, out_dir, wall_seconds=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [write_csv(out / "results.csv", record.columns, record.rows)]
    for name, (cols, rows) in sorted(record.extra_tables.items()):
        files.append(write_csv(out / name, cols, rows))
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(record.summary()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(str(out / "summary.json"))
    meta = {
        "wall_seconds": wall_seconds,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(out / "run_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(str(out / "run_meta.json"))
    record.files = files
    return record


def _profile_rows(times, grid, values, se=None):
    rows = []
    for k, t in enumerate(times):
        for x, u in enumerate(grid):
            rows.append((t, u, values[k][x], 0.0 if se is None else se[k][x]))
    return rows


PROFILE_COLUMNS = ("time", "x_over_N", "value", "se")


def run(cfg):
    """Dispatch ``cfg.task``; persist outputs when ``cfg.out`` is set."""
    start = time.perf_counter()
    cfg.validate()
    params = cfg.params()
    payload = {}
    extra = {}
    task = cfg.task
    if task == "simulate":
        times = cfg.sample_times()
        ens = run_replicas(params, cfg.initial, cfg.T, times, cfg.replicas, cfg.seed, cfg.workers)
        if ens.R >= 2:
            stats = [ensemble_mean_profile(ens, t) for t in times]
            means, ses = [s[0] for s in stats], [s[1] for s in stats]
        else:
            means = [ens.profiles[0, k].astype(float) for k in range(times.size)]
            ses = [np.full(params.N - 1, np.nan) for _ in times]
        rows = _profile_rows(times, params.grid, means, ses)
        payload = {"replicas": ens.R, "sample_times": times, "mean_density_final": float(np.mean(means[-1]))}
        columns = PROFILE_COLUMNS
    elif task == "evolve":
        times = np.linspace(0.0, cfg.T, max(cfg.times, 1) + 1) if cfg.T > 0 else np.array([0.0])
        traj = integrate(np.full(params.N - 1, cfg.initial), params, cfg.T, times)
        rows = _profile_rows(times, params.grid, traj.values)
        payload = {"steps": traj.steps, "sample_times": times}
        columns = PROFILE_COLUMNS
    elif task == "stationary":
        prof = stationary_profile(params)
        rows = _profile_rows([math.inf], params.grid, [prof.values])
        payload = {"min": float(prof.values.min()), "max": float(prof.values.max())}
        if params.variant is Variant.FULL:
            payload["regime"] = classify_regime(params.gamma, params.theta).value
        if params.theta < 0 and params.variant is Variant.FULL:
            _, _, v0, v1 = continuum_rates(params.grid, params.alpha, params.beta, params.gamma)
            payload["sup_gap_to_V0_over_V1"] = float(np.max(np.abs(prof.values - v0 / v1)))
        columns = PROFILE_COLUMNS
    elif task == "sweep":
        cells, profiles = sweep_phase_diagram(
            cfg.gamma_grid, cfg.theta_grid, cfg.N, cfg.alpha, cfg.beta, cfg.kappa, cfg.block_epsilon
        )
        columns = ("gamma", "theta", "regime", "status", "min", "max", "left_block", "right_block", "message")
        rows = [{c: cell[c] for c in columns} for cell in cells]
        grid = np.arange(1, cfg.N) / cfg.N
        for (i, j), prof in profiles.items():
            extra[f"profiles/cell_{i:03d}_{j:03d}.csv"] = (
                PROFILE_COLUMNS,
                _profile_rows([math.inf], grid, [prof]),
            )
        payload = {
            "cells": len(cells),
            "failed": sum(c["status"] != "ok" for c in cells),
            "regimes": {f"{c['gamma']!r},{c['theta']!r}": c["regime"] for c in cells},
        }
    elif task == "verify-operator":
        G = TEST_FUNCTIONS[cfg.test_function]
        spec = cfg.quadrature()
        values = [operator_convergence_error(G, n, cfg.gamma, spec) for n in cfg.N_grid]
        rows = list(zip(cfg.N_grid, values))
        columns = ("N", "e_N")
        payload = {
            "test_function": cfg.test_function,
            "strictly_decreasing": bool(all(b < a for a, b in zip(values, values[1:]))),
            "e_N": values,
        }
    elif task == "verify-hydro":
        report, ens, ode = verify_hydro(params, cfg.T, cfg.replicas, cfg)
        times = ode.times
        if ens.R >= 2:
            stats = [ensemble_mean_profile(ens, t) for t in times]
            rows = _profile_rows(times, params.grid, [s[0] for s in stats], [s[1] for s in stats])
        else:
            rows = _profile_rows(times, params.grid, [ens.profiles[0, k] for k in range(times.size)])
        extra["deterministic.csv"] = (PROFILE_COLUMNS, _profile_rows(times, params.grid, ode.values))
        columns = PROFILE_COLUMNS
        payload = report
    else:  # pragma: no cover - validate() rejects unknown tasks
        raise ConfigError(f"unknown task {task!r}")
    record = ResultRecord(
        task=task,
        config=cfg.as_dict(),
        config_hash=cfg.content_hash(),
        payload=_jsonable(payload),
        rows=rows,
        columns=columns,
        extra_tables=extra,
    )
    if cfg.out:
        persist(record, cfg.out, time.perf_counter() - start)
    return record
