"""Experiment orchestration: config files, seeded sweeps, reports.

Configs are flat TOML files and every default is echoed back on save, so a
stored run never depends on implicit values. Sweep cells derive their seeds
from a stable hash of the base seed and the cell values, which keeps existing
cells reproducible when the grid grows. Reports come out as CSV plus a JSON
summary with the fitted slopes; each analysis returns a pass flag that the
command line maps to the exit code.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import nn
from .analysis import (AnalyticFunction, bias_margin, chebyshev_check,
                       estimate_bias, fit_grid_slopes,
                       folded_normal_bound_check, learning_bound_check,
                       learning_decay_sweep, linear_function)
from .training import (METRICS_HEADER, MetricsRow, TrainConfig, format_float,
                       relative_l2_error, train, write_metrics_csv)
from .walkers import BoxDomain, PdeProblem, poisson_sine_problem, sine_product

CODE_VERSION = "0.1.0"

SUMMARY_HEADER = "dt,ns,trial,final_interior_loss,final_rel_l2,converged_loss_mean"

# the experiment grids: a dyadic horizon ladder anchored at 1e-4 (the scale
# where the error minimum actually sits on the unit square) plus the raw
# dyadic ladder in whole time units, selectable by name in config files
DT_LADDER_SCALED = [float(2 ** p) * 1e-4 for p in range(10)]
DT_LADDER_PAPER_UNITS = [float(2 ** p) for p in range(10)]
NS_LADDER = [1, 4, 10, 40, 100, 400]

_DT_PRESETS = {
    "scaled": DT_LADDER_SCALED,
    "paper-units": DT_LADDER_PAPER_UNITS,
}

ANALYSES = ("bias", "chebyshev", "folded-normal", "learning-bound", "decay")

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_SWEEP_ONLY_KEYS = ("dt_values", "ns_values", "trials", "output_dir")

_INT_KEYS = {"m", "n_walkers", "n_interior", "n_boundary", "inner_steps",
             "iterations", "seed", "eval_grid", "eval_stride"}
_FLOAT_KEYS = {"dt", "dt_step_max", "learning_rate", "beta1", "beta2"}
_STR_KEYS = {"problem", "mode", "activation"}
_BOOL_KEYS = {"bias_mode"}


class ConfigError(ValueError):
    pass


@dataclass
class SweepSpec:
    """A dt x walker-count grid of runs sharing one base configuration."""

    dt_values: list
    ns_values: list
    trials: int
    base: TrainConfig
    output_dir: str

    def validate(self) -> None:
        if not self.dt_values:
            raise ValueError("dt_values must be a nonempty list")
        if any(dt <= 0 for dt in self.dt_values):
            raise ValueError("dt_values must be positive")
        if not self.ns_values:
            raise ValueError("ns_values must be a nonempty list")
        if any(int(ns) != ns or ns < 1 for ns in self.ns_values):
            raise ValueError("ns_values must be positive integers")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.output_dir:
            raise ValueError("output_dir must be a path")
        self.base.validate()


def _coerce(name: str, value):
    if name in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean")
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got a boolean")
    if name in _INT_KEYS:
        if not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer")
        return value
    if name in _FLOAT_KEYS:
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number")
        return float(value)
    if name in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string")
        return value
    if name == "hidden":
        if (not isinstance(value, list) or not value
                or any(isinstance(v, bool) or not isinstance(v, int) for v in value)):
            raise ConfigError("hidden: expected a list of integers")
        return [int(v) for v in value]
    raise ConfigError(f"unhandled key {name!r}")


def _dt_values(value):
    if isinstance(value, str):
        if value not in _DT_PRESETS:
            raise ConfigError(
                f"dt_values: unknown preset {value!r}; "
                f"use one of {sorted(_DT_PRESETS)} or an explicit list")
        return list(_DT_PRESETS[value])
    if (not isinstance(value, list) or not value
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)):
        raise ConfigError("dt_values: expected a list of numbers or a preset name")
    return [float(v) for v in value]


def config_from_dict(data: dict, source: str = "config"):
    """Build a TrainConfig, or a SweepSpec when any sweep key is present."""
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{source}: nested table {key!r}; keys are flat")
    is_sweep = any(key in data for key in _SWEEP_ONLY_KEYS)
    known = set(_TRAIN_FIELDS)
    if is_sweep:
        known |= set(_SWEEP_ONLY_KEYS)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")

    try:
        kwargs = {name: _coerce(name, data[name])
                  for name in _TRAIN_FIELDS if name in data}
        config = TrainConfig(**kwargs)
        config.validate()
        if not is_sweep:
            return config

        ns_raw = data.get("ns_values", list(NS_LADDER))
        if (not isinstance(ns_raw, list) or not ns_raw
                or any(isinstance(v, bool) or not isinstance(v, int) for v in ns_raw)):
            raise ConfigError("ns_values: expected a list of integers")
        trials = data.get("trials", 3)
        if isinstance(trials, bool) or not isinstance(trials, int):
            raise ConfigError("trials: expected an integer")
        out = data.get("output_dir", "sweep_runs")
        if not isinstance(out, str):
            raise ConfigError("output_dir: expected a string")
        spec = SweepSpec(
            dt_values=_dt_values(data.get("dt_values", "scaled")),
            ns_values=[int(v) for v in ns_raw],
            trials=trials, base=config, output_dir=out,
        )
        spec.validate()
        return spec
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, source=str(path))


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def config_to_dict(config) -> dict:
    if isinstance(config, SweepSpec):
        out = config_to_dict(config.base)
        out["dt_values"] = [float(v) for v in config.dt_values]
        out["ns_values"] = [int(v) for v in config.ns_values]
        out["trials"] = config.trials
        out["output_dir"] = config.output_dir
        return out
    return {name: getattr(config, name) for name in _TRAIN_FIELDS}


def save_config(config, path) -> None:
    """Write every field explicitly; load(save(cfg)) == cfg."""
    lines = [f"{key} = {_toml_value(value)}"
             for key, value in config_to_dict(config).items()]
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class RunManifest:
    """Everything needed to reproduce one run, written before it starts and
    finalized when it ends."""

    config: dict
    seed: int
    code_version: str
    started_at: str
    finished_at: Optional[str] = None
    status: str = "running"
    outputs: list = field(default_factory=list)


def write_manifest(manifest: RunManifest, path) -> None:
    _write_json(path, dataclasses.asdict(manifest))


def load_manifest(path) -> RunManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return RunManifest(**json.load(fh))


def cell_seed(base_seed: int, dt: float, n_walkers: int, trial: int) -> int:
    """Stable per-cell seed from the cell values, not grid positions, so
    reordering or extending the ladders never reshuffles finished cells."""
    key = f"{base_seed}|{format_float(dt)}|{n_walkers}|{trial}"
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def execute_run(config: TrainConfig, run_dir, checkpoint_stride: int = 0):
    """One training (or bias-mode) run with manifest, metrics and checkpoint."""
    os.makedirs(run_dir, exist_ok=True)
    manifest = RunManifest(
        config=config_to_dict(config), seed=config.seed,
        code_version=CODE_VERSION, started_at=_utc_now(),
    )
    manifest_path = os.path.join(run_dir, "manifest.json")
    write_manifest(manifest, manifest_path)
    try:
        net, rows = train(config, checkpoint_dir=run_dir,
                          checkpoint_stride=checkpoint_stride)
    except BaseException:
        manifest.status = "failed"
        manifest.finished_at = _utc_now()
        write_manifest(manifest, manifest_path)
        raise
    write_metrics_csv(rows, os.path.join(run_dir, "metrics.csv"))
    outputs = sorted(name for name in os.listdir(run_dir)
                     if name.startswith("checkpoint_"))
    outputs.insert(0, "metrics.csv")
    if net is not None:
        nn.save_checkpoint(net, os.path.join(run_dir, "checkpoint.json"))
        outputs.append("checkpoint.json")
    manifest.status = "complete"
    manifest.finished_at = _utc_now()
    manifest.outputs = outputs
    write_manifest(manifest, manifest_path)
    return rows


def read_metrics_csv(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    rows = []
    for line in lines[1:]:
        it, interior, boundary, err, wall = line.split(",")
        rows.append(MetricsRow(
            iteration=int(it), interior_loss=float(interior),
            boundary_loss=float(boundary),
            relative_l2_error=None if err == "" else float(err),
            wall_time_s=float(wall),
        ))
    return rows


def summarize_rows(rows) -> tuple:
    """(final_interior_loss, final_rel_l2, converged_loss_mean); converged
    means the plain average over the final tenth of the logged iterations."""
    if not rows:
        return None, None, None
    tail = rows[-max(1, math.ceil(0.1 * len(rows))):]
    final_rel = None
    for row in reversed(rows):
        if row.relative_l2_error is not None:
            final_rel = row.relative_l2_error
            break
    converged = sum(r.interior_loss for r in tail) / len(tail)
    return rows[-1].interior_loss, final_rel, converged


def _cell_dirname(dt: float, ns: int, trial: int, bias_mode: bool) -> str:
    stem = f"dt{format_float(dt)}_ns{ns}_trial{trial}"
    return stem + "_bias" if bias_mode else stem


def _cell_complete(run_dir) -> bool:
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        return False
    if not os.path.exists(os.path.join(run_dir, "metrics.csv")):
        return False
    return load_manifest(manifest_path).status == "complete"


def worker_count(requested: Optional[int] = None) -> int:
    """Requested workers capped by the DFLM_WORKERS environment variable."""
    cap = os.environ.get("DFLM_WORKERS")
    cap_val = int(cap) if cap else None
    n = requested if requested is not None else (cap_val or 1)
    if cap_val is not None:
        n = min(n, cap_val)
    return max(1, n)


def _run_cell(job) -> None:
    config, run_dir = job
    execute_run(config, run_dir)


def run_sweep(spec: SweepSpec, bias_mode: bool = False,
              workers: Optional[int] = None) -> str:
    """Run every (dt, ns, trial) cell, then write summary.csv sorted the same
    way; completed cells are skipped, so an interrupted sweep resumes."""
    spec.validate()
    os.makedirs(spec.output_dir, exist_ok=True)
    save_config(spec, os.path.join(spec.output_dir, "sweep_config.toml"))
    cells = [(dt, ns, trial)
             for dt in sorted(spec.dt_values)
             for ns in sorted(spec.ns_values)
             for trial in range(spec.trials)]
    jobs = []
    for dt, ns, trial in cells:
        run_dir = os.path.join(spec.output_dir,
                               _cell_dirname(dt, ns, trial, bias_mode))
        if _cell_complete(run_dir):
            continue
        config = replace(
            spec.base, dt=dt, n_walkers=ns, bias_mode=bias_mode,
            seed=cell_seed(spec.base.seed, dt, ns, trial),
        )
        jobs.append((config, run_dir))

    n_workers = worker_count(workers)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(_run_cell, jobs))
    else:
        for job in jobs:
            _run_cell(job)

    lines = [SUMMARY_HEADER]
    for dt, ns, trial in cells:
        run_dir = os.path.join(spec.output_dir,
                               _cell_dirname(dt, ns, trial, bias_mode))
        rows = read_metrics_csv(os.path.join(run_dir, "metrics.csv"))
        final_loss, final_rel, converged = summarize_rows(rows)
        lines.append(",".join([
            format_float(dt), str(ns), str(trial),
            "" if final_loss is None else format_float(final_loss),
            "" if final_rel is None else format_float(final_rel),
            "" if converged is None else format_float(converged),
        ]))
    summary_path = os.path.join(spec.output_dir, "summary.csv")
    _write_text(summary_path, "\n".join(lines) + "\n")
    return summary_path


def apply_paper_scale(config):
    """Restore the full-scale protocol: 1.5e5 iterations, three hidden layers
    of 200, ten trials, 1001 point evaluation grid."""
    if isinstance(config, SweepSpec):
        return replace(config, trials=10, base=apply_paper_scale(config.base))
    return replace(config, iterations=150_000, hidden=[200, 200, 200],
                   eval_grid=1001)


def evaluate_checkpoint(path, grid_n: int, m: int) -> float:
    """Relative L2 error of a stored network against the exact solution.

    Accepts the regular network checkpoint, or the closed-form stub
    {"kind": "exact-solution", "m": ...} useful for harness plumbing checks.
    """
    with open(path, "r", encoding="utf-8") as fh:
        head = json.load(fh)
    if head.get("kind") == "exact-solution":
        m_stub = int(head.get("m", m))
        u_fn = lambda X: sine_product(X, m_stub)
    else:
        net = nn.load_checkpoint(path)
        u_fn = lambda X: nn.forward(net, X)
    problem = poisson_sine_problem(m)
    return relative_l2_error(u_fn, problem.exact_solution, problem.domain,
                             grid_n)


# ---------------------------------------------------------------------------
# analysis commands


def _sine_function(m: int) -> AnalyticFunction:
    from .walkers import sine_product_gradient
    return AnalyticFunction(lambda X: sine_product(X, m),
                            lambda X: sine_product_gradient(X, m))


def _linear_problem(a=(1.0, 0.0), half_width: float = 4.0) -> PdeProblem:
    """Harmonic linear test case on a wide box so no walker reaches the
    boundary over the horizons under study."""
    a = np.asarray(a, dtype=np.float64)
    domain = BoxDomain.cube(half_width, a.size)
    return PdeProblem(
        domain=domain,
        force=lambda X: np.zeros(np.atleast_2d(X).shape[0]),
        boundary=lambda X: np.atleast_2d(X) @ a,
        exact_solution=lambda X: np.atleast_2d(X) @ a,
        exact_gradient=lambda X: np.broadcast_to(a, np.atleast_2d(X).shape).copy(),
    )


def bias_analysis(out_dir, u_name: str = "linear", m: int = 1,
                  dt_values=(1e-3, 4e-3, 1.6e-2), ns_values=(1, 4, 16),
                  n_outer: int = 1000, seed: int = 0) -> bool:
    """Split-sample bias across a (dt, ns) grid against dt/ns scaling.

    The linear case asserts each cell within four standard errors of the
    closed form and slopes within 0.05. The sinusoidal prediction is itself
    first order in dt, so there each cell only has to land within a factor of
    two and the slope tolerance loosens to 0.15.
    """
    if u_name == "linear":
        problem = _linear_problem()
        u = linear_function((1.0, 0.0))
        slope_tol = 0.05
    elif u_name == "sine":
        problem = poisson_sine_problem(m)
        u = _sine_function(m)
        slope_tol = 0.15
    else:
        raise ValueError(f"unknown bias test function {u_name!r}")

    dts = sorted(float(v) for v in dt_values)
    nss = sorted(int(v) for v in ns_values)
    os.makedirs(out_dir, exist_ok=True)
    rows, grid, cells_ok = [], [], True
    for dt in dts:
        level = []
        for ns in nss:
            rep = estimate_bias(u, problem, dt, ns, n_outer=n_outer,
                                seed=cell_seed(seed, dt, ns, 0))
            rows.append(rep)
            level.append(rep.estimated_bias)
            if u_name == "linear":
                cells_ok &= (abs(rep.estimated_bias - rep.predicted_bias)
                             <= 4.0 * rep.std_error)
            else:
                cells_ok &= (rep.predicted_bias / 2.0 <= rep.estimated_bias
                             <= rep.predicted_bias * 2.0)
        grid.append(level)

    lines = ["dt,ns,estimated_bias,predicted_bias,std_error,n_outer"]
    for rep in rows:
        lines.append(",".join([
            format_float(rep.dt), str(rep.n_walkers),
            format_float(rep.estimated_bias), format_float(rep.predicted_bias),
            format_float(rep.std_error), str(rep.n_outer),
        ]))
    _write_text(os.path.join(out_dir, "bias_report.csv"), "\n".join(lines) + "\n")

    slope_dt = slope_ns = None
    slopes_ok = True
    if len(dts) >= 2 and len(nss) >= 2 and all(v > 0 for lv in grid for v in lv):
        slope_dt, slope_ns = fit_grid_slopes(dts, nss, grid)
        slopes_ok = (abs(slope_dt - 1.0) <= slope_tol
                     and abs(slope_ns + 1.0) <= slope_tol)
    passed = cells_ok and slopes_ok
    _write_json(os.path.join(out_dir, "bias_summary.json"), {
        "analysis": "bias", "u": u_name, "n_outer": n_outer,
        "slope_dt": slope_dt, "slope_ns": slope_ns,
        "cells_within_tolerance": cells_ok, "passed": passed,
    })
    return passed


def chebyshev_analysis(out_dir, dt: float = 1e-2, n_walkers: int = 40,
                       epsilons=(0.02, 0.05, 0.1), n_points: int = 5,
                       n_trials: int = 2000, seed: int = 0) -> bool:
    """Tail probability of the target mean against the variance bound.

    Uses the linear case, where the target mean is exactly Gaussian. A tail
    above the bound plus three multinomial standard errors fails; the bound
    constant is taken as one.
    """
    problem = _linear_problem()
    u = linear_function((1.0, 0.0))
    region = problem.domain.shrink(bias_margin(dt, problem.domain))
    rng = np.random.default_rng(seed)
    points = rng.uniform(region.lower, region.upper, size=(n_points, 2))

    os.makedirs(out_dir, exist_ok=True)
    lines = ["x0,x1,eps,tail_probability,bound,margin,ok"]
    passed = True
    for i, x in enumerate(points):
        for eps in sorted(epsilons):
            rep = chebyshev_check(u, problem, x, dt, n_walkers, float(eps),
                                  n_trials=n_trials, seed=seed + 7 * i)
            p = min(rep.bound, 1.0)
            margin = 3.0 * math.sqrt(max(p * (1.0 - p), 1e-12) / n_trials)
            ok = rep.tail_probability <= min(rep.bound, 1.0) + margin
            passed &= ok
            lines.append(",".join([
                format_float(x[0]), format_float(x[1]), format_float(eps),
                format_float(rep.tail_probability), format_float(rep.bound),
                format_float(margin), str(ok).lower(),
            ]))
    _write_text(os.path.join(out_dir, "chebyshev_report.csv"),
                "\n".join(lines) + "\n")
    _write_json(os.path.join(out_dir, "chebyshev_summary.json"), {
        "analysis": "chebyshev", "dt": dt, "n_walkers": n_walkers,
        "n_trials": n_trials, "passed": passed,
    })
    return passed


def folded_normal_analysis(out_dir, mus=(0.0, 0.25, 0.5, 1.0, 2.0),
                           sigmas=(0.25, 0.5, 1.0, 2.0, 4.0), dims=(1, 2),
                           n_samples: int = 200_000, seed: int = 0) -> bool:
    """Monte Carlo mean of |w| against the displacement bound over a grid,
    plus the tightness check at mu = 0 in one dimension."""
    os.makedirs(out_dir, exist_ok=True)
    lines = ["dim,mu_norm,sigma,mc_mean,std_error,bound,satisfied"]
    passed = True
    tight_ok = True
    cell = 0
    for k in dims:
        for mu in mus:
            for sigma in sigmas:
                mu_vec = np.zeros(k)
                mu_vec[0] = mu
                rep = folded_normal_bound_check(mu_vec, float(sigma),
                                                n_samples=n_samples,
                                                seed=seed + cell)
                cell += 1
                passed &= rep.satisfied
                if k == 1 and mu == 0.0:
                    tight_ok &= abs(rep.mc_mean - rep.bound) <= 0.01 * rep.bound
                lines.append(",".join([
                    str(rep.dim), format_float(rep.mu_norm),
                    format_float(rep.sigma), format_float(rep.mc_mean),
                    format_float(rep.std_error), format_float(rep.bound),
                    str(rep.satisfied).lower(),
                ]))
    passed = passed and tight_ok
    _write_text(os.path.join(out_dir, "folded_normal_report.csv"),
                "\n".join(lines) + "\n")
    _write_json(os.path.join(out_dir, "folded_normal_summary.json"), {
        "analysis": "folded-normal", "n_samples": n_samples,
        "tight_at_zero": tight_ok, "passed": passed,
    })
    return passed


def learning_bound_analysis(out_dir, m: int = 1, dt: float = 1e-3,
                            n_points: int = 10, seed: int = 0,
                            order: int = 32) -> bool:
    """Per-step displacement |Tu - u| against the pointwise gradient bound.

    Asserted on the families the bound covers as written: linear u (with and
    without advection) and constant u under a force. The sinusoidal case is
    reported but not asserted, because the pointwise gradient understates a
    curved neighborhood.
    """
    rng = np.random.default_rng(seed)
    points = rng.uniform(-0.35, 0.35, size=(n_points, 2))
    laplace = poisson_sine_problem(m)
    drifted = PdeProblem(
        domain=laplace.domain, force=laplace.force, boundary=laplace.boundary,
        drift=lambda X: np.broadcast_to(np.array([1.0, -1.0]),
                                        np.atleast_2d(X).shape).copy(),
    )
    const_u = AnalyticFunction(
        lambda X: np.full(np.atleast_2d(X).shape[0], 0.7),
        lambda X: np.zeros_like(np.atleast_2d(X)),
    )
    cases = [
        ("linear", "none", linear_function((1.0, 0.0)), laplace, True),
        ("linear", "constant", linear_function((1.0, 0.0)), drifted, True),
        ("constant", "none", const_u, laplace, True),
        ("constant", "constant", const_u, drifted, True),
        ("sine", "none", _sine_function(m), laplace, False),
    ]
    os.makedirs(out_dir, exist_ok=True)
    lines = ["family,drift,x0,x1,measured,bound,satisfied,asserted"]
    passed = True
    for family, drift_name, u, problem, asserted in cases:
        for row in learning_bound_check(u, problem, points, dt, order=order):
            if asserted:
                passed &= row.satisfied
            lines.append(",".join([
                family, drift_name,
                format_float(row.point[0]), format_float(row.point[1]),
                format_float(row.measured), format_float(row.bound),
                str(row.satisfied).lower(), str(asserted).lower(),
            ]))
    _write_text(os.path.join(out_dir, "learning_bound_report.csv"),
                "\n".join(lines) + "\n")
    _write_json(os.path.join(out_dir, "learning_bound_summary.json"), {
        "analysis": "learning-bound", "dt": dt, "n_points": n_points,
        "passed": passed,
    })
    return passed


def _laplace_problem() -> PdeProblem:
    """Homogeneous problem: no force, no drift. The target operator reduces
    to plain Gaussian smoothing, whose action on the sine product is a pure
    eigenvalue decay."""
    domain = BoxDomain.unit_square()
    zeros = lambda X: np.zeros(np.atleast_2d(X).shape[0])
    return PdeProblem(domain=domain, force=zeros, boundary=zeros)


def decay_analysis(out_dir, m: int = 1, dt_values=(1e-4, 1e-3, 1e-2),
                   grid_n: int = 201, tol: float = 0.02) -> bool:
    """Norm of Tu - u for the sine product against its eigenvalue decay."""
    problem = _laplace_problem()
    u = _sine_function(m)
    report = learning_decay_sweep(u, problem, dt_values, grid_n=grid_n)
    rate = (2.0 * np.pi * m) ** 2 * problem.domain.dim / 2.0
    os.makedirs(out_dir, exist_ok=True)
    lines = ["dt,diff_norm,u_norm,ratio,predicted_ratio"]
    passed = True
    for row in report.rows:
        predicted = 1.0 - math.exp(-rate * row.dt)
        passed &= abs(row.ratio - predicted) <= tol * predicted
        lines.append(",".join([
            format_float(row.dt), format_float(row.diff_norm),
            format_float(row.u_norm), format_float(row.ratio),
            format_float(predicted),
        ]))
    _write_text(os.path.join(out_dir, "decay_report.csv"),
                "\n".join(lines) + "\n")
    _write_json(os.path.join(out_dir, "decay_summary.json"), {
        "analysis": "decay", "grid_n": grid_n, "slope": report.slope,
        "passed": passed,
    })
    return passed


def run_analysis(which: str, out_dir, **params) -> bool:
    if which == "bias":
        return bias_analysis(out_dir, **params)
    if which == "chebyshev":
        return chebyshev_analysis(out_dir, **params)
    if which == "folded-normal":
        return folded_normal_analysis(out_dir, **params)
    if which == "learning-bound":
        return learning_bound_analysis(out_dir, **params)
    if which == "decay":
        return decay_analysis(out_dir, **params)
    raise ValueError(f"unknown analysis {which!r}")
