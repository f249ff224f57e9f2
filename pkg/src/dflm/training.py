"""Bootstrapped training of a network toward the martingale fixed point.

Each iteration freezes the current parameters, samples fresh interior and
boundary collocation points, builds walker targets from the frozen values, and
then takes one or more Adam steps on the summed interior and boundary mean
square losses while the targets stay put. Metrics rows go to a CSV with a
fixed header; the relative L2 error against the exact solution is measured on
a uniform grid every eval_stride iterations and at the end.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nn
from .targets import martingale_target
from .walkers import (BoxDomain, PdeProblem, RngStream, derive_time_step,
                      poisson_sine_problem, simulate_walkers)

METRICS_HEADER = "iteration,interior_loss,boundary_loss,relative_l2_error,wall_time_s"

# substream purposes within an iteration
_INTERIOR, _BOUNDARY, _WALKERS = 0, 1, 2

PROBLEMS = ("poisson",)


@dataclass
class TrainConfig:
    problem: str = "poisson"
    m: int = 1
    dt: float = 5e-3
    dt_step_max: float = 1e-3
    n_walkers: int = 40
    n_interior: int = 2000
    n_boundary: int = 400
    learning_rate: float = 1e-3
    beta1: float = 0.99
    beta2: float = 0.99
    inner_steps: int = 1
    iterations: int = 20000
    seed: int = 0
    mode: str = "brownian"
    hidden: list = field(default_factory=lambda: [64, 64, 64])
    activation: str = "relu"
    eval_grid: int = 201
    eval_stride: int = 500
    bias_mode: bool = False

    def validate(self) -> "TrainConfig":
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.mode not in ("brownian", "drifted"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.activation not in nn.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for name in ("dt", "dt_step_max", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("m", "n_walkers", "n_interior", "n_boundary", "inner_steps",
                     "eval_grid", "eval_stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not all(int(h) > 0 for h in self.hidden):
            raise ValueError("hidden layer widths must be positive")
        return self

    def time_step(self):
        return derive_time_step(self.dt, self.dt_step_max)


@dataclass
class MetricsRow:
    iteration: int
    interior_loss: float
    boundary_loss: float
    relative_l2_error: Optional[float]
    wall_time_s: float


def build_problem(config: TrainConfig) -> PdeProblem:
    if config.problem == "poisson":
        return poisson_sine_problem(config.m)
    raise ValueError(f"unknown problem {config.problem!r}")


def build_network(config: TrainConfig) -> nn.Network:
    dims = [2] + [int(h) for h in config.hidden] + [1]
    return nn.init_network(dims, config.activation, seed=config.seed)


def sample_interior(domain: BoxDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in the open box; boundary hits are redrawn."""
    pts = rng.uniform(domain.lower, domain.upper, size=(n, domain.dim))
    bad = ~domain.contains(pts, strict=True)
    while bad.any():
        pts[bad] = rng.uniform(domain.lower, domain.upper, size=(int(bad.sum()), domain.dim))
        bad = ~domain.contains(pts, strict=True)
    return pts


def sample_boundary(domain: BoxDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points on the boundary, faces weighted by their measure."""
    k = domain.dim
    widths = domain.widths
    measures = np.array([np.prod(np.delete(widths, ax)) for ax in range(k)
                         for _ in range(2)])
    probs = measures / measures.sum()
    faces = rng.choice(2 * k, size=n, p=probs)
    pts = rng.uniform(domain.lower, domain.upper, size=(n, k))
    for face in range(2 * k):
        rows = faces == face
        axis, side = divmod(face, 2)
        pts[rows, axis] = domain.upper[axis] if side else domain.lower[axis]
    return pts


def interior_loss(net: nn.Network, points: np.ndarray, targets: np.ndarray):
    """Mean square residual against fixed targets, with its exact gradient."""
    u = nn.forward(net, points)
    r = u - np.asarray(targets, dtype=np.float64)
    loss = float(np.mean(r * r))
    grads = nn.backprop(net, points, upstream=2.0 * r / r.size)
    return loss, grads


def boundary_loss(net: nn.Network, points: np.ndarray, values: np.ndarray):
    return interior_loss(net, points, values)


def _add_gradients(a: nn.GradientSet, b: nn.GradientSet) -> nn.GradientSet:
    return nn.GradientSet(
        [ga + gb for ga, gb in zip(a.weights, b.weights)],
        [ga + gb for ga, gb in zip(a.biases, b.biases)],
    )


def train_step(net: Optional[nn.Network], adam: Optional[nn.AdamState],
               problem: PdeProblem, config: TrainConfig, iteration: int,
               streams: RngStream) -> MetricsRow:
    """One outer iteration. Targets are built from the parameters as they are
    on entry and stay fixed across the inner Adam steps. In bias mode the exact
    solution plays the network and no update happens."""
    t0 = time.perf_counter()
    n_steps, dt_step = config.time_step()
    rng_int = streams.generator(iteration, _INTERIOR)
    rng_bnd = streams.generator(iteration, _BOUNDARY)
    rng_walk = streams.generator(iteration, _WALKERS)

    pts = sample_interior(problem.domain, config.n_interior, rng_int)
    bpts = sample_boundary(problem.domain, config.n_boundary, rng_bnd)

    if config.bias_mode:
        if problem.exact_solution is None:
            raise ValueError("bias mode needs a problem with an exact solution")
        u_eval = problem.exact_solution
    else:
        u_eval = lambda X: nn.forward(net, X)  # frozen: read before any update

    batch = simulate_walkers(pts, problem, u_eval, config.mode, config.dt,
                             dt_step, config.n_walkers, rng_walk)
    targets, _ = martingale_target(batch, u_eval, problem.boundary)
    bvals = np.asarray(problem.boundary(bpts), dtype=np.float64)

    if config.bias_mode:
        r = np.asarray(u_eval(pts), dtype=np.float64) - targets
        il = float(np.mean(r * r))
        rb = np.asarray(u_eval(bpts), dtype=np.float64) - bvals
        bl = float(np.mean(rb * rb))
    else:
        il = bl = None
        for inner in range(config.inner_steps):
            li, gi = interior_loss(net, pts, targets)
            lb, gb = boundary_loss(net, bpts, bvals)
            if inner == 0:
                il, bl = li, lb  # losses at the pre-update parameters
            nn.adam_step(net, _add_gradients(gi, gb), adam)

    if not (np.isfinite(il) and np.isfinite(bl)):
        raise FloatingPointError(
            f"non-finite loss at iteration {iteration}: interior={il} boundary={bl}, "
            f"dt={config.dt} n_walkers={config.n_walkers} seed={config.seed}"
        )
    return MetricsRow(iteration, il, bl, None, time.perf_counter() - t0)


def relative_l2_error(u_fn: Callable, exact_fn: Callable, domain: BoxDomain,
                      grid_n: int) -> float:
    """sqrt(sum (u - u*)^2) / sqrt(sum u*^2) over a uniform inclusive grid."""
    axes = [np.linspace(domain.lower[d], domain.upper[d], grid_n)
            for d in range(domain.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    num = 0.0
    den = 0.0
    chunk = 200_000
    for i in range(0, pts.shape[0], chunk):
        block = pts[i:i + chunk]
        exact = np.asarray(exact_fn(block), dtype=np.float64)
        diff = np.asarray(u_fn(block), dtype=np.float64) - exact
        num += float(diff @ diff)
        den += float(exact @ exact)
    if den == 0.0:
        raise ValueError("exact solution vanishes on the whole grid")
    return np.sqrt(num) / np.sqrt(den)


def train(config: TrainConfig, problem: Optional[PdeProblem] = None,
          net: Optional[nn.Network] = None, checkpoint_dir=None,
          checkpoint_stride: int = 0):
    """Run the full loop; returns (net, rows). net is None in bias mode.

    With checkpoint_dir and a positive stride, the network is snapshotted
    every stride iterations as checkpoint_<iteration>.json.
    """
    config.validate()
    if problem is None:
        problem = build_problem(config)
    adam = None
    if not config.bias_mode:
        if net is None:
            net = build_network(config)
        adam = nn.init_adam(net, config.learning_rate, config.beta1, config.beta2)
    streams = RngStream(config.seed)
    rows: list[MetricsRow] = []
    for it in range(1, config.iterations + 1):
        row = train_step(net, adam, problem, config, it, streams)
        if it % config.eval_stride == 0 or it == config.iterations:
            row.relative_l2_error = _current_error(net, problem, config)
        rows.append(row)
        if (checkpoint_dir is not None and checkpoint_stride > 0
                and net is not None and it % checkpoint_stride == 0):
            nn.save_checkpoint(
                net, os.path.join(checkpoint_dir, f"checkpoint_{it:06d}.json"))
    return net, rows


def _current_error(net, problem, config: TrainConfig) -> Optional[float]:
    if problem.exact_solution is None:
        return None
    if config.bias_mode:
        return 0.0
    return relative_l2_error(lambda X: nn.forward(net, X), problem.exact_solution,
                             problem.domain, config.eval_grid)


def format_float(x) -> str:
    """Shortest representation that round trips, shared by every CSV writer."""
    return repr(float(x))


def write_metrics_csv(rows, path) -> None:
    lines = [METRICS_HEADER]
    for r in rows:
        err = "" if r.relative_l2_error is None else format_float(r.relative_l2_error)
        lines.append(",".join([
            str(r.iteration), format_float(r.interior_loss),
            format_float(r.boundary_loss), err, format_float(r.wall_time_s),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
