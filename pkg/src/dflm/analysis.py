"""Diagnostics for the walker target estimator.

The empirical loss overshoots the exact one by the average variance of the
target mean, which scales like dt/n_walkers times the mean square gradient.
This module measures that bias without a huge reference walker count (via a
split-sample identity), checks the concentration and displacement bounds, and
tracks how far one application of the target operator moves a function as the
horizon shrinks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn
from .targets import apply_target_operator, convolution_target, target_values
from .walkers import (BoxDomain, PdeProblem, RngStream, derive_time_step,
                      simulate_walkers)


class AnalyticFunction:
    """Closed form u with its gradient, the frozen-solution counterpart of a net."""

    def __init__(self, fn: Callable, grad: Callable):
        self._fn = fn
        self._grad = grad

    def value(self, points) -> np.ndarray:
        return np.asarray(self._fn(np.atleast_2d(points)), dtype=np.float64)

    def gradient(self, points) -> np.ndarray:
        return np.asarray(self._grad(np.atleast_2d(points)), dtype=np.float64)


class NetworkFunction:
    def __init__(self, net: nn.Network):
        self.net = net

    def value(self, points) -> np.ndarray:
        return np.atleast_1d(nn.forward(self.net, points))

    def gradient(self, points) -> np.ndarray:
        return np.atleast_2d(nn.grad_input(self.net, points))


def as_function(u):
    if isinstance(u, nn.Network):
        return NetworkFunction(u)
    if hasattr(u, "value") and hasattr(u, "gradient"):
        return u
    raise TypeError("u must be a Network or expose value/gradient")


def linear_function(a) -> AnalyticFunction:
    a = np.asarray(a, dtype=np.float64)
    return AnalyticFunction(
        lambda X: X @ a,
        lambda X: np.broadcast_to(a, X.shape).copy(),
    )


def bias_margin(dt: float, domain: BoxDomain) -> float:
    """Distance from the boundary for bias-study collocation.

    4 sqrt(dt) where that fits; capped so the sampling box never collapses on
    the horizons where 4 sqrt(dt) exceeds the domain half width.
    """
    half = 0.5 * float(domain.widths.min())
    return min(4.0 * np.sqrt(dt), 0.35 * half)


def interior_node_margin(dt: float, domain: BoxDomain) -> float:
    """Boundary exclusion for grid norms: 3 sigma, floored and capped so the
    node set stays usable across the whole horizon ladder."""
    half = 0.5 * float(domain.widths.min())
    return float(np.clip(3.0 * np.sqrt(dt), 0.12 * half, 0.6 * half))


def interior_node_mask(domain: BoxDomain, shape, margin: float) -> np.ndarray:
    axes = [np.linspace(domain.lower[d], domain.upper[d], shape[d])
            for d in range(len(shape))]
    masks = [(ax >= domain.lower[d] + margin) & (ax <= domain.upper[d] - margin)
             for d, ax in enumerate(axes)]
    out = masks[0][:, None] & masks[1][None, :]
    return out


@dataclass
class BiasReport:
    dt: float
    n_walkers: int
    n_outer: int
    empirical_loss: float
    exact_loss: float
    estimated_bias: float
    std_error: float
    predicted_bias: float
    mean_sq_gradient: float


def estimate_bias(u, problem: PdeProblem, dt: float, n_walkers: int,
                  n_outer: int = 1000, seed: int = 0, mode: str = "brownian",
                  dt_step_max: float = 1e-3, n_boot: int = 200) -> BiasReport:
    """Split-sample estimate of E[empirical loss] - exact loss.

    Per collocation point two independent target means are formed from one
    batch of 2*n_walkers walkers. (u - ybar1)(u - ybar2) is unbiased for the
    exact squared residual because the replicas are independent, so the
    averaged difference from the squared empirical residuals estimates the
    variance bias directly; any systematic offset of the target cancels.
    """
    u = as_function(u)
    if n_outer < 100:
        raise ValueError("n_outer below 100 gives a useless standard error")
    streams = RngStream(seed)
    region = problem.domain.shrink(bias_margin(dt, problem.domain))
    rng_pts = streams.generator(0)
    points = rng_pts.uniform(region.lower, region.upper, size=(n_outer, problem.domain.dim))

    _, dt_step = derive_time_step(dt, dt_step_max)
    batch = simulate_walkers(points, problem, u.value, mode, dt, dt_step,
                             2 * n_walkers, streams.generator(1))
    ys = target_values(batch, u.value, problem.boundary,
                       weighted=mode == "brownian")
    y1 = ys[:, :n_walkers].mean(axis=1)
    y2 = ys[:, n_walkers:].mean(axis=1)

    u_vals = u.value(points)
    r1 = u_vals - y1
    r2 = u_vals - y2
    empirical = 0.5 * (r1 * r1 + r2 * r2)
    exact = r1 * r2
    diff = empirical - exact

    boot_rng = streams.generator(2)
    idx = boot_rng.integers(0, n_outer, size=(n_boot, n_outer))
    std_error = float(diff[idx].mean(axis=1).std(ddof=1))

    grads = u.gradient(points)
    mean_sq_grad = float(np.mean((grads * grads).sum(axis=1)))
    return BiasReport(
        dt=dt, n_walkers=n_walkers, n_outer=n_outer,
        empirical_loss=float(empirical.mean()),
        exact_loss=float(exact.mean()),
        estimated_bias=float(diff.mean()),
        std_error=std_error,
        predicted_bias=mean_sq_grad * dt / n_walkers,
        mean_sq_gradient=mean_sq_grad,
    )


@dataclass
class ChebyshevReport:
    dt: float
    n_walkers: int
    eps: float
    n_trials: int
    tail_probability: float
    bound: float
    violation: bool
    severe: bool


def chebyshev_check(u, problem: PdeProblem, x, dt: float, n_walkers: int,
                    eps: float, n_trials: int = 2000, seed: int = 0,
                    mode: str = "brownian", dt_step_max: float = 1e-3) -> ChebyshevReport:
    """Empirical tail of the target mean against the variance bound.

    The bound treats the concentration constant as 1; a measured tail between
    one and two times the bound is flagged, above two counts as severe.
    """
    u = as_function(u)
    x = np.asarray(x, dtype=np.float64)
    streams = RngStream(seed)
    _, dt_step = derive_time_step(dt, dt_step_max)
    batch = simulate_walkers(x[None, :], problem, u.value, mode, dt, dt_step,
                             n_trials * n_walkers, streams.generator(0))
    ys = target_values(batch, u.value, problem.boundary,
                       weighted=mode == "brownian")
    means = ys.reshape(n_trials, n_walkers).mean(axis=1)
    center = means.mean()
    tail = float(np.mean(np.abs(means - center) > eps))
    grad = u.gradient(x[None, :])[0]
    bound = float((grad @ grad) * dt / (eps * eps * n_walkers))
    return ChebyshevReport(
        dt=dt, n_walkers=n_walkers, eps=eps, n_trials=n_trials,
        tail_probability=tail, bound=bound,
        violation=tail > bound, severe=tail > 2.0 * bound,
    )


@dataclass
class FoldedNormalReport:
    mu_norm: float
    sigma: float
    dim: int
    n_samples: int
    mc_mean: float
    std_error: float
    bound: float
    satisfied: bool


def folded_normal_bound_check(mu, sigma: float, n_samples: int = 200_000,
                              seed: int = 0) -> FoldedNormalReport:
    """Monte Carlo E|w| for w ~ N(mu, sigma^2 I) against the analytic bound
    C1 sigma exp(-|mu|^2 / (2 sigma^2)) + C2 |mu| with C1 = k sqrt(2/pi), C2 = k."""
    if n_samples < 10_000:
        raise ValueError("n_samples below 1e4 cannot resolve the bound")
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    k = mu.size
    rng = np.random.default_rng(seed)
    w = mu + sigma * rng.standard_normal((n_samples, k))
    norms = np.sqrt((w * w).sum(axis=1))
    mc = float(norms.mean())
    se = float(norms.std(ddof=1) / np.sqrt(n_samples))
    mu_norm = float(np.sqrt(mu @ mu))
    c1 = k * np.sqrt(2.0 / np.pi)
    c2 = float(k)
    bound = float(c1 * sigma * np.exp(-mu_norm ** 2 / (2.0 * sigma ** 2)) + c2 * mu_norm)
    return FoldedNormalReport(
        mu_norm=mu_norm, sigma=sigma, dim=k, n_samples=n_samples,
        mc_mean=mc, std_error=se, bound=bound,
        satisfied=mc <= bound + 4.0 * se,
    )


@dataclass
class LearningBoundRow:
    point: np.ndarray
    measured: float
    bound: float
    satisfied: bool


def learning_bound_check(u, problem: PdeProblem, points, dt: float,
                         order: int = 32, slack: float = 1e-9) -> list[LearningBoundRow]:
    """One-application displacement |T u - u| against the gradient bound.

    The bound holds exactly for constant, linear and pure-force cases; smooth
    nonlinear families can exceed it only by quadrature slack, which is why a
    tiny additive slack keeps equality cases from flapping.
    """
    u = as_function(u)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    k = points.shape[1]
    c1 = k * np.sqrt(2.0 / np.pi)
    c2 = float(k)
    rows = []
    for x in points:
        moved = convolution_target(u.value, x, dt, problem, order=order)
        measured = abs(moved - float(u.value(x[None, :])[0]))
        grad = u.gradient(x[None, :])[0]
        gnorm = float(np.sqrt(grad @ grad))
        u_x = u.value(x[None, :]) if (problem.force_needs_u or problem.drift_needs_u) else None
        v = problem.drift_at(x[None, :], u_x)
        vnorm = 0.0 if v is None else float(np.sqrt((v[0] * v[0]).sum()))
        g_abs = abs(float(problem.force_at(x[None, :], u_x)[0]))
        bound = gnorm * (c1 * np.sqrt(dt) + c2 * vnorm * dt) + g_abs * dt
        rows.append(LearningBoundRow(
            point=x, measured=measured, bound=bound,
            satisfied=bool(measured <= bound + slack),
        ))
    return rows


@dataclass
class DecayRow:
    dt: float
    diff_norm: float
    u_norm: float
    ratio: float


@dataclass
class DecayReport:
    rows: list
    slope: float


def learning_decay_sweep(u, problem: PdeProblem, dt_values: Sequence[float],
                         grid_n: int = 201) -> DecayReport:
    """Root mean square of T u - u over interior nodes for a ladder of horizons.

    Uses the ratio to the same-node norm of u so the node set per horizon does
    not skew the fitted log-log slope.
    """
    u = as_function(u)
    dom = problem.domain
    axes = [np.linspace(dom.lower[d], dom.upper[d], grid_n) for d in range(2)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    u_grid = u.value(pts).reshape(grid_n, grid_n)
    rows = []
    for dt in sorted(dt_values):
        # small horizons under-resolve the kernel on purpose here; the discrete
        # kernel is normalized, which keeps the smoothing usable down to
        # sigma ~ 2 spacings
        moved = apply_target_operator(u_grid, dt, problem, allow_coarse=True)
        mask = interior_node_mask(dom, u_grid.shape,
                                  interior_node_margin(dt, dom))
        diff = moved[mask] - u_grid[mask]
        diff_norm = float(np.sqrt(np.mean(diff * diff)))
        u_norm = float(np.sqrt(np.mean(u_grid[mask] ** 2)))
        rows.append(DecayRow(dt=dt, diff_norm=diff_norm, u_norm=u_norm,
                             ratio=diff_norm / u_norm))
    slope = float("nan")
    if len(rows) >= 2:
        slope = fit_loglog_slope([r.dt for r in rows], [r.ratio for r in rows])
    return DecayReport(rows=rows, slope=slope)


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x, dtype=np.float64)),
                            np.log(np.asarray(y, dtype=np.float64)), 1)[0])


def fit_grid_slopes(dt_vals, ns_vals, values):
    """Least squares exponents (p, q) for values ~ dt^p * ns^q on a full grid."""
    dts, nss, vals = [], [], []
    for i, dt in enumerate(dt_vals):
        for j, ns in enumerate(ns_vals):
            dts.append(dt)
            nss.append(ns)
            vals.append(values[i][j])
    design = np.column_stack([
        np.ones(len(vals)), np.log(np.asarray(dts)), np.log(np.asarray(nss)),
    ])
    coef, *_ = np.linalg.lstsq(design, np.log(np.asarray(vals)), rcond=None)
    return float(coef[1]), float(coef[2])
