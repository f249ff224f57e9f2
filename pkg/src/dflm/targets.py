"""Bootstrap targets: walker averages and their deterministic counterpart.

The training target at a point is the empirical mean of u(terminal) minus the
accrued force integral over a batch of walkers, with boundary data substituted
for absorbed walkers. Brownian-mode walkers are reweighted by the exponential
of their Girsanov log weight. The same quantity has a closed quadrature form,
a Gaussian convolution of u shifted by the advection, which serves as the
slow-but-exact oracle and as the grid target operator.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .walkers import BoxDomain, PdeProblem, WalkerBatch, WalkerRecord


@dataclass
class TargetSample:
    """One walker's contribution; source records whether boundary data was used."""

    value: float
    source: str  # "interior" or "boundary"


@dataclass
class TargetMean:
    mean: float
    sample_variance: float
    n: int


def target_sample(record: WalkerRecord, u_eval, boundary, weighted: bool = False) -> TargetSample:
    if record.exited:
        val = float(np.asarray(boundary(record.terminal[None, :]))[0])
        source = "boundary"
    else:
        val = float(np.asarray(u_eval(record.terminal[None, :]))[0])
        source = "interior"
    y = val - record.force_integral
    if weighted:
        y *= np.exp(record.girsanov_log)
    return TargetSample(y, source)


def target_values(batch: WalkerBatch, u_eval, boundary, weighted: bool) -> np.ndarray:
    """Per-walker target samples, shape (n_points, n_walkers)."""
    p, s = batch.n_points, batch.n_walkers
    k = batch.starts.shape[1]
    term = batch.terminal.reshape(p * s, k)
    exited = batch.exited.ravel()
    vals = np.empty(p * s)
    inside = ~exited
    if exited.any():
        vals[exited] = np.asarray(boundary(term[exited]), dtype=np.float64)
    if inside.any():
        vals[inside] = np.asarray(u_eval(term[inside]), dtype=np.float64)
    y = vals - batch.force_integral.ravel()
    if weighted:
        logs = batch.girsanov_log.ravel()
        if logs.any():
            y = y * np.exp(logs)
    return y.reshape(p, s)


def target_statistics(batch: WalkerBatch, u_eval, boundary, weighted: bool):
    """Per-point empirical mean and sample variance of the walker targets.

    Returns (means, variances), each of shape (n_points,). The variance uses
    ddof=1 and is 0 for a single walker.
    """
    ys = target_values(batch, u_eval, boundary, weighted)
    means = ys.mean(axis=1)
    variances = ys.var(axis=1, ddof=1) if batch.n_walkers > 1 else np.zeros(batch.n_points)
    return means, variances


def plain_target(batch: WalkerBatch, u_eval, boundary, point_index: int = 0) -> TargetMean:
    """Unweighted walker average, the estimator for drifted-mode records."""
    means, variances = target_statistics(batch, u_eval, boundary, weighted=False)
    return TargetMean(float(means[point_index]), float(variances[point_index]), batch.n_walkers)


def girsanov_target(batch: WalkerBatch, u_eval, boundary, point_index: int = 0) -> TargetMean:
    """Likelihood-reweighted walker average for brownian-mode records."""
    if batch.mode != "brownian":
        raise ValueError("girsanov weights are only meaningful for brownian-mode records")
    means, variances = target_statistics(batch, u_eval, boundary, weighted=True)
    return TargetMean(float(means[point_index]), float(variances[point_index]), batch.n_walkers)


def martingale_target(batch: WalkerBatch, u_eval, boundary):
    """Dispatch on the batch mode; returns per-point (means, variances) arrays."""
    return target_statistics(batch, u_eval, boundary, weighted=batch.mode == "brownian")


@dataclass
class GaussianKernel:
    """Tensor Gauss-Hermite rule for an isotropic Gaussian N(mean, variance I)."""

    mean: np.ndarray
    variance: float
    order: int = 32
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        k = self.mean.size
        x, w = hermegauss(self.order)
        w = w / np.sqrt(2.0 * np.pi)  # probabilists' weight, normalized to a density
        grids = np.array(list(itertools.product(x, repeat=k)))
        wprod = np.prod(np.array(list(itertools.product(w, repeat=k))), axis=1)
        self.nodes = self.mean + np.sqrt(self.variance) * grids
        self.weights = wprod

    def expectation(self, fn: Callable) -> float:
        """E[fn(Z)] for Z ~ N(mean, variance I); exact up to degree 2*order-1."""
        vals = np.asarray(fn(self.nodes), dtype=np.float64)
        return float(self.weights @ vals)


def convolution_target(u_fn, x, dt: float, problem: PdeProblem, order: int = 32) -> float:
    """Deterministic value of the one-horizon target at a single point.

    Computes the Gaussian smoothing of u over N(x + V(x) dt, dt I) minus
    G(x) dt, the exact expectation the walker targets estimate (up to the time
    discretization of the force integral).
    """
    x = np.asarray(x, dtype=np.float64)
    u_x = np.asarray(u_fn(x[None, :]), dtype=np.float64) if (
        problem.force_needs_u or problem.drift_needs_u) else None
    v = problem.drift_at(x[None, :], u_x)
    shift = np.zeros_like(x) if v is None else v[0] * dt
    kernel = GaussianKernel(mean=-shift, variance=dt, order=order)
    smoothed = kernel.expectation(lambda z: u_fn(x[None, :] - z))
    g_x = float(problem.force_at(x[None, :], u_x)[0])
    return smoothed - g_x * dt


def _resolution_guard(h: float, dt: float, allow_coarse: bool):
    limit = np.sqrt(dt) / 4.0
    if h > limit:
        msg = (f"grid spacing {h:.3e} is coarser than sqrt(dt)/4 = {limit:.3e}; "
               "the kernel is under-resolved")
        warnings.warn(msg)
        if not allow_coarse:
            raise ValueError(msg + " (pass allow_coarse=True to proceed)")


def _axis_kernel(h: float, dt: float) -> np.ndarray:
    """Discrete Gaussian weights on offsets j*h, normalized to sum to 1."""
    sigma = np.sqrt(dt)
    j_max = max(3, int(np.ceil(8.0 * sigma / h)))
    offsets = np.arange(-j_max, j_max + 1) * h
    w = np.exp(-0.5 * (offsets / sigma) ** 2)
    return w / w.sum()


def _band_matrix(n: int, kernel: np.ndarray) -> np.ndarray:
    """Dense (n, n + 2*pad) matrix applying the kernel to a padded axis."""
    pad = (kernel.size - 1) // 2
    mat = np.zeros((n, n + 2 * pad))
    rows = np.arange(n)
    for j, w in enumerate(kernel):
        mat[rows, rows + j] = w
    return mat


def _extended_grid(u_grid: np.ndarray, problem: PdeProblem, pads, axes):
    """u on the padded lattice, with g(nearest boundary point) outside the box."""
    n0, n1 = u_grid.shape
    p0, p1 = pads
    x0, x1 = axes
    h0 = x0[1] - x0[0]
    h1 = x1[1] - x1[0]
    ex0 = x0[0] + h0 * np.arange(-p0, n0 + p0)
    ex1 = x1[0] + h1 * np.arange(-p1, n1 + p1)
    ext = np.empty((n0 + 2 * p0, n1 + 2 * p1))
    ext[p0:p0 + n0, p1:p1 + n1] = u_grid
    lo, hi = problem.domain.lower, problem.domain.upper
    c0 = np.clip(ex0, lo[0], hi[0])
    c1 = np.clip(ex1, lo[1], hi[1])
    outside = np.zeros(ext.shape, dtype=bool)
    outside[:p0, :] = True
    outside[p0 + n0:, :] = True
    outside[:, :p1] = True
    outside[:, p1 + n1:] = True
    if outside.any():
        pts0, pts1 = np.meshgrid(c0, c1, indexing="ij")
        pts = np.column_stack([pts0[outside], pts1[outside]])
        ext[outside] = np.asarray(problem.boundary(pts), dtype=np.float64)
    return ext, ex0, ex1


def grid_axes(domain: BoxDomain, shape) -> tuple[np.ndarray, np.ndarray]:
    """Uniform inclusive lattice coordinates matching a grid array shape."""
    return tuple(
        np.linspace(domain.lower[d], domain.upper[d], shape[d]) for d in range(2)
    )


def apply_target_operator(u_grid: np.ndarray, dt: float, problem: PdeProblem,
                          order: int = 32, allow_coarse: bool = False) -> np.ndarray:
    """One application of the target operator on a uniform inclusive grid.

    For pure diffusion the Gaussian smoothing separates per axis and is applied
    as a discrete convolution, which is spectrally accurate once the kernel is
    resolved. With advection each node falls back to Gauss-Hermite quadrature
    with bilinear interpolation on the extended lattice. Values outside the
    domain are the boundary data at the nearest boundary point.
    """
    u_grid = np.asarray(u_grid, dtype=np.float64)
    if u_grid.ndim != 2 or problem.domain.dim != 2:
        raise ValueError("the grid operator is implemented for 2-d problems")
    x0, x1 = grid_axes(problem.domain, u_grid.shape)
    h0, h1 = x0[1] - x0[0], x1[1] - x1[0]
    _resolution_guard(max(h0, h1), dt, allow_coarse)

    if problem.drift is None:
        k0 = _axis_kernel(h0, dt)
        k1 = _axis_kernel(h1, dt)
        pads = ((k0.size - 1) // 2, (k1.size - 1) // 2)
        ext, _, _ = _extended_grid(u_grid, problem, pads, (x0, x1))
        smoothed = _band_matrix(u_grid.shape[0], k0) @ ext @ _band_matrix(u_grid.shape[1], k1).T
    else:
        smoothed = _advected_smoothing(u_grid, dt, problem, order, (x0, x1))

    nodes0, nodes1 = np.meshgrid(x0, x1, indexing="ij")
    pts = np.column_stack([nodes0.ravel(), nodes1.ravel()])
    u_vals = u_grid.ravel() if problem.force_needs_u else None
    g_vals = problem.force_at(pts, u_vals).reshape(u_grid.shape)
    return smoothed - g_vals * dt


def _advected_smoothing(u_grid, dt, problem, order, axes):
    x0, x1 = axes
    n0, n1 = u_grid.shape
    sigma = np.sqrt(dt)
    xg, w = hermegauss(order)
    w = w / np.sqrt(2.0 * np.pi)
    offsets = np.array(list(itertools.product(xg, repeat=2))) * sigma
    wprod = np.prod(np.array(list(itertools.product(w, repeat=2))), axis=1)

    nodes0, nodes1 = np.meshgrid(x0, x1, indexing="ij")
    pts = np.column_stack([nodes0.ravel(), nodes1.ravel()])
    u_vals = u_grid.ravel() if problem.drift_needs_u else None
    v = problem.drift_at(pts, u_vals)

    # pad far enough for the advected quadrature stencil
    reach = float(np.abs(offsets).max() + np.abs(v).max() * dt)
    pads = (int(np.ceil(reach / (x0[1] - x0[0]))) + 1,
            int(np.ceil(reach / (x1[1] - x1[0]))) + 1)
    ext, ex0, ex1 = _extended_grid(u_grid, problem, pads, (x0, x1))

    out = np.zeros(pts.shape[0])
    chunk = max(1, 2_000_000 // offsets.shape[0])
    for i0 in range(0, pts.shape[0], chunk):
        sl = slice(i0, min(i0 + chunk, pts.shape[0]))
        centers = pts[sl] + v[sl] * dt
        eval_pts = centers[:, None, :] + offsets[None, :, :]
        vals = _bilinear(ext, ex0, ex1, eval_pts.reshape(-1, 2))
        out[sl] = vals.reshape(-1, offsets.shape[0]) @ wprod
    return out.reshape(n0, n1)


def _bilinear(grid, gx0, gx1, pts):
    h0 = gx0[1] - gx0[0]
    h1 = gx1[1] - gx1[0]
    f0 = np.clip((pts[:, 0] - gx0[0]) / h0, 0, gx0.size - 1 - 1e-12)
    f1 = np.clip((pts[:, 1] - gx1[0]) / h1, 0, gx1.size - 1 - 1e-12)
    i0 = f0.astype(int)
    i1 = f1.astype(int)
    t0 = f0 - i0
    t1 = f1 - i1
    return ((1 - t0) * (1 - t1) * grid[i0, i1]
            + t0 * (1 - t1) * grid[i0 + 1, i1]
            + (1 - t0) * t1 * grid[i0, i1 + 1]
            + t0 * t1 * grid[i0 + 1, i1 + 1])
