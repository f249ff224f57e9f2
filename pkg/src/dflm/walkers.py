"""Stochastic walkers for the probabilistic reformulation of the PDE.

A batch of walkers starts at each collocation point and advances by Euler
Maruyama steps. Two modes exist: "drifted" walkers carry the advection field in
the step itself, "brownian" walkers move driftlessly and accumulate the
Girsanov log weight that reweights their contribution later. Walkers that hit
the boundary are absorbed at the segment/boundary intersection and keep their
exit state for the rest of the horizon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

MODES = ("drifted", "brownian")

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Root seed plus hierarchical integer keys, so independent substreams can
    be addressed as (iteration, point, ...) without sharing state."""

    seed: int

    def generator(self, *key: int) -> np.random.Generator:
        sk = tuple(int(v) for v in key)
        return np.random.default_rng(
            np.random.SeedSequence(self.seed & _SEED_MASK, spawn_key=sk)
        )


@dataclass(frozen=True)
class BoxDomain:
    """Axis aligned box. Faces are indexed 2*axis + side with side 0 the lower
    face, which fixes the tie break when a step crosses a corner."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def unit_square(cls) -> "BoxDomain":
        return cls(np.array([-0.5, -0.5]), np.array([0.5, 0.5]))

    @classmethod
    def cube(cls, half_width: float, dim: int = 2) -> "BoxDomain":
        h = float(half_width)
        return cls(np.full(dim, -h), np.full(dim, h))

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo >= hi):
            raise ValueError("domain needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points: np.ndarray, strict: bool = False) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if strict:
            ok = (pts > self.lower) & (pts < self.upper)
        else:
            ok = (pts >= self.lower) & (pts <= self.upper)
        return ok.all(axis=1)

    def shrink(self, margin: float) -> "BoxDomain":
        if np.any(self.lower + margin >= self.upper - margin):
            raise ValueError(f"margin {margin} leaves an empty box")
        return BoxDomain(self.lower + margin, self.upper - margin)


@dataclass
class PdeProblem:
    """Problem data for (1/2) Lap u + V . grad u - G = 0 with Dirichlet data g.

    `force` is G and `boundary` is g; both act on (n, k) point arrays. When the
    running cost or the advection depends on the current solution, set the
    corresponding *_needs_u flag and accept a second argument with the frozen
    net's values at the points.
    """

    domain: BoxDomain
    force: Callable
    boundary: Callable
    drift: Optional[Callable] = None
    exact_solution: Optional[Callable] = None
    exact_gradient: Optional[Callable] = None
    force_needs_u: bool = False
    drift_needs_u: bool = False
    wavenumber: Optional[int] = None

    def force_at(self, points: np.ndarray, u_vals=None) -> np.ndarray:
        if self.force_needs_u:
            return np.asarray(self.force(points, u_vals), dtype=np.float64)
        return np.asarray(self.force(points), dtype=np.float64)

    def drift_at(self, points: np.ndarray, u_vals=None):
        if self.drift is None:
            return None
        if self.drift_needs_u:
            return np.asarray(self.drift(points, u_vals), dtype=np.float64)
        return np.asarray(self.drift(points), dtype=np.float64)

    @property
    def needs_u_along_path(self) -> bool:
        return self.force_needs_u or (self.drift is not None and self.drift_needs_u)


def sine_product(points: np.ndarray, m: int = 1) -> np.ndarray:
    """prod_d sin(2 pi m x_d), the reference solution family."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.prod(np.sin(2.0 * np.pi * m * pts), axis=1)


def sine_product_gradient(points: np.ndarray, m: int = 1) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = 2.0 * np.pi * m
    s = np.sin(a * pts)
    c = np.cos(a * pts)
    grad = np.empty_like(pts)
    for d in range(pts.shape[1]):
        others = np.prod(np.delete(s, d, axis=1), axis=1)
        grad[:, d] = a * c[:, d] * others
    return grad


def poisson_sine_problem(m: int = 1, domain: Optional[BoxDomain] = None) -> PdeProblem:
    """Pure diffusion problem whose exact solution is prod_d sin(2 pi m x_d).

    The running cost is G = (1/2) Lap u* = -(k/2) (2 pi m)^2 u*, so the exact
    solution makes the stopped value process a martingale.
    """
    dom = domain if domain is not None else BoxDomain.unit_square()
    k = dom.dim
    a = 2.0 * np.pi * m
    scale = -0.5 * k * a * a

    def exact(points):
        return sine_product(points, m)

    def exact_grad(points):
        return sine_product_gradient(points, m)

    def force(points):
        return scale * sine_product(points, m)

    def boundary(points):
        pts = np.atleast_2d(points)
        return np.zeros(pts.shape[0])

    return PdeProblem(
        domain=dom, force=force, boundary=boundary, drift=None,
        exact_solution=exact, exact_gradient=exact_grad, wavenumber=m,
    )


@dataclass
class WalkerRecord:
    """Terminal state of a single walker over one horizon."""

    start: np.ndarray
    terminal: np.ndarray
    exited: bool
    exit_time: float
    force_integral: float
    girsanov_log: float
    walker_index: int


@dataclass
class WalkerBatch:
    """Structure of arrays for n_points * n_walkers walkers.

    terminal, exited, exit_time, force_integral and girsanov_log all have shape
    (n_points, n_walkers) in the leading axes; exit_time is NaN where a walker
    never left the domain.
    """

    starts: np.ndarray
    terminal: np.ndarray
    exited: np.ndarray
    exit_time: np.ndarray
    force_integral: np.ndarray
    girsanov_log: np.ndarray
    mode: str
    dt: float
    dt_step: float

    @property
    def n_points(self) -> int:
        return self.starts.shape[0]

    @property
    def n_walkers(self) -> int:
        return self.terminal.shape[1]

    def records(self, point_index: int = 0) -> Iterator[WalkerRecord]:
        for s in range(self.n_walkers):
            yield WalkerRecord(
                start=self.starts[point_index],
                terminal=self.terminal[point_index, s],
                exited=bool(self.exited[point_index, s]),
                exit_time=float(self.exit_time[point_index, s]),
                force_integral=float(self.force_integral[point_index, s]),
                girsanov_log=float(self.girsanov_log[point_index, s]),
                walker_index=s,
            )


def step_euler_maruyama(position, drift, dt: float, noise) -> np.ndarray:
    """x + V dt + sqrt(dt) Z, broadcast over leading axes."""
    position = np.asarray(position, dtype=np.float64)
    return position + np.asarray(drift) * dt + np.sqrt(dt) * np.asarray(noise)


def _face_crossings(prev: np.ndarray, nxt: np.ndarray, domain: BoxDomain):
    """Fraction lambda in [0, 1] of each segment at its first boundary hit.

    Returns (lam, face) with lam = inf for segments that stay inside. Faces are
    scanned in index order so argmin picks the lowest face on exact ties.
    """
    n, k = prev.shape
    lam_faces = np.full((n, 2 * k), np.inf)
    delta = nxt - prev
    for axis in range(k):
        d = delta[:, axis]
        lo = domain.lower[axis]
        hi = domain.upper[axis]
        below = nxt[:, axis] < lo
        above = nxt[:, axis] > hi
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_faces[below, 2 * axis] = (lo - prev[below, axis]) / d[below]
            lam_faces[above, 2 * axis + 1] = (hi - prev[above, axis]) / d[above]
    face = np.argmin(lam_faces, axis=1)
    lam = lam_faces[np.arange(n), face]
    return lam, face


def detect_exit(prev, nxt, domain: BoxDomain):
    """First intersection of the segment prev -> nxt with the boundary.

    Returns None when the segment stays inside, else (lam, exit_point) with the
    hit coordinate snapped exactly onto the face.
    """
    prev = np.asarray(prev, dtype=np.float64)[None, :]
    nxt = np.asarray(nxt, dtype=np.float64)[None, :]
    lam, face = _face_crossings(prev, nxt, domain)
    if not np.isfinite(lam[0]):
        return None
    point = _snap_to_face(prev, nxt, lam, face, domain)[0]
    return float(lam[0]), point


def _snap_to_face(prev, nxt, lam, face, domain: BoxDomain) -> np.ndarray:
    point = prev + lam[:, None] * (nxt - prev)
    point = np.clip(point, domain.lower, domain.upper)
    axis = face // 2
    side = face % 2
    values = np.where(side == 1, domain.upper[axis], domain.lower[axis])
    point[np.arange(point.shape[0]), axis] = values
    return point


def derive_time_step(dt: float, dt_step_max: float):
    """Largest divisor of dt not above dt_step_max: (n_steps, dt_step)."""
    if dt <= 0 or dt_step_max <= 0:
        raise ValueError("dt and dt_step_max must be positive")
    n_steps = max(1, int(np.ceil(dt / dt_step_max - 1e-12)))
    return n_steps, dt / n_steps


def simulate_walkers(starts, problem: PdeProblem, u_eval, mode: str,
                     dt: float, dt_step: float, n_walkers: int,
                     rng: np.random.Generator) -> WalkerBatch:
    """Run n_walkers walkers per start point over one horizon of length dt.

    The force integral uses the left endpoint of each step and is truncated at
    the exit time for absorbed walkers. In brownian mode the Girsanov log
    weight accrues V . dB - |V|^2 dt/2 per step with V at the left endpoint and
    the same (truncated) increment that moved the walker. u_eval is only called
    when the problem declares that the force or drift needs it; the network it
    wraps is frozen and never differentiated here.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    n_points, k = starts.shape
    if k != problem.domain.dim:
        raise ValueError("start points and domain dimensions differ")
    if not problem.domain.contains(starts, strict=True).all():
        raise ValueError("start points must lie strictly inside the domain")
    n_steps = int(round(dt / dt_step))
    if n_steps < 1 or abs(n_steps * dt_step - dt) > 1e-9 * dt:
        raise ValueError(f"dt={dt} is not an integer multiple of dt_step={dt_step}")
    if problem.needs_u_along_path and u_eval is None:
        raise ValueError("problem needs u along the path but u_eval is None")

    n = n_points * n_walkers
    pos = np.repeat(starts, n_walkers, axis=0)
    active = np.ones(n, dtype=bool)
    exited = np.zeros(n, dtype=bool)
    exit_time = np.full(n, np.nan)
    force_int = np.zeros(n)
    girs = np.zeros(n)
    sqrt_dt = np.sqrt(dt_step)
    use_girsanov = mode == "brownian" and problem.drift is not None

    for m in range(n_steps):
        noise = rng.standard_normal((n, k))
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x = pos[idx]
        u_x = u_eval(x) if problem.needs_u_along_path else None
        g_vals = problem.force_at(x, u_x)
        if mode == "drifted" and problem.drift is not None:
            nxt = step_euler_maruyama(x, problem.drift_at(x, u_x), dt_step, noise[idx])
        else:
            nxt = x + sqrt_dt * noise[idx]

        lam, face = _face_crossings(x, nxt, problem.domain)
        crossed = np.isfinite(lam)
        final = nxt
        eff_dt = np.full(idx.size, dt_step)
        if crossed.any():
            snapped = _snap_to_face(x[crossed], nxt[crossed], lam[crossed],
                                    face[crossed], problem.domain)
            final = nxt.copy()
            final[crossed] = snapped
            eff_dt[crossed] = lam[crossed] * dt_step

        force_int[idx] += g_vals * eff_dt
        if use_girsanov:
            v = problem.drift_at(x, u_x)
            disp = final - x
            girs[idx] += (v * disp).sum(axis=1) - 0.5 * (v * v).sum(axis=1) * eff_dt
        pos[idx] = final
        if crossed.any():
            cidx = idx[crossed]
            exited[cidx] = True
            exit_time[cidx] = (m + lam[crossed]) * dt_step
            active[cidx] = False

    shape = (n_points, n_walkers)
    return WalkerBatch(
        starts=starts,
        terminal=pos.reshape(n_points, n_walkers, k),
        exited=exited.reshape(shape),
        exit_time=exit_time.reshape(shape),
        force_integral=force_int.reshape(shape),
        girsanov_log=girs.reshape(shape),
        mode=mode, dt=dt, dt_step=dt_step,
    )


def dump_records_csv(batch: WalkerBatch, path) -> None:
    """One row per walker, for eyeballing simulations."""
    k = batch.starts.shape[1]
    cols = [f"start_{d}" for d in range(k)] + [f"terminal_{d}" for d in range(k)]
    header = "point_index,walker_index," + ",".join(cols) + \
        ",exited,exit_time,force_integral,girsanov_log"
    lines = [header]
    for p in range(batch.n_points):
        for rec in batch.records(p):
            vals = [str(p), str(rec.walker_index)]
            vals += [repr(float(v)) for v in rec.start]
            vals += [repr(float(v)) for v in rec.terminal]
            vals += [str(int(rec.exited)), repr(rec.exit_time),
                     repr(rec.force_integral), repr(rec.girsanov_log)]
            lines.append(",".join(vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
