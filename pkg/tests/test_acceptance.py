"""End-to-end acceptance checks, one per release gate.

Each test prints a single PASS/FAIL line (run with ``-s`` to see the
checklist as it goes) and asserts the same condition, so the module works
both as a gate for CI and as a readable report. The checks are ordered
cheapest first; the desk-scale training check at the end dominates the
runtime and takes around half an hour on one core.
"""

import time

import numpy as np

from dflm import nn
from dflm.analysis import (AnalyticFunction, estimate_bias, fit_grid_slopes,
                           folded_normal_bound_check, learning_decay_sweep,
                           linear_function)
from dflm.harness import SweepSpec, decay_analysis, execute_run, run_sweep
from dflm.targets import convolution_target, martingale_target
from dflm.training import TrainConfig, train
from dflm.walkers import (BoxDomain, PdeProblem, poisson_sine_problem,
                          simulate_walkers, sine_product,
                          sine_product_gradient)


def _report(label: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}", flush=True)


def _zeros(points):
    return np.zeros(len(np.atleast_2d(points)))


def _sine_u(m: int = 1) -> AnalyticFunction:
    return AnalyticFunction(lambda p: sine_product(p, m),
                            lambda p: sine_product_gradient(p, m))


def _free_space_problem(drift_vec, force) -> PdeProblem:
    """A problem on a box so wide that no walker ever reaches the boundary."""
    drift = None
    if drift_vec is not None:
        v = np.asarray(drift_vec, dtype=np.float64)
        drift = lambda p: np.broadcast_to(v, np.atleast_2d(p).shape)
    return PdeProblem(domain=BoxDomain.cube(4.0), force=force,
                      boundary=_zeros, drift=drift)


class TestGradientCorrectness:
    """Backprop against central finite differences on a batch of small nets."""

    @staticmethod
    def _fd_params(net, x, h=1e-6):
        grads = []
        for arr in (*net.weights, *net.biases):
            flat = arr.ravel()
            g = np.empty(flat.size)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = nn.forward(net, x)
                flat[i] = old - h
                down = nn.forward(net, x)
                flat[i] = old
                g[i] = (up - down) / (2.0 * h)
            grads.append(g)
        return np.concatenate(grads)

    @staticmethod
    def _fd_input(net, x, h=1e-6):
        g = np.empty(x.size)
        for i in range(x.size):
            step = np.zeros_like(x)
            step[i] = h
            g[i] = (nn.forward(net, x + step) - nn.forward(net, x - step)) / (2.0 * h)
        return g

    @staticmethod
    def _kink_free_point(net, rng, min_gap=1e-4):
        for _ in range(200):
            x = rng.uniform(-1.0, 1.0, size=2)
            zs, _ = nn._forward_cached(net, x[None, :])
            if all(np.abs(z).min() > min_gap for z in zs[:-1]):
                return x
        raise AssertionError("could not find a kink-free input")

    def test_twenty_networks_both_activations(self):
        start = time.perf_counter()
        worst = 0.0
        for seed in range(20):
            activation = "relu" if seed % 2 == 0 else "tanh"
            net = nn.init_network([2, 16, 16, 1], activation, seed=seed)
            rng = np.random.default_rng(1000 + seed)
            x = (self._kink_free_point(net, rng) if activation == "relu"
                 else rng.uniform(-1.0, 1.0, size=2))
            grads = nn.backprop(net, x)
            bp = np.concatenate([g.ravel() for g in
                                 (*grads.weights, *grads.biases)])
            fd = self._fd_params(net, x)
            worst = max(worst, np.linalg.norm(bp - fd) / np.linalg.norm(fd))
            gi = nn.grad_input(net, x)
            fdi = self._fd_input(net, x)
            worst = max(worst, np.linalg.norm(gi - fdi) / np.linalg.norm(fdi))
        elapsed = time.perf_counter() - start
        ok = worst <= 1e-5 and elapsed < 10.0
        _report("gradient correctness", ok,
                f"max relative error {worst:.2e} over 20 nets, {elapsed:.1f} s")
        assert ok


class TestMartingaleFixedPoint:
    """Walker target means at the exact solution reproduce the solution."""

    def test_exact_solution_is_a_fixed_point(self):
        start = time.perf_counter()
        problem = poisson_sine_problem(1)
        dt, n_walkers = 0.01, 10_000
        # margin 4 sqrt(dt) = 0.4 keeps every start far from the boundary
        rng = np.random.default_rng(2)
        starts = rng.uniform(-0.1, 0.1, size=(50, 2))
        exact = problem.exact_solution
        batch = simulate_walkers(starts, problem, exact, "drifted",
                                 dt=dt, dt_step=1e-4, n_walkers=n_walkers,
                                 rng=rng)
        means, variances = martingale_target(batch, exact, problem.boundary)
        tol = 4.0 * np.sqrt(variances / n_walkers) + 5e-4
        hits = int(np.sum(np.abs(means - exact(starts)) <= tol))
        elapsed = time.perf_counter() - start
        ok = hits >= 47 and elapsed < 120.0
        _report("martingale fixed point", ok,
                f"{hits}/50 points within tolerance, {elapsed:.0f} s")
        assert ok


class TestLinearBiasClosedForm:
    """Estimated loss bias for u = x1 equals dt / n_walkers."""

    DT_VALUES = [1e-3, 4e-3, 1.6e-2]
    NS_VALUES = [1, 4, 16]

    def test_nine_cells_and_slopes(self):
        start = time.perf_counter()
        u = linear_function([1.0, 0.0])
        problem = _free_space_problem(None, _zeros)
        estimates, cells_ok = [], True
        for dt in self.DT_VALUES:
            row = []
            for ns in self.NS_VALUES:
                rep = estimate_bias(u, problem, dt, ns, n_outer=2000,
                                    seed=11, dt_step_max=1e-3)
                row.append(rep.estimated_bias)
                cells_ok &= abs(rep.estimated_bias - dt / ns) <= 4.0 * rep.std_error
            estimates.append(row)
        p, q = fit_grid_slopes(self.DT_VALUES, self.NS_VALUES, estimates)
        elapsed = time.perf_counter() - start
        ok = cells_ok and abs(p - 1.0) <= 0.05 and abs(q + 1.0) <= 0.05 \
            and elapsed < 120.0
        _report("linear-solution bias", ok,
                f"9/9 cells within 4 SE: {cells_ok}, slopes "
                f"dt {p:+.3f} / walkers {q:+.3f}, {elapsed:.0f} s")
        assert ok


class TestSineBiasSweep:
    """Bias at the frozen sine solution tracks (dt / n_walkers) E|grad u|^2."""

    DT_VALUES = [1e-3, 4e-3, 1.6e-2]
    NS_VALUES = [1, 4, 16]

    def test_factor_two_per_cell_and_slopes(self):
        start = time.perf_counter()
        u = _sine_u(1)
        problem = poisson_sine_problem(1)
        level = 2.0 * np.pi ** 2
        estimates, cells_ok = [], True
        for dt in self.DT_VALUES:
            row = []
            for ns in self.NS_VALUES:
                rep = estimate_bias(u, problem, dt, ns, n_outer=1000,
                                    seed=13, dt_step_max=1e-4)
                row.append(rep.estimated_bias)
                predicted = (dt / ns) * level
                cells_ok &= predicted / 2.0 <= rep.estimated_bias <= predicted * 2.0
            estimates.append(row)
        p, q = fit_grid_slopes(self.DT_VALUES, self.NS_VALUES, estimates)
        elapsed = time.perf_counter() - start
        ok = cells_ok and abs(p - 1.0) <= 0.15 and abs(q + 1.0) <= 0.15 \
            and elapsed < 600.0
        _report("sine-solution bias", ok,
                f"9/9 cells within factor 2: {cells_ok}, slopes "
                f"dt {p:+.3f} / walkers {q:+.3f}, {elapsed:.0f} s")
        assert ok


class TestConvolutionOracle:
    """Sampled one-step targets agree with the Gaussian quadrature target.

    A single sub-step per horizon makes the sampled force term and the drift
    reweighting match the quadrature side exactly, so the comparison is pure
    Monte Carlo against an independent oracle; the flat 5e-4 allowance only
    covers the quadrature truncation.
    """

    N_WALKERS = 100_000
    DT = 1e-2

    def _cases(self):
        quad_value = lambda p: (np.atleast_2d(p) ** 2).sum(axis=1)
        a = np.array([1.0, -2.0])
        for v in (None, (1.0, -1.0)):
            vv = None if v is None else np.asarray(v)

            def lin_force(p, c=0.0 if vv is None else float(a @ vv)):
                return np.full(len(np.atleast_2d(p)), c)

            def quad_force(p, vv=vv):
                p = np.atleast_2d(p)
                base = np.full(len(p), 2.0)
                return base if vv is None else base + 2.0 * (p @ vv)

            yield ("linear", linear_function(a).value,
                   _free_space_problem(v, lin_force), (-1.0, 1.0))
            yield ("quadratic", quad_value,
                   _free_space_problem(v, quad_force), (-1.0, 1.0))

            sine = poisson_sine_problem(1)
            sine_force = sine.force
            if vv is None:
                drifted = sine
            else:
                def sine_drift_force(p, vv=vv, base=sine_force):
                    return base(p) + sine_product_gradient(p, 1) @ vv
                drifted = PdeProblem(domain=sine.domain, force=sine_drift_force,
                                     boundary=sine.boundary,
                                     drift=lambda p: np.broadcast_to(
                                         vv, np.atleast_2d(p).shape))
            yield ("sine", lambda p: sine_product(p, 1), drifted, (-0.1, 0.1))

    def test_all_solutions_both_drifts(self):
        start = time.perf_counter()
        rng = np.random.default_rng(5)
        worst, all_ok = 0.0, True
        for name, u_fn, problem, box in self._cases():
            starts = rng.uniform(box[0], box[1], size=(10, 2))
            mode = "drifted" if problem.drift is None else "brownian"
            batch = simulate_walkers(starts, problem, u_fn, mode, dt=self.DT,
                                     dt_step=self.DT,
                                     n_walkers=self.N_WALKERS, rng=rng)
            means, variances = martingale_target(batch, u_fn, problem.boundary)
            oracle = np.array([convolution_target(u_fn, x, self.DT, problem)
                               for x in starts])
            tol = 4.0 * np.sqrt(variances / self.N_WALKERS) + 5e-4
            gap = np.abs(means - oracle)
            all_ok &= bool(np.all(gap <= tol))
            worst = max(worst, float((gap / tol).max()))
        elapsed = time.perf_counter() - start
        ok = all_ok and elapsed < 180.0
        _report("convolution oracle", ok,
                f"worst gap {worst:.2f}x tolerance over 6 cases, {elapsed:.0f} s")
        assert ok


class TestFoldedNormalBound:
    """Monte Carlo E|w| never beats the analytic bound, which is tight at 0."""

    def test_grid_and_tightness(self):
        start = time.perf_counter()
        all_ok, tight_ok = True, True
        seed = 0
        for k in (1, 2):
            for mu_norm in (0.0, 0.25, 0.5, 1.0, 2.0):
                for sigma in (0.25, 0.5, 1.0, 2.0, 4.0):
                    mu = np.zeros(k)
                    mu[0] = mu_norm
                    rep = folded_normal_bound_check(mu, sigma, seed=seed)
                    seed += 1
                    all_ok &= rep.satisfied
                    if mu_norm == 0.0 and k == 1:
                        tight_ok &= abs(rep.mc_mean - rep.bound) <= 0.01 * rep.bound
        elapsed = time.perf_counter() - start
        ok = all_ok and tight_ok and elapsed < 30.0
        _report("folded-normal bound", ok,
                f"50 cells satisfied: {all_ok}, tight at the origin: "
                f"{tight_ok}, {elapsed:.0f} s")
        assert ok


class TestTargetOperatorDecay:
    """One application of the smoothing target contracts each sine mode."""

    def test_contraction_at_three_horizons(self):
        start = time.perf_counter()
        u = _sine_u(1)
        problem = PdeProblem(domain=BoxDomain.unit_square(), force=_zeros,
                             boundary=_zeros)
        report = learning_decay_sweep(u, problem, (1e-4, 1e-3, 1e-2),
                                      grid_n=201)
        rate = 4.0 * np.pi ** 2
        worst = 0.0
        for row in report.rows:
            predicted = 1.0 - np.exp(-rate * row.dt)
            worst = max(worst, abs(row.ratio - predicted) / predicted)
        elapsed = time.perf_counter() - start
        ok = worst <= 0.02 and elapsed < 60.0
        _report("target operator decay", ok,
                f"max relative gap {worst:.4f} at 3 horizons, {elapsed:.0f} s")
        assert ok


class TestRerunDeterminism:
    """The same config and seed reproduce every artifact byte for byte.

    Clock readings are the one thing a rerun cannot reproduce, so the
    wall-time column of the metrics file is set aside; everything else is
    compared as raw bytes.
    """

    @staticmethod
    def _without_wall_time(path) -> str:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        return "\n".join(",".join(line.split(",")[:-1]) for line in lines)

    def test_train_sweep_and_analysis_reruns(self, tmp_path):
        start = time.perf_counter()
        results = {}

        config = TrainConfig(dt=1e-2, dt_step_max=2.5e-3, n_walkers=4,
                             n_interior=40, n_boundary=16, iterations=300,
                             seed=7, hidden=[16, 16], eval_grid=51,
                             eval_stride=100)
        for name in ("run_a", "run_b"):
            execute_run(config, tmp_path / name)
        results["metrics modulo timing"] = (
            self._without_wall_time(tmp_path / "run_a" / "metrics.csv")
            == self._without_wall_time(tmp_path / "run_b" / "metrics.csv"))
        results["checkpoint"] = (
            (tmp_path / "run_a" / "checkpoint.json").read_bytes()
            == (tmp_path / "run_b" / "checkpoint.json").read_bytes())

        base = TrainConfig(dt_step_max=5e-3, n_walkers=2, n_interior=20,
                           n_boundary=8, iterations=50, seed=3, hidden=[8, 8],
                           eval_grid=21, eval_stride=25)
        summaries = []
        for name in ("sweep_a", "sweep_b"):
            spec = SweepSpec(dt_values=[5e-3, 1e-2], ns_values=[2],
                                     trials=1, base=base,
                                     output_dir=str(tmp_path / name))
            with open(run_sweep(spec), "rb") as fh:
                summaries.append(fh.read())
        results["sweep summary"] = summaries[0] == summaries[1]

        reports = []
        for name in ("decay_a", "decay_b"):
            decay_analysis(tmp_path / name, dt_values=(1e-3, 1e-2),
                                   grid_n=101)
            reports.append((tmp_path / name / "decay_report.csv").read_bytes())
        results["analysis report"] = reports[0] == reports[1]

        elapsed = time.perf_counter() - start
        ok = all(results.values())
        _report("rerun determinism", ok,
                ", ".join(f"{k}: {'ok' if v else 'DIFFERS'}"
                          for k, v in results.items()) + f", {elapsed:.0f} s")
        assert ok


class TestDeskScaleTraining:
    """Short training runs reproduce the qualitative horizon/walker trade-off.

    Four runs at the reduced scale (2e4 iterations, 3x64 relu net): the
    medium-horizon run must actually solve the problem, the near-zero
    horizon must degrade it by at least 2x, and at the medium horizon a
    single walker per point must do worse than 400. Learning rate, batch
    sizes, and sub-step are run-local tuning knobs; horizon, walker count,
    iteration budget, and architecture are the quantities under test.
    """

    COMMON = dict(m=1, iterations=20_000, hidden=[64, 64, 64],
                  activation="relu", mode="brownian", n_boundary=128,
                  eval_grid=201, eval_stride=2000, seed=0)
    RUNS = {
        "medium horizon": dict(dt=5e-3, dt_step_max=2.5e-4, n_walkers=40,
                               n_interior=150, learning_rate=3e-4),
        "tiny horizon": dict(dt=1e-5, dt_step_max=1e-5, n_walkers=40,
                             n_interior=150, learning_rate=3e-4),
        "single walker": dict(dt=5e-3, dt_step_max=2.5e-4, n_walkers=1,
                              n_interior=50, learning_rate=1.5e-3),
        "many walkers": dict(dt=5e-3, dt_step_max=2.5e-4, n_walkers=400,
                             n_interior=50, learning_rate=1.5e-3),
    }

    def test_error_threshold_and_orderings(self):
        start = time.perf_counter()
        errors = {}
        for name, overrides in self.RUNS.items():
            _, rows = train(TrainConfig(**self.COMMON, **overrides))
            errors[name] = rows[-1].relative_l2_error
            print(f"    {name}: relative L2 error {errors[name]:.3f}",
                  flush=True)
        elapsed = time.perf_counter() - start
        threshold = errors["medium horizon"] < 0.1
        horizon = errors["tiny horizon"] >= 2.0 * errors["medium horizon"]
        walkers = errors["single walker"] > errors["many walkers"]
        ok = threshold and horizon and walkers and elapsed < 3600.0
        _report("desk-scale training", ok,
                f"medium {errors['medium horizon']:.3f} (< 0.1: {threshold}), "
                f"tiny/medium {errors['tiny horizon'] / errors['medium horizon']:.1f}x "
                f"(>= 2: {horizon}), single {errors['single walker']:.3f} > "
                f"many {errors['many walkers']:.3f}: {walkers}, "
                f"{elapsed / 60.0:.0f} min")
        assert ok
