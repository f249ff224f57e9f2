"""Derivative-free martingale training for elliptic boundary value problems."""

__version__ = "0.1.0"

from .nn import (ACTIVATIONS, AdamState, GradientSet, Network, adam_step,
                 backprop, forward, grad_input, init_adam, init_network,
                 load_checkpoint, save_checkpoint)
from .walkers import (BoxDomain, PdeProblem, RngStream, WalkerBatch,
                      WalkerRecord, derive_time_step, detect_exit,
                      poisson_sine_problem, simulate_walkers,
                      step_euler_maruyama)
from .targets import (GaussianKernel, TargetMean, TargetSample,
                      apply_target_operator, convolution_target,
                      girsanov_target, martingale_target, plain_target,
                      target_statistics, target_values)
from .training import (MetricsRow, TrainConfig, boundary_loss, interior_loss,
                       relative_l2_error, sample_boundary, sample_interior,
                       train, train_step, write_metrics_csv)
from .analysis import (AnalyticFunction, BiasReport, NetworkFunction,
                       chebyshev_check, estimate_bias,
                       folded_normal_bound_check, learning_bound_check,
                       learning_decay_sweep, linear_function)
from .harness import (RunManifest, SweepSpec, cell_seed, evaluate_checkpoint,
                      execute_run, load_config, run_analysis, run_sweep,
                      save_config)
