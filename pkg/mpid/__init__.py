from .model.system import SystemConfig, ChannelInstance, PriorBelief, Observation, generate_instance
from .model.messages import GaussianMessage, combine_extrinsic, mse
from .detection.lmmse import lmmse_detect, predict_mmse_mse
from .detection.gmpid import IterationOptions, solve_variances, gmpid_run
from .detection.sagmpid import choose_relaxation, sa_gmpid_run
from .analysis.fixed_point import solve_variance_fixed_point, predict_convergence, check_mean_convergence, gmpid_limit_formula
from .analysis.spectral import extreme_eigenvalues, spectral_radius
from .analysis.classical import classical_iterate, run_classical_detector
from .harness.experiment import ExperimentSpec, run_experiment, predict, sweep
