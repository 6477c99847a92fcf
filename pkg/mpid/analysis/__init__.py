from .spectral import (
    DenseOperator,
    OffDiagonalGramOperator,
    ExactSaOperator,
    AffineOperator,
    power_iteration,
    extreme_eigenvalues,
    spectral_radius,
)
from .fixed_point import (
    ConvergencePrediction,
    solve_variance_fixed_point,
    predict_convergence,
    check_mean_convergence,
    gmpid_limit_formula,
)
from .classical import classical_iterate, jacobi_preset, richardson_preset, run_classical_detector
