from .lmmse import LmmseResult, lmmse_detect, predict_mmse_mse
from .gmpid import (
    IterationOptions,
    MessageState,
    DetectionReport,
    VarianceSchedule,
    sum_node_update,
    variable_node_update,
    decide,
    extrinsic,
    solve_variances,
    gmpid_run,
)
from .sagmpid import (
    RelaxationChoice,
    ScaledChannel,
    choose_relaxation,
    sa_sum_node_update,
    sa_variable_node_update,
    sa_decide,
    sa_extrinsic,
    sa_gmpid_run,
)
