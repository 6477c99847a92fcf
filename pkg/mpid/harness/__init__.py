from .experiment import (
    ExperimentSpec,
    TrialRecord,
    ExperimentResult,
    run_trial,
    run_experiment,
    summarize,
    predict,
    prediction_row,
    sweep,
    write_csv,
)
from .cli import main
