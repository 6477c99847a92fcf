from .errors import (
    MpidError,
    ConfigError,
    NumericalFault,
    NonInformativeObservation,
    RelaxationWindowError,
    SpectralConvergenceError,
)
from .rng import splitmix64, derive_trial_seed, make_rng
from .counting import MulCounter
from .inputs import read_spec, apply_overrides, parse_list
