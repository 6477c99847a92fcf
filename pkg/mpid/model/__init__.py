from .system import (
    SystemConfig,
    ChannelInstance,
    PriorBelief,
    Observation,
    generate_instance,
    check_dimensions,
)
from .messages import GaussianMessage, combine_extrinsic, gaussian_product, mse
