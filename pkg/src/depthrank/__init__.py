"""Learning pixel-wise depth from ordinal annotations.

Subpackages: tensor (autodiff engine), hourglass (network), losses
(ranking and log-depth objectives), sampling (pair queries), synthetic
(scene oracle), metrics (ordinal + metric evaluation), crowd (annotation
protocol), train (optimization loop), service (HTTP facade), cli.
"""

__version__ = "0.1.0"

from .hourglass import HourglassConfig, Model, desk_config
from .sampling import PairQuery, SamplerConfig
from .tensor import Tensor

__all__ = [
    "HourglassConfig",
    "Model",
    "PairQuery",
    "SamplerConfig",
    "Tensor",
    "desk_config",
    "__version__",
]
