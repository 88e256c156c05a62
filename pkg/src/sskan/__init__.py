"""State-space Kolmogorov-Arnold networks for nonlinear system identification."""

from .errors import SsKanError
from .kan import KanNetwork, init_network, network_forward
from .spline import SplineBasis, eval_basis, make_uniform_basis
from .ssmodel import CascadeModel, LinearSS, SsKanModel, cascade_rollout, rollout
from .trainer import Normalization, TrainConfig, TrainReport, normalize_fit, rmse, train

__version__ = "0.1.0"

__all__ = [
    "CascadeModel",
    "KanNetwork",
    "LinearSS",
    "Normalization",
    "SplineBasis",
    "SsKanError",
    "SsKanModel",
    "TrainConfig",
    "TrainReport",
    "cascade_rollout",
    "eval_basis",
    "init_network",
    "make_uniform_basis",
    "network_forward",
    "normalize_fit",
    "rmse",
    "rollout",
    "train",
]
