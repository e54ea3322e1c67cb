"""Renyi accounting, generalization bounds and membership attacks for SGLD-trained networks."""

from .accountant import RenyiLedger, StepRecord, subsampled_gaussian_renyi, theorem1_total
from .bounds import BoundInputs, info_gen_bound, stability_gen_bound
from .numerics import RngStream
from .sgld import TrainingConfig, train

__version__ = "0.1.0"

__all__ = [
    "BoundInputs",
    "RenyiLedger",
    "RngStream",
    "StepRecord",
    "TrainingConfig",
    "info_gen_bound",
    "stability_gen_bound",
    "subsampled_gaussian_renyi",
    "theorem1_total",
    "train",
]
