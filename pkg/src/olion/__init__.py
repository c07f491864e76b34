"""OLion: sign-after-orthogonalization optimizer, baselines, and theory diagnostics."""

from .errors import (ConfigInvalid, CorruptCheckpoint, InsufficientGrid, InvalidDim,
                     InvalidRank, NonFiniteLoss, OlionError, OutOfRange, ShapeMismatch,
                     UnknownBlock, VersionMismatch, ZeroMatrix)
from .optimizers import HyperParams, LrSchedule, Optimizer, default_hyperparams

__version__ = "0.1.0"

__all__ = [
    "ConfigInvalid", "CorruptCheckpoint", "HyperParams", "InsufficientGrid", "InvalidDim",
    "InvalidRank", "LrSchedule", "NonFiniteLoss", "OlionError", "Optimizer", "OutOfRange",
    "ShapeMismatch", "UnknownBlock", "VersionMismatch", "ZeroMatrix", "default_hyperparams",
]
