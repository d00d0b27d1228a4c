"""Toy-scale neural target-speaker extraction over exported scene data."""

from .data import SceneSet
from .infer import infer
from .loss import si_sdr_db, swap_loss
from .model import NetConfig, TseNet, VARIANTS
from .train import load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "NetConfig",
    "SceneSet",
    "TseNet",
    "VARIANTS",
    "infer",
    "load_checkpoint",
    "si_sdr_db",
    "swap_loss",
    "train",
    "__version__",
]
